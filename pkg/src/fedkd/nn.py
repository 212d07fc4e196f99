"""From-scratch 1D-CNN engine for the teacher and student detection models.

Everything is plain NumPy. A model is an architecture (ordered layer specs)
plus a flat, ordered list of parameter tensors (WeightVector); that list is
the unit of all federated communication and the schema of the binary weight
blob. Forward passes return raw logits; softmax is applied by `predict` and
by the loss functions, never inside a layer.

Conventions:
    inputs        [batch, length, channels], channels-last
    conv kernels  [kernel, in_channels, out_channels], stride 1, valid padding
    pool          window 2, stride 2 (floor on odd lengths)
    dense weights [in, out]

Training runs in float32; `to_dtype` casts a model to float64 for the
finite-difference checks in the test suite.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FormatError, NumericError, UsageError

WEIGHT_MAGIC = b"FKDW"
WEIGHT_FORMAT_VERSION = 1
WEIGHT_HEADER_BYTES = 16
BYTES_PER_PARAM = 4

NUM_CLASSES = 6


class LayerKind(Enum):
    CONV1D = "conv1d"
    MAXPOOL1D = "maxpool1d"
    FLATTEN = "flatten"
    DENSE_RELU = "dense_relu"
    DENSE_SOFTMAX = "dense_softmax"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack. `units` is out-channels for conv layers and
    output width for dense layers; pool and flatten layers carry no size."""

    kind: LayerKind
    units: int = 0
    kernel_size: int = 0
    stride: int = 1


def conv1d(units: int, kernel_size: int = 3) -> LayerSpec:
    return LayerSpec(LayerKind.CONV1D, units=units, kernel_size=kernel_size, stride=1)


def maxpool1d() -> LayerSpec:
    return LayerSpec(LayerKind.MAXPOOL1D, kernel_size=2, stride=2)


def flatten() -> LayerSpec:
    return LayerSpec(LayerKind.FLATTEN)


def dense_relu(units: int) -> LayerSpec:
    return LayerSpec(LayerKind.DENSE_RELU, units=units)


def dense_softmax(units: int) -> LayerSpec:
    return LayerSpec(LayerKind.DENSE_SOFTMAX, units=units)


@dataclass(frozen=True)
class ModelArch:
    """Layer stack plus input geometry. Validated on construction; shape
    propagation must stay positive and the stack must end in a softmax head
    with `num_classes` units."""

    input_length: int
    layers: tuple[LayerSpec, ...]
    input_channels: int = 1
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.input_length < 1 or self.input_channels < 1:
            raise ConfigError("input geometry must be positive")
        if not self.layers:
            raise ConfigError("architecture has no layers")
        last = self.layers[-1]
        if last.kind is not LayerKind.DENSE_SOFTMAX:
            raise ConfigError("terminal layer must be a softmax head")
        if last.units != self.num_classes:
            raise ConfigError(
                f"softmax head has {last.units} units, expected {self.num_classes}"
            )
        self.shape_trace()  # raises on any inconsistent layer

    def shape_trace(self) -> list[tuple[int, int] | int]:
        """Output shape after each layer: (length, channels) tuples for
        conv/pool, flat widths for flatten/dense."""
        trace: list[tuple[int, int] | int] = []
        shape: tuple[int, int] | int = (self.input_length, self.input_channels)
        for i, spec in enumerate(self.layers):
            if spec.kind is LayerKind.CONV1D:
                if not isinstance(shape, tuple):
                    raise ConfigError(f"layer {i}: conv applied to flat input")
                if spec.stride != 1 or spec.kernel_size < 1:
                    raise ConfigError(f"layer {i}: conv must use stride 1, kernel >= 1")
                length = shape[0] - spec.kernel_size + 1
                if length < 1:
                    raise ConfigError(f"layer {i}: conv output length {length} < 1")
                shape = (length, spec.units)
            elif spec.kind is LayerKind.MAXPOOL1D:
                if not isinstance(shape, tuple):
                    raise ConfigError(f"layer {i}: pool applied to flat input")
                if spec.kernel_size != 2 or spec.stride != 2:
                    raise ConfigError(f"layer {i}: pool must use window 2, stride 2")
                length = shape[0] // 2
                if length < 1:
                    raise ConfigError(f"layer {i}: pool output length {length} < 1")
                shape = (length, shape[1])
            elif spec.kind is LayerKind.FLATTEN:
                if not isinstance(shape, tuple):
                    raise ConfigError(f"layer {i}: flatten applied to flat input")
                shape = shape[0] * shape[1]
            elif spec.kind in (LayerKind.DENSE_RELU, LayerKind.DENSE_SOFTMAX):
                if isinstance(shape, tuple):
                    raise ConfigError(f"layer {i}: dense layers need a flatten first")
                if spec.units < 1:
                    raise ConfigError(f"layer {i}: dense layer needs units >= 1")
                shape = spec.units
            else:  # pragma: no cover
                raise ConfigError(f"layer {i}: unknown kind {spec.kind}")
            trace.append(shape)
        return trace

    def tensor_shapes(self) -> list[tuple[int, ...]]:
        """Ordered shapes of the parameter tensors (weight then bias per
        parameterised layer)."""
        shapes: list[tuple[int, ...]] = []
        length, channels = self.input_length, self.input_channels
        width = None
        for spec in self.layers:
            if spec.kind is LayerKind.CONV1D:
                shapes.append((spec.kernel_size, channels, spec.units))
                shapes.append((spec.units,))
                length, channels = length - spec.kernel_size + 1, spec.units
            elif spec.kind is LayerKind.MAXPOOL1D:
                length //= 2
            elif spec.kind is LayerKind.FLATTEN:
                width = length * channels
            else:
                shapes.append((width, spec.units))
                shapes.append((spec.units,))
                width = spec.units
        return shapes


def teacher_arch(input_length: int = 30) -> ModelArch:
    """Large model: 32/64 conv filters, 128-unit hidden dense."""
    return ModelArch(
        input_length=input_length,
        layers=(
            conv1d(32), maxpool1d(), conv1d(64), maxpool1d(),
            flatten(), dense_relu(128), dense_softmax(NUM_CLASSES),
        ),
    )


def student_arch(input_length: int = 30) -> ModelArch:
    """Compact model deployed on clients: 16/32 conv filters, 64-unit dense."""
    return ModelArch(
        input_length=input_length,
        layers=(
            conv1d(16), maxpool1d(), conv1d(32), maxpool1d(),
            flatten(), dense_relu(64), dense_softmax(NUM_CLASSES),
        ),
    )


def param_count(arch: ModelArch) -> tuple[list[int], int]:
    """Per-layer and total parameter counts by the standard formulas:
    conv (kernel * in_channels + 1) * out_channels, dense (in + 1) * out,
    pool and flatten zero."""
    counts = []
    length, channels = arch.input_length, arch.input_channels
    width = None
    for spec in arch.layers:
        if spec.kind is LayerKind.CONV1D:
            counts.append((spec.kernel_size * channels + 1) * spec.units)
            length, channels = length - spec.kernel_size + 1, spec.units
        elif spec.kind is LayerKind.MAXPOOL1D:
            counts.append(0)
            length //= 2
        elif spec.kind is LayerKind.FLATTEN:
            counts.append(0)
            width = length * channels
        else:
            counts.append((width + 1) * spec.units)
            width = spec.units
    return counts, sum(counts)


# Per-layer parameter counts as published for this architecture pair. Two
# entries (and therefore the totals) disagree with the standard formulas
# above; `conformance_report` lists both side by side. The formula values
# are what the implementation actually allocates.
PUBLISHED_PARAM_COUNTS = {
    "teacher": (128, 0, 6208, 0, 0, 49408, 774),
    "student": (64, 0, 1600, 0, 0, 12352, 390),
}
PUBLISHED_PARAM_TOTALS = {"teacher": 56518, "student": 14406}

PUBLISHED_SHAPE_TRACES = {
    "teacher": [(28, 32), (14, 32), (12, 64), (6, 64), 384, 128, 6],
    "student": [(28, 16), (14, 16), (12, 32), (6, 32), 192, 64, 6],
}


def conformance_report() -> str:
    """Side-by-side table of computed vs published per-layer parameter
    counts and output shapes for the canonical teacher/student pair."""
    lines = []
    for name, arch in (("teacher", teacher_arch()), ("student", student_arch())):
        counts, total = param_count(arch)
        trace = arch.shape_trace()
        pub_counts = PUBLISHED_PARAM_COUNTS[name]
        pub_trace = PUBLISHED_SHAPE_TRACES[name]
        lines.append(f"{name} (input length {arch.input_length})")
        lines.append(f"  {'layer':<14}{'shape':>10}{'published':>11}{'params':>9}{'published':>11}")
        for spec, shp, cnt, pc, pt in zip(arch.layers, trace, counts, pub_counts, pub_trace):
            mark = "" if cnt == pc else "  <- differs"
            lines.append(
                f"  {spec.kind.value:<14}{str(shp):>10}{str(pt):>11}{cnt:>9}{pc:>11}{mark}"
            )
        pub_total = PUBLISHED_PARAM_TOTALS[name]
        mark = "" if total == pub_total else "  <- differs"
        lines.append(f"  {'total':<14}{'':>10}{'':>11}{total:>9}{pub_total:>11}{mark}")
    return "\n".join(lines)


@dataclass
class WeightVector:
    """Flat, ordered parameter tensors for one architecture. Two vectors for
    the same arch are element-wise comparable and aggregatable."""

    tensors: list[np.ndarray]

    @property
    def total_params(self) -> int:
        return sum(t.size for t in self.tensors)

    @property
    def dtype(self):
        return self.tensors[0].dtype if self.tensors else np.dtype(np.float32)

    def copy(self) -> "WeightVector":
        return WeightVector([t.copy() for t in self.tensors])

    def astype(self, dtype) -> "WeightVector":
        return WeightVector([t.astype(dtype) for t in self.tensors])

    def shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for t in self.tensors]


def zeros_like_weights(arch: ModelArch, dtype=np.float32) -> WeightVector:
    return WeightVector([np.zeros(s, dtype=dtype) for s in arch.tensor_shapes()])


def init_weights(arch: ModelArch, rng: np.random.Generator, dtype=np.float32) -> WeightVector:
    """Glorot-uniform weights, zero biases. Conv fans count the receptive
    field: fan_in = kernel * in_channels, fan_out = kernel * out_channels."""
    tensors = []
    length, channels = arch.input_length, arch.input_channels
    width = None
    for spec in arch.layers:
        if spec.kind is LayerKind.CONV1D:
            fan_in = spec.kernel_size * channels
            fan_out = spec.kernel_size * spec.units
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            shape = (spec.kernel_size, channels, spec.units)
            tensors.append(rng.uniform(-limit, limit, shape).astype(dtype))
            tensors.append(np.zeros(spec.units, dtype=dtype))
            length, channels = length - spec.kernel_size + 1, spec.units
        elif spec.kind is LayerKind.MAXPOOL1D:
            length //= 2
        elif spec.kind is LayerKind.FLATTEN:
            width = length * channels
        else:
            limit = np.sqrt(6.0 / (width + spec.units))
            tensors.append(rng.uniform(-limit, limit, (width, spec.units)).astype(dtype))
            tensors.append(np.zeros(spec.units, dtype=dtype))
            width = spec.units
    return WeightVector(tensors)


@dataclass
class AdamState:
    """Bias-corrected Adam moments, shaped like the weights they update."""

    first_moment: WeightVector
    second_moment: WeightVector
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class ModelState:
    arch: ModelArch
    weights: WeightVector
    optimizer: AdamState

    def copy(self) -> "ModelState":
        opt = AdamState(
            first_moment=self.optimizer.first_moment.copy(),
            second_moment=self.optimizer.second_moment.copy(),
            step_count=self.optimizer.step_count,
            learning_rate=self.optimizer.learning_rate,
            beta1=self.optimizer.beta1,
            beta2=self.optimizer.beta2,
            epsilon=self.optimizer.epsilon,
        )
        return ModelState(self.arch, self.weights.copy(), opt)


@dataclass
class InputBatch:
    """Preprocessed features in [batch, input_length, 1] with class labels."""

    features: np.ndarray
    labels: np.ndarray


def new_model(
    arch: ModelArch,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    learning_rate: float = 0.001,
    dtype=np.float32,
) -> ModelState:
    if rng is None:
        rng = np.random.default_rng(seed)
    weights = init_weights(arch, rng, dtype=dtype)
    return ModelState(arch, weights, fresh_adam(arch, learning_rate, dtype=dtype))


def fresh_adam(arch: ModelArch, learning_rate: float = 0.001, dtype=np.float32) -> AdamState:
    return AdamState(
        first_moment=zeros_like_weights(arch, dtype=dtype),
        second_moment=zeros_like_weights(arch, dtype=dtype),
        learning_rate=learning_rate,
    )


def load_weights(model: ModelState, weights: WeightVector, reset_optimizer: bool = True) -> None:
    """Install a copy of `weights` into the model; by default the optimizer
    restarts, since incoming weights invalidate the old moments."""
    if weights.shapes() != model.arch.tensor_shapes():
        raise ConfigError("weight shapes do not match the model architecture")
    model.weights = weights.copy()
    if reset_optimizer:
        model.optimizer = fresh_adam(
            model.arch, model.optimizer.learning_rate, dtype=model.weights.dtype
        )


def to_dtype(model: ModelState, dtype) -> ModelState:
    opt = model.optimizer
    return ModelState(
        model.arch,
        model.weights.astype(dtype),
        AdamState(
            opt.first_moment.astype(dtype),
            opt.second_moment.astype(dtype),
            opt.step_count,
            opt.learning_rate,
            opt.beta1,
            opt.beta2,
            opt.epsilon,
        ),
    )


@dataclass
class ForwardCache:
    """Activations retained by `forward` for the matching `backward` call."""

    arch: ModelArch
    batch_size: int
    layer_data: list


def _batch_features(batch, arch: ModelArch, dtype) -> np.ndarray:
    x = batch.features if isinstance(batch, InputBatch) else np.asarray(batch)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1] != arch.input_length or x.shape[2] != arch.input_channels:
        raise ConfigError(
            f"input shape {x.shape} does not match architecture "
            f"[batch, {arch.input_length}, {arch.input_channels}]"
        )
    return np.ascontiguousarray(x, dtype=dtype)


def forward(model: ModelState, batch) -> tuple[np.ndarray, ForwardCache]:
    """Run the layer stack; returns logits [batch, num_classes] and the
    cache needed by `backward`."""
    arch = model.arch
    x = _batch_features(batch, arch, model.weights.dtype)
    tensors = model.weights.tensors
    data: list = []
    t = 0
    for spec in arch.layers:
        if spec.kind is LayerKind.CONV1D:
            w, b = tensors[t], tensors[t + 1]
            t += 2
            windows = sliding_window_view(x, spec.kernel_size, axis=1)
            y = np.einsum("nlci,ico->nlo", windows, w) + b
            data.append(x)
            x = y
        elif spec.kind is LayerKind.MAXPOOL1D:
            n, length, channels = x.shape
            half = length // 2
            pairs = x[:, : 2 * half, :].reshape(n, half, 2, channels)
            idx = pairs.argmax(axis=2)  # first index wins ties
            data.append((idx, x.shape))
            x = np.take_along_axis(pairs, idx[:, :, None, :], axis=2)[:, :, 0, :]
        elif spec.kind is LayerKind.FLATTEN:
            data.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif spec.kind is LayerKind.DENSE_RELU:
            w, b = tensors[t], tensors[t + 1]
            t += 2
            z = x @ w + b
            data.append((x, z))
            x = np.maximum(z, 0)
        else:  # DENSE_SOFTMAX: linear layer, softmax applied by the consumer
            w, b = tensors[t], tensors[t + 1]
            t += 2
            data.append(x)
            x = x @ w + b
    return x, ForwardCache(arch=arch, batch_size=x.shape[0], layer_data=data)


def backward(model: ModelState, cache: ForwardCache, logit_gradient: np.ndarray) -> WeightVector:
    """Backpropagate a gradient on the logits; returns per-tensor gradients
    in weight order. The cache must come from a `forward` on this arch."""
    arch = model.arch
    if not isinstance(cache, ForwardCache) or cache.arch != arch:
        raise UsageError("cache does not belong to this model's architecture")
    if len(cache.layer_data) != len(arch.layers):
        raise UsageError("cache is incomplete")
    g = np.asarray(logit_gradient, dtype=model.weights.dtype)
    if g.shape != (cache.batch_size, arch.num_classes):
        raise UsageError(
            f"logit gradient shape {g.shape} does not match "
            f"[{cache.batch_size}, {arch.num_classes}]"
        )

    tensors = model.weights.tensors
    grads: list[np.ndarray | None] = [None] * len(tensors)
    # tensor slot of each parameterised layer, walked in reverse
    slot = len(tensors)
    for spec, layer_cache in zip(reversed(arch.layers), reversed(cache.layer_data)):
        if spec.kind is LayerKind.CONV1D:
            slot -= 2
            w = tensors[slot]
            x = layer_cache
            windows = sliding_window_view(x, spec.kernel_size, axis=1)
            grads[slot] = np.einsum("nlci,nlo->ico", windows, g)
            grads[slot + 1] = g.sum(axis=(0, 1))
            dx = np.zeros_like(x)
            l_out = g.shape[1]
            for i in range(spec.kernel_size):
                dx[:, i : i + l_out, :] += np.einsum("nlo,co->nlc", g, w[i])
            g = dx
        elif spec.kind is LayerKind.MAXPOOL1D:
            idx, in_shape = layer_cache
            n, length, channels = in_shape
            half = length // 2
            dpairs = np.zeros((n, half, 2, channels), dtype=g.dtype)
            np.put_along_axis(dpairs, idx[:, :, None, :], g[:, :, None, :], axis=2)
            dx = np.zeros(in_shape, dtype=g.dtype)
            dx[:, : 2 * half, :] = dpairs.reshape(n, 2 * half, channels)
            g = dx
        elif spec.kind is LayerKind.FLATTEN:
            g = g.reshape(layer_cache)
        elif spec.kind is LayerKind.DENSE_RELU:
            slot -= 2
            w = tensors[slot]
            x, z = layer_cache
            gz = g * (z > 0)
            grads[slot] = x.T @ gz
            grads[slot + 1] = gz.sum(axis=0)
            g = gz @ w.T
        else:  # DENSE_SOFTMAX
            slot -= 2
            w = tensors[slot]
            x = layer_cache
            grads[slot] = x.T @ g
            grads[slot + 1] = g.sum(axis=0)
            g = g @ w.T
    return WeightVector(grads)  # type: ignore[arg-type]


def adam_step(model: ModelState, gradients: WeightVector) -> ModelState:
    """One in-place bias-corrected Adam update; increments the step count.
    Rejects non-finite gradients, naming the offending tensor."""
    weights = model.weights.tensors
    grads = gradients.tensors
    if [g.shape for g in grads] != [w.shape for w in weights]:
        raise ConfigError("gradient shapes do not match the weights")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {i}")
    opt = model.optimizer
    opt.step_count += 1
    bias1 = 1.0 - opt.beta1 ** opt.step_count
    bias2 = 1.0 - opt.beta2 ** opt.step_count
    for w, g, m, v in zip(weights, grads, opt.first_moment.tensors, opt.second_moment.tensors):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * np.square(g)
        w -= opt.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + opt.epsilon)
    return model


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def predict(model: ModelState, batch) -> tuple[np.ndarray, np.ndarray]:
    """Class indices and probability rows (softmax at temperature 1).
    Argmax breaks ties toward the lowest class index."""
    logits, _ = forward(model, batch)
    probs = softmax(logits)
    return probs.argmax(axis=1), probs


def serialize_weights(weights: WeightVector) -> bytes:
    """16-byte header (magic, version, tensor count, total params, all
    little-endian u32 after the magic) followed by raw float32 values in
    architecture order. Shapes are not encoded; the arch is the schema."""
    header = WEIGHT_MAGIC + struct.pack(
        "<III", WEIGHT_FORMAT_VERSION, len(weights.tensors), weights.total_params
    )
    body = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for t in weights.tensors)
    return header + body


def deserialize_weights(blob: bytes, arch: ModelArch) -> WeightVector:
    if len(blob) < WEIGHT_HEADER_BYTES:
        raise FormatError("blob shorter than the 16-byte header")
    if blob[:4] != WEIGHT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    version, tensor_count, total_params = struct.unpack("<III", blob[4:16])
    if version != WEIGHT_FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    shapes = arch.tensor_shapes()
    expected_total = sum(int(np.prod(s)) for s in shapes)
    if tensor_count != len(shapes) or total_params != expected_total:
        raise FormatError(
            f"blob describes {tensor_count} tensors / {total_params} params, "
            f"architecture needs {len(shapes)} / {expected_total}"
        )
    if len(blob) != WEIGHT_HEADER_BYTES + BYTES_PER_PARAM * expected_total:
        raise FormatError("blob length does not match the declared parameter count")
    flat = np.frombuffer(blob, dtype="<f4", offset=WEIGHT_HEADER_BYTES)
    tensors = []
    pos = 0
    for s in shapes:
        size = int(np.prod(s))
        tensors.append(flat[pos : pos + size].reshape(s).astype(np.float32))
        pos += size
    return WeightVector(tensors)


def weight_blob_bytes(total_params: int) -> int:
    return WEIGHT_HEADER_BYTES + BYTES_PER_PARAM * total_params
