"""Desk-scale simulator of hierarchical federated learning with knowledge
distillation for 6-class network intrusion detection."""

__version__ = "0.1.0"
