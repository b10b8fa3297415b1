"""Balance-aware neighbor sampling for fair message passing in GCNs."""

__version__ = "0.1.0"
