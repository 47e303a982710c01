"""Live federated queries over contractor databases with readCheck validators."""

__version__ = "0.1.0"
