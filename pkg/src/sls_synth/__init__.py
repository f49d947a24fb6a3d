"""Output-feedback trajectory and controller synthesis with robust tubes."""

__version__ = "0.1.0"
