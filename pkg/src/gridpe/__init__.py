"""gridpe: a positional-encoding laboratory for ARC-style grid tasks."""

__version__ = "0.1.0"
