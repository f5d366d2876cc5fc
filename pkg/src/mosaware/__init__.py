"""Content-aware MOS prediction toolkit for synthetic speech."""

__version__ = "0.1.0"
