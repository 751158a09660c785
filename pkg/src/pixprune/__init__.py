"""Loss-gradient pixel pruning for multi-view image-based rendering."""

__version__ = "0.1.0"
