"""Structure-encoding auxiliary pre-training on procedural panorama worlds."""

__version__ = "0.1.0"
