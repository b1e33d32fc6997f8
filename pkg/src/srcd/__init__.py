"""Super-resolution change detection for bi-temporal images with mismatched resolutions."""

__version__ = "0.1.0"
