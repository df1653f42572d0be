"""Intensity-distribution supervision for small-lesion segmentation in 3D volumes."""

__version__ = "0.1.0"
