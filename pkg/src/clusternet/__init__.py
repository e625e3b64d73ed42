"""Two-stage spatio-temporal small-object detection for wide area motion imagery."""

__version__ = "0.1.0"
