"""RGB-NIR cross-modality image registration toolkit."""

__version__ = "0.1.0"
