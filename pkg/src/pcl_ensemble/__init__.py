"""Neural ensembles for patronizing and condescending language (PCL) detection."""

__version__ = "0.1.0"
