"""drpfuse: dual-branch transformer-fusion drug response prediction pipeline."""

__version__ = "0.1.0"
