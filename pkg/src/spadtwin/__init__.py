"""Digital twin of a wide-field NV-diamond sensor read out by a gated SPAD array."""

__version__ = "0.1.0"
