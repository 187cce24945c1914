"""patchbench: object-centricity and behavioral-alignment benchmarking for
patch-level vision representations."""

__version__ = "0.1.0"
