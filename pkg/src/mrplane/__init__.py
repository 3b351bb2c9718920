"""Software model of a map-reduce inference block inside a switch data plane."""

__version__ = "0.1.0"
