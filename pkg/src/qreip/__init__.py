"""Interior-point optimization over the quantum relative entropy cone."""

__version__ = "0.1.0"
