"""hp finite element spaces, discrete interpolation norms and polynomial liftings."""

__version__ = "0.1.0"
