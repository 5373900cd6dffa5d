"""Random periodic solutions of semilinear SPDEs with diagonal multiplicative noise."""
__version__ = "0.1.0"
