"""Model-predictive brushstroke planning on a simulated grayscale canvas."""

__version__ = "0.1.0"
