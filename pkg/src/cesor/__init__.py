"""Risk-averse policy gradients with soft risk scheduling and cross-entropy context sampling."""
__version__ = "0.1.0"
