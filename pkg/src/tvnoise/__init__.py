"""Blended white/correlated noise diffusion: masks, covariance factors, sampling, training."""

__version__ = "0.1.0"
