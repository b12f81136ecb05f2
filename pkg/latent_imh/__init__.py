"""Latent-IMH: independence Metropolis-Hastings for Bayesian linear inverse problems"""

__version__ = "1.0.0"
