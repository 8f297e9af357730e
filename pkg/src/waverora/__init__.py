"""Wavelet-domain multivariate forecasting with routed rotary attention."""

__version__ = "0.1.0"
