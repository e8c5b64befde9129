"""Discrete-time data assimilation: smoothers, samplers, variational methods and filters."""

__version__ = "0.1.0"
