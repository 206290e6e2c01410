"""Onset of phototactic bioconvection in a rotating, isotropically scattering algal suspension."""

__version__ = "0.1.0"
