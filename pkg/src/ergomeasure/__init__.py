"""Certified invariant measures of randomly perturbed torus maps."""

__version__ = "0.1.0"
