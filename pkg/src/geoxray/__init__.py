"""Weighted geodesic X-ray transform of symmetric tensor fields on simple
discs, range-adapted Sobolev norms on sinograms, and experiments."""

__version__ = "0.1.0"
