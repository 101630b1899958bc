"""Ports (interfaces) for ufcl-core dependency inversion.

These abstract interfaces define how the training loop obtains pseudo labels,
allowing different clustering backends to be swapped in.
"""

from .clusterer import Clusterer

__all__ = [
    "Clusterer",
]
