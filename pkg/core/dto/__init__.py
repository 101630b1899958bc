"""Data Transfer Objects shared across ufcl-core modules."""

from .assignment import OUTLIER, ClusterAssignment
from .report import REPORT_FIELDS, EpochReport

__all__ = [
    "OUTLIER",
    "ClusterAssignment",
    "REPORT_FIELDS",
    "EpochReport",
]
