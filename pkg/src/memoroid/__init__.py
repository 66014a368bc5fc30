"""Memoroids: monoid scans for recurrent models, returns and replay batching."""

from .core import (
    EpisodeBoundaryError,
    MemoroidDefinition,
    PartialTransition,
    ResettableElement,
    apply,
    apply_batched,
    apply_resettable,
    make_resettable,
    step,
)
from .scan import AssociativeOperator, ScanSchedule, associative_scan, scan_parallel, scan_sequential

__version__ = "0.1.0"

__all__ = [
    "AssociativeOperator",
    "ScanSchedule",
    "scan_sequential",
    "scan_parallel",
    "associative_scan",
    "MemoroidDefinition",
    "PartialTransition",
    "ResettableElement",
    "EpisodeBoundaryError",
    "make_resettable",
    "apply",
    "apply_resettable",
    "apply_batched",
    "step",
]
