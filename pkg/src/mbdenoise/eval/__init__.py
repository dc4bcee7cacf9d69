"""Loss floor, error maps, lesion histograms and best-method attribution."""

from mbdenoise.eval.metrics import (
    METHOD_ORDER,
    Attribution,
    ErrorSummary,
    Histogram,
    best_method_attribution,
    error_difference_map,
    error_maps,
    lesion_conspicuity_diff,
    lesion_error_histograms,
    pure_lesion_errors,
    theoretical_floor,
)

__all__ = [
    "METHOD_ORDER",
    "Attribution",
    "ErrorSummary",
    "Histogram",
    "best_method_attribution",
    "error_difference_map",
    "error_maps",
    "lesion_conspicuity_diff",
    "lesion_error_histograms",
    "pure_lesion_errors",
    "theoretical_floor",
]
