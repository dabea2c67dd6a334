"""Perceptual thresholds of local exposure shifts.

Thin wrapper over the C++ core: colour transforms, Weibull psychometrics,
QUEST staircases, synthetic data and soft-F1 boundary sweeps.
"""

from ._core import (
    DataError,
    PtcModel,
    Quest,
    UnfittableError,
    apply_exposure_shift,
    boundary_sweep,
    fit_weibull,
    inverse_threshold,
    lab_to_srgb,
    load_dataset,
    lr_at,
    make_class_mask,
    srgb_to_lab,
    synthetic_dataset,
    weibull,
)

__all__ = [
    "DataError",
    "PtcModel",
    "Quest",
    "UnfittableError",
    "apply_exposure_shift",
    "boundary_sweep",
    "fit_weibull",
    "inverse_threshold",
    "lab_to_srgb",
    "load_dataset",
    "lr_at",
    "make_class_mask",
    "srgb_to_lab",
    "synthetic_dataset",
    "weibull",
]
