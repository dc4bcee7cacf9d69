"""The compared methods behind one ``denoise`` interface."""

from mbdenoise.denoisers.alge import alge_extrapolate
from mbdenoise.denoisers.methods import (
    METHODS,
    NN_METHODS,
    MethodConfig,
    SweepResult,
    denoise,
    input_combinations,
    input_configuration_sweep,
    nn_denoise,
)
from mbdenoise.denoisers.mppca import denoise_windows, mp_signal_count, mppca_denoise

__all__ = [
    "METHODS",
    "NN_METHODS",
    "MethodConfig",
    "SweepResult",
    "alge_extrapolate",
    "denoise",
    "denoise_windows",
    "input_combinations",
    "input_configuration_sweep",
    "mp_signal_count",
    "mppca_denoise",
    "nn_denoise",
]
