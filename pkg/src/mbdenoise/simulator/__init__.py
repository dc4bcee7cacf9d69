"""Synthesis of clean and Rician-noisy multi-b-value DWI from a phantom."""

from mbdenoise.simulator.directions import antipodal_min_angle, electrostatic_energy, generate_directions
from mbdenoise.simulator.lesions import (
    LesionField,
    LesionParams,
    generate_lesion_shapes,
    insert_lesions,
    load_lesion_field,
    load_lesion_shapes,
    sample_lesion_params,
    save_lesion_field,
    save_lesion_shapes,
)
from mbdenoise.simulator.signal import (
    AcquisitionProtocol,
    add_rician_noise,
    default_sigma,
    directional_diffusivity,
    simulate_clean,
    steady_state_factor,
)

__all__ = [
    "AcquisitionProtocol",
    "LesionField",
    "LesionParams",
    "add_rician_noise",
    "antipodal_min_angle",
    "default_sigma",
    "directional_diffusivity",
    "electrostatic_energy",
    "generate_directions",
    "generate_lesion_shapes",
    "insert_lesions",
    "load_lesion_field",
    "load_lesion_shapes",
    "sample_lesion_params",
    "save_lesion_field",
    "save_lesion_shapes",
    "simulate_clean",
    "steady_state_factor",
]
