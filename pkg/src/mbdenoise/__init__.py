"""Multi-b-value denoising of synthetic diffusion MRI.

Simulation of lesioned diffusion-weighted brain volumes with Rician noise,
a small numpy CNN framework, the MBD / N2N / CNNe / ALGe / MPPCA denoisers
and the evaluation protocol used to compare them.
"""

from mbdenoise.volume import Mask, Volume, load_volume, save_volume, slice_extract

__version__ = "0.1.0"

__all__ = ["Mask", "Volume", "load_volume", "save_volume", "slice_extract"]
