"""Identity-guided collaborative learning for cloth-changing person re-identification."""
from igcl.core import ImageSample, Batch, seeded_rng
from igcl.kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["ImageSample", "Batch", "seeded_rng", "KERNEL_BACKEND", "__version__"]
