"""Unsupervised segmentation domain adaptation by cycle-consistent pixel matching.

A small reverse-mode autodiff engine on NumPy carries cosine and negative-KL
pixel similarities, cycle-consistent association, spatial aggregation and the
contrastive association losses, plus a toy segmentation network, a synthetic
two-domain benchmark and a training / ablation harness.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
