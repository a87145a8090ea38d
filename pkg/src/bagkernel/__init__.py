"""MMD kernels between bags of embeddings, and the kernel machines that use them."""

from ._backend import BACKEND
from .bags import EmbeddingBag, exclude_patient, load_bag, load_dataset, write_bag
from .matrices import DistanceMatrix, KernelMatrix, load_matrix, save_matrix
from .mmd import (
    PatchKernelParams,
    check_psd,
    gauss_kernel,
    median_gamma,
    mmd_sq,
    pairwise_distances,
    to_kernel,
)

__version__ = "0.1.0"
