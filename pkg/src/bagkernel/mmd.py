"""Squared MMD between bags and the pairwise distance/kernel matrices.

The patch kernel is ``k(x, y) = exp(-||x - y||^2 / (4 sigma^2))`` and the
bag distance is the biased (V-statistic) squared MMD::

    S_aa / n^2 + S_bb / m^2 - 2 S_ab / (n m)

where ``S`` are full double sums of ``k`` including self-pairs.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _backend
from .bags import Dataset, EmbeddingBag, make_dataset
from .errors import BagKernelError, DimensionMismatchError, ValidationError
from .matrices import DistanceMatrix, KernelMatrix

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 10.0
DEFAULT_TILE = 1024
NEG_TOL = 1e-12


@dataclass(frozen=True)
class PatchKernelParams:
    """Bandwidth of the patch-level Gaussian kernel.

    ``kind`` is the seam for other patch kernels; only ``"gaussian"`` exists.
    """

    sigma: float = DEFAULT_SIGMA
    kind: str = "gaussian"

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.kind != "gaussian":
            raise ValidationError(f"unsupported patch kernel {self.kind!r}")

    @property
    def scale(self) -> float:
        return 1.0 / (4.0 * self.sigma * self.sigma)


def _params(params) -> PatchKernelParams:
    if isinstance(params, PatchKernelParams):
        return params
    return PatchKernelParams(float(params))


def gauss_kernel(x, y, sigma: float = DEFAULT_SIGMA) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatchError(f"vector shapes differ: {x.shape} vs {y.shape}")
    p = _params(sigma)
    diff = x - y
    return math.exp(-float(diff @ diff) * p.scale)


def kernel_rowsums(x, y, params, tile: int = DEFAULT_TILE) -> np.ndarray:
    """``r[i] = sum_j k(x_i, y_j)`` via the active backend."""
    return _backend.kernel_rowsums(x, y, _params(params).scale, tile)


def kernel_sum(x, y, params, tile: int = DEFAULT_TILE) -> float:
    # fsum is order-free, so the total only depends on the row sums
    return math.fsum(kernel_rowsums(x, y, params, tile))


def combine_sums(s_aa: float, n: int, s_bb: float, m: int, s_ab: float) -> float:
    """Biased squared MMD from the three double sums, clamped at zero."""
    value = s_aa / (n * n) + s_bb / (m * m) - 2.0 * s_ab / (n * m)
    if value < 0.0:
        if value < -NEG_TOL:
            raise BagKernelError(f"squared MMD came out at {value:.3e}; kernel sums are inconsistent")
        value = 0.0
    return value


def _vectors(bag):
    v = bag.vectors if isinstance(bag, EmbeddingBag) else np.asarray(bag, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValidationError("bags must be nonempty (n, d) arrays")
    return v


def mmd_sq(a, b, params=DEFAULT_SIGMA, tile: int = DEFAULT_TILE) -> float:
    """Biased squared MMD between two bags (or ``(n, d)`` arrays)."""
    x, y = _vectors(a), _vectors(b)
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatchError(f"bag dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    p = _params(params)
    s_aa = kernel_sum(x, x, p, tile)
    s_bb = s_aa if y is x else kernel_sum(y, y, p, tile)
    s_ab = s_aa if y is x else kernel_sum(x, y, p, tile)
    return combine_sums(s_aa, x.shape[0], s_bb, y.shape[0], s_ab)


def _as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return make_dataset(data)


def _pair_sum(x, y, p, tile, label):
    try:
        return kernel_sum(x, y, p, tile)
    except MemoryError as exc:
        raise MemoryError(f"out of memory computing pair {label}: {exc}") from exc


def pairwise_distances(data, params=DEFAULT_SIGMA, block: int = DEFAULT_TILE,
                       threads: int = 1) -> DistanceMatrix:
    """Full squared-MMD matrix over a dataset.

    Each unordered pair is computed once by the same deterministic routine,
    so the matrix is bitwise identical for any ``threads``.
    """
    ds = _as_dataset(data)
    if len(ds) == 0:
        raise ValidationError("dataset is empty")
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    p = _params(params)
    bags = ds.bags
    n = len(bags)
    vecs = [b.vectors for b in bags]

    def self_term(i):
        return _pair_sum(vecs[i], vecs[i], p, block, (bags[i].id, bags[i].id))

    def cross_term(ij):
        i, j = ij
        return _pair_sum(vecs[i], vecs[j], p, block, (bags[i].id, bags[j].id))

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    log.info("computing %d self sums and %d cross sums (backend=%s, threads=%d)",
             n, len(pairs), _backend.BACKEND, threads)
    if threads == 1:
        selfs = [self_term(i) for i in range(n)]
        cross = [cross_term(ij) for ij in pairs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            selfs = list(pool.map(self_term, range(n)))
            cross = list(pool.map(cross_term, pairs, chunksize=max(1, len(pairs) // (8 * threads))))

    values = np.zeros((n, n))
    for (i, j), s_ab in zip(pairs, cross):
        v = combine_sums(selfs[i], bags[i].n, selfs[j], bags[j].n, s_ab)
        values[i, j] = v
        values[j, i] = v
    return DistanceMatrix(tuple(ds.ids), values, p.sigma, "biased",
                          f"mmd_sq sigma={p.sigma:g} tile={block}")


def median_gamma(D) -> float:
    """Median of all N^2 entries, diagonal included."""
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    return float(np.median(values))


def to_kernel(D: DistanceMatrix, gamma: float) -> KernelMatrix:
    """``exp(-gamma * D)`` entrywise."""
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise ValidationError(f"gamma must be a finite nonnegative number, got {gamma}")
    values = np.exp(-gamma * D.values)
    return KernelMatrix(D.ids, values, float(gamma), f"exp(-gamma*D) from {D.provenance or 'distances'}",
                        D.sigma, D.estimator)


@dataclass(frozen=True)
class PSDReport:
    min_eigenvalue: float
    tol: float
    passed: bool


def check_psd(K, tol: float = 1e-8) -> PSDReport:
    values = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError("matrix must be square")
    if not np.array_equal(values, values.T):
        raise ValidationError("matrix is not symmetric")
    lo = float(linalg.eigh(values, eigvals_only=True, subset_by_index=[0, 0])[0])
    return PSDReport(lo, tol, lo >= -tol)
