"""Rank statistics: Spearman, AUC-ROC with strength bins, Wilcoxon signed-rank."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats as _st

from ..errors import ValidationError

AUC_MODERATE = 0.6
AUC_STRONG = 0.7
EXACT_WILCOXON_MAX = 25


def _rank(x):
    return _st.rankdata(x, method="average")


def spearman(y_true, y_pred):
    """Spearman's rho with average ranks and a t-approximation p-value.

    Returns ``(rho, p)``; p is two-sided with ``n - 2`` degrees of freedom.
    """
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("spearman needs two 1-D sequences of equal length")
    n = a.shape[0]
    if n < 3:
        raise ValidationError("spearman needs at least 3 observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValidationError("rho is undefined for constant input")
    ra, rb = _rank(a), _rank(b)
    ra -= ra.mean()
    rb -= rb.mean()
    rho = float(ra @ rb / math.sqrt(float(ra @ ra) * float(rb @ rb)))
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * _st.t.sf(abs(t), n - 2))


@dataclass(frozen=True)
class AUCResult:
    auc: float
    strength: str
    exact: Fraction


def auc_bin(auc) -> str:
    """weak below 0.6, moderate from 0.6, strong from 0.7."""
    if auc >= Fraction(7, 10) if isinstance(auc, Fraction) else auc >= AUC_STRONG:
        return "strong"
    if auc >= Fraction(6, 10) if isinstance(auc, Fraction) else auc >= AUC_MODERATE:
        return "moderate"
    return "weak"


def auc_roc(labels, scores) -> AUCResult:
    """Mann-Whitney AUC: fraction of (pos, neg) pairs ranked correctly, ties count half."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValidationError("labels and scores must be 1-D and equal length")
    values = set(np.unique(y).tolist())
    if not values <= {0, 1}:
        raise ValidationError(f"labels must be 0/1, got {sorted(values)}")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes")
    # doubled average ranks are integers
    r2 = np.rint(2 * _rank(s)).astype(np.int64)
    num = int(r2[pos].sum()) - n_pos * (n_pos + 1)
    exact = Fraction(num, 2 * n_pos * n_neg)
    return AUCResult(float(exact), auc_bin(exact), exact)


def signed_rank_null(doubled_ranks):
    """Counts of each doubled signed-rank sum over all 2^n sign patterns."""
    counts = [1]
    for r in doubled_ranks:
        grown = counts + [0] * r
        for s, c in enumerate(counts):
            grown[s + r] += c
        counts = grown
    return counts


def wilcoxon_signed_rank(a, b, alternative="greater"):
    """One-sided paired test that ``a - b`` is stochastically greater than zero.

    Zero differences are dropped. Up to 25 nonzero pairs the p-value comes
    from the exact permutation distribution of the signed-rank sum (ties
    keep average ranks); above that, the normal approximation with tie and
    continuity corrections.
    """
    if alternative not in ("greater", "less"):
        raise ValidationError("alternative must be 'greater' or 'less'")
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("paired samples must be 1-D and equal length")
    d = x - y
    if alternative == "less":
        d = -d
    d = d[d != 0]
    n = d.shape[0]
    if n == 0:
        raise ValidationError("all differences are zero")
    ranks = _rank(np.abs(d))
    r2 = np.rint(2 * ranks).astype(np.int64)
    w2 = int(r2[d > 0].sum())
    if n <= EXACT_WILCOXON_MAX:
        counts = signed_rank_null(r2.tolist())
        return float(Fraction(sum(counts[w2:]), 2 ** n))
    w = w2 / 2
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float((tie_counts ** 3 - tie_counts).sum()) / 48
    z = (w - mean - 0.5) / math.sqrt(var)
    return float(_st.norm.sf(z))
