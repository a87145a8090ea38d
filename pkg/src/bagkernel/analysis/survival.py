"""C-index, Kaplan-Meier curves and the two-group log-rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

from ..errors import ValidationError


def _times_events(records):
    t = np.array([r.time for r in records], dtype=np.float64)
    e = np.array([r.event for r in records], dtype=np.int64)
    return t, e


def concordance_index(records, risks) -> float:
    """Share of comparable pairs whose risks are ordered like their times.

    A pair ``(i, j)`` is comparable when ``T_i < T_j`` and ``i`` had the
    event; it scores 1 if ``risk_i > risk_j``, 0.5 on a tie, else 0.
    """
    t, e = _times_events(records)
    r = np.asarray(risks, dtype=np.float64)
    if r.shape != t.shape:
        raise ValidationError(f"{r.shape[0]} risks for {t.shape[0]} records")
    comparable = (t[:, None] < t[None, :]) & (e[:, None] == 1)
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise ValidationError("no comparable pairs")
    diff = r[:, None] - r[None, :]
    score = 2 * int((comparable & (diff > 0)).sum()) + int((comparable & (diff == 0)).sum())
    return score / (2 * n_pairs)


@dataclass(frozen=True)
class KMCurve:
    """Product-limit survival as a right-continuous step function.

    ``survival[k]`` holds on ``[times[k], times[k+1])``; ``at_risk[k]`` is
    the number still under observation just before ``times[k]``.
    """

    group: str
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray

    def at(self, t: float) -> float:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.survival[max(k, 0)])


def _km(t, e, group):
    grid = np.unique(t)
    times = [0.0]
    surv = [1.0]
    at_risk = [t.shape[0]]
    s = 1.0
    for u in grid:
        n = int((t >= u).sum())
        d = int(((t == u) & (e == 1)).sum())
        if d:
            s *= 1.0 - d / n
        times.append(float(u))
        surv.append(s)
        at_risk.append(n)
    return KMCurve(group, np.array(times), np.array(surv), np.array(at_risk))


def km_curve(records, groups) -> dict:
    """One Kaplan-Meier curve per distinct group label."""
    t, e = _times_events(records)
    g = np.asarray(groups)
    if g.shape != t.shape:
        raise ValidationError("one group label per record is required")
    out = {}
    for label in sorted(set(g.tolist()), key=str):
        mask = g == label
        if not mask.any():
            raise ValidationError(f"group {label!r} is empty")
        out[label] = _km(t[mask], e[mask], str(label))
    return out


def median_split(train_scores, scores):
    """``"high"``/``"low"`` by the median of the training scores."""
    thr = float(np.median(train_scores))
    return np.where(np.asarray(scores) > thr, "high", "low")


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed: float
    expected: float


def logrank(records, groups) -> LogRankResult:
    """Unstratified two-group log-rank test (chi-square, 1 df)."""
    t, e = _times_events(records)
    g = np.asarray(groups)
    labels = sorted(set(g.tolist()), key=str)
    if len(labels) != 2:
        raise ValidationError(f"log-rank needs exactly two groups, got {labels}")
    in1 = g == labels[0]
    if in1.all() or not in1.any():
        raise ValidationError("both groups must be nonempty")
    if not e.any():
        raise ValidationError("log-rank needs at least one event")
    obs = exp = var = 0.0
    for u in np.unique(t[e == 1]):
        risk = t >= u
        n = int(risk.sum())
        n1 = int((risk & in1).sum())
        died = (t == u) & (e == 1)
        d = int(died.sum())
        d1 = int((died & in1).sum())
        obs += d1
        exp += d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    if var <= 0:
        return LogRankResult(0.0, 1.0, obs, exp)
    stat = (obs - exp) ** 2 / var
    return LogRankResult(float(stat), float(_st.chi2.sf(stat, 1)), obs, exp)


def aggregate_pvalues(p_values) -> float:
    """Fold aggregation: twice the median fold p-value, capped at 1."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        raise ValidationError("no p-values to aggregate")
    return float(min(1.0, 2.0 * np.median(p)))
