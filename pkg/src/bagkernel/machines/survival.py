"""Kernel survival SVM with a squared-hinge ranking loss.

Minimizes over dual weights ``beta`` (scores ``f = K beta``)::

    R(beta) = alpha/2 * beta'K beta
              + 1/2 * sum_{(i,j) in P} max(0, 1 - (f_i - f_j))^2

where ``P`` holds every comparable pair: ``T_i < T_j`` and patient ``i``
had the event. Higher score means higher risk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ..errors import ConvergenceError, DimensionMismatchError, ValidationError
from .model import DualModel

DEFAULT_ALPHA = 0.0625
CENSOR_YEARS = 10.0


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    time: float
    event: int

    def __post_init__(self):
        if not (self.time > 0 and np.isfinite(self.time)):
            raise ValidationError(f"patient {self.patient_id!r}: time must be positive, got {self.time}")
        if self.event not in (0, 1):
            raise ValidationError(f"patient {self.patient_id!r}: event must be 0 or 1")


def censor(records, horizon=CENSOR_YEARS):
    """Truncate follow-up at ``horizon``; later events become censored."""
    out = []
    for r in records:
        if r.time > horizon:
            out.append(SurvivalRecord(r.patient_id, float(horizon), 0))
        else:
            out.append(r)
    return out


def _arrays(records):
    t = np.array([r.time for r in records], dtype=np.float64)
    e = np.array([r.event for r in records], dtype=np.int64)
    return t, e


def comparable_pairs(times, events):
    """Index arrays ``(i, j)`` with ``times[i] < times[j]`` and ``events[i] == 1``."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    mask = (times[:, None] < times[None, :]) & (events[:, None] == 1)
    i, j = np.nonzero(mask)
    return i, j


class RankingObjective:
    """Value and gradient of the survival objective for fixed ``K`` and pairs."""

    def __init__(self, K, pairs, alpha):
        self.K = K
        self.i, self.j = pairs
        self.alpha = alpha
        self.n = K.shape[0]

    def score_gradient(self, f):
        """Loss part and its gradient with respect to ``f``."""
        m = 1.0 - (f[self.i] - f[self.j])
        m = np.where(m > 0, m, 0.0)
        loss = 0.5 * float(m @ m)
        g = np.bincount(self.j, m, self.n) - np.bincount(self.i, m, self.n)
        return loss, g

    def __call__(self, beta):
        Kb = self.K @ beta
        loss, g = self.score_gradient(Kb)
        value = 0.5 * self.alpha * float(beta @ Kb) + loss
        grad = self.K @ (self.alpha * beta + g)
        return value, grad


def _newton(obj, beta, target, max_iter):
    """Generalized Newton on the piecewise-quadratic objective.

    With ``F = alpha*beta + g(K beta)`` the gradient is ``K F`` and the
    step ``d = -J^-1 F`` (``J = alpha I + L K``, ``L`` the active-pair
    Laplacian) solves the Newton system even when ``K`` is singular.
    """
    K, n = obj.K, obj.n
    value, grad = obj(beta)
    for _ in range(max_iter):
        if np.linalg.norm(grad) <= target:
            break
        f = K @ beta
        _, g = obj.score_gradient(f)
        F = obj.alpha * beta + g
        act = (1.0 - (f[obj.i] - f[obj.j])) > 0
        ai, aj = obj.i[act], obj.j[act]
        L = np.zeros((n, n))
        np.add.at(L, (ai, ai), 1.0)
        np.add.at(L, (aj, aj), 1.0)
        np.add.at(L, (ai, aj), -1.0)
        np.add.at(L, (aj, ai), -1.0)
        J = obj.alpha * np.eye(n) + L @ K
        try:
            d = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            return beta, False
        slope = float(grad @ d)
        if slope >= 0:
            return beta, False
        step = 1.0
        while step > 1e-12:
            new_value, new_grad = obj(beta + step * d)
            if new_value <= value + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return beta, False
        beta = beta + step * d
        value, grad = new_value, new_grad
    return beta, bool(np.linalg.norm(grad) <= target)


def fit_survival(K_train, records, alpha=DEFAULT_ALPHA, train_ids=None, tol=1e-6,
                 max_iter=200):
    """Fit the ranking survival SVM.

    Newton steps first; quasi-Newton (L-BFGS) takes over if a step fails.
    Exit requires ``||grad R|| <= tol * |P|``.
    """
    K = np.asarray(K_train, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionMismatchError(f"training kernel must be square, got {K.shape}")
    records = list(records)
    if len(records) != K.shape[0]:
        raise DimensionMismatchError(f"{len(records)} records for a {K.shape[0]}x{K.shape[0]} kernel")
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    times, events = _arrays(records)
    pairs = comparable_pairs(times, events)
    n_pairs = pairs[0].shape[0]
    if n_pairs == 0:
        raise ValidationError("no comparable pairs: need an event strictly before another time")
    obj = RankingObjective(K, pairs, alpha)
    target = tol * n_pairs
    beta, ok = _newton(obj, np.zeros(K.shape[0]), target, max_iter)
    if not ok:
        res = optimize.minimize(obj, beta, jac=True, method="L-BFGS-B",
                                options={"maxiter": 50 * max_iter, "maxcor": 30, "ftol": 0.0,
                                         "gtol": target / (10 * np.sqrt(K.shape[0]))})
        beta = res.x
        gnorm = float(np.linalg.norm(obj(beta)[1]))
        if gnorm > target:
            raise ConvergenceError(f"survival solver stopped with gradient norm {gnorm:.3e} "
                                   f"(target {target:.3e})", gnorm)
    ids = tuple(train_ids) if train_ids is not None else tuple(r.patient_id for r in records)
    return DualModel("survival", ids, beta, None, {"alpha": float(alpha)})
