"""Sequential minimal optimization for box- and equality-constrained duals.

Solves::

    min_a  0.5 a'Qa + p'a   s.t.  y'a = const,  0 <= a_i <= C_i

with ``Q_ij = y_i y_j K_ij`` and ``y_i`` in {-1, +1}, using second-order
working-set selection (Fan, Chen and Lin, 2005). Both the classifier and
the epsilon-SVR are instances of this problem.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError

TAU = 1e-12


@dataclass
class SMOResult:
    alpha: np.ndarray
    gradient: np.ndarray
    rho: float
    gap: float
    iterations: int
    objective: float
    history: list = field(default_factory=list)


def solve(K, y, p, C, alpha0=None, tol=1e-6, max_iter=None, track=False):
    """Run SMO on ``Q = (y y') * K``.

    ``gap`` at exit is the maximal KKT violation ``m(a) - M(a)``. With
    ``track`` the objective after every update is appended to ``history``.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = y.shape[0]
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), (n,)).copy()
    a = np.zeros(n) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    if max_iter is None:
        max_iter = max(100_000, 200 * n)

    QD = np.diag(K).copy()

    def column(i):
        return y * y[i] * K[:, i]

    G = p.copy()
    for i in np.flatnonzero(a):
        G += a[i] * column(i)

    def objective():
        return 0.5 * float(a @ (G + p))

    history = [objective()] if track else []
    pos = y > 0
    it = 0
    gap = np.inf
    while True:
        upper = a >= C
        lower = a <= 0
        # I_up: can move so that -y G grows
        in_up = np.where(pos, ~upper, ~lower)
        in_low = np.where(pos, ~lower, ~upper)
        minus_yG = -y * G
        if not in_up.any() or not in_low.any():
            gap = 0.0
            break
        up_vals = np.where(in_up, minus_yG, -np.inf)
        i = int(np.argmax(up_vals))
        g_max = up_vals[i]
        low_vals = np.where(in_low, minus_yG, np.inf)
        g_min = float(low_vals.min())
        gap = g_max - g_min
        if gap <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"SMO did not converge in {max_iter} iterations "
                                   f"(KKT gap {gap:.3e})", gap)
        Qi = column(i)
        b = g_max - minus_yG
        quad = QD[i] + QD - 2.0 * y[i] * y * Qi
        quad = np.where(quad > 0, quad, TAU)
        cand = in_low & (b > 0)
        obj_diff = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(obj_diff))
        if not np.isfinite(obj_diff[j]):
            break
        Qj = column(j)
        ai_old, aj_old = a[i], a[j]
        Ci, Cj = C[i], C[j]
        if y[i] != y[j]:
            qc = QD[i] + QD[j] + 2.0 * Qi[j]
            if qc <= 0:
                qc = TAU
            delta = (-G[i] - G[j]) / qc
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > Ci - Cj:
                if a[i] > Ci:
                    a[i] = Ci
                    a[j] = Ci - diff
            elif a[j] > Cj:
                a[j] = Cj
                a[i] = Cj + diff
        else:
            qc = QD[i] + QD[j] - 2.0 * Qi[j]
            if qc <= 0:
                qc = TAU
            delta = (G[i] - G[j]) / qc
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > Ci:
                if a[i] > Ci:
                    a[i] = Ci
                    a[j] = total - Ci
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > Cj:
                if a[j] > Cj:
                    a[j] = Cj
                    a[i] = total - Cj
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        G += Qi * (a[i] - ai_old) + Qj * (a[j] - aj_old)
        it += 1
        if track:
            history.append(objective())

    return SMOResult(a, G, _rho(a, G, y, C), float(gap), it, objective(), history)


def _rho(a, G, y, C):
    yG = y * G
    free = (a > 0) & (a < C)
    if free.any():
        return float(yG[free].mean())
    at_upper = a >= C
    pos = y > 0
    # bounds on rho from KKT at the bounds
    ub_mask = (at_upper & ~pos) | (~at_upper & pos)
    lb_mask = (at_upper & pos) | (~at_upper & ~pos)
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float(ub if np.isfinite(ub) else lb)
    return float((ub + lb) / 2)
