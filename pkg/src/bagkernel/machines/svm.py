"""Epsilon-SVR and soft-margin SVC on a precomputed kernel."""

import numpy as np

from ..errors import DimensionMismatchError, ValidationError
from . import smo
from .model import DualModel

KKT_TOL = 1e-6


def _square(K):
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionMismatchError(f"training kernel must be square, got {K.shape}")
    return K


def fit_svr(K_train, y, C=1.0, epsilon=0.1, train_ids=None, tol=KKT_TOL,
            max_iter=None, track=False):
    """Fit an epsilon-insensitive SVR.

    The 2N-variable dual is handed to SMO with labels ``(+1, ..., -1, ...)``
    and linear term ``(eps - y, eps + y)``; the model keeps
    ``alpha - alpha*`` per training item.
    """
    K = _square(K_train)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = K.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatchError(f"{y.shape[0]} targets for a {n}x{n} kernel")
    if not np.all(np.isfinite(y)):
        raise ValidationError("targets must be finite")
    if C <= 0 or epsilon < 0:
        raise ValidationError("need C > 0 and epsilon >= 0")
    K2 = np.block([[K, K], [K, K]])
    signs = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    res = smo.solve(K2, signs, p, C, tol=tol, max_iter=max_iter, track=track)
    coef = res.alpha[:n] - res.alpha[n:]
    model = DualModel("svr", _ids(train_ids, n), coef, -res.rho,
                      {"C": float(C), "epsilon": float(epsilon)})
    return (model, res) if track else model


def fit_svc(K_train, y, C=1.0, train_ids=None, tol=KKT_TOL, max_iter=None, track=False):
    """Fit a binary soft-margin SVM; ``y`` in {-1, +1}."""
    K = _square(K_train)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = K.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatchError(f"{y.shape[0]} labels for a {n}x{n} kernel")
    classes = set(np.unique(y).tolist())
    if not classes <= {-1.0, 1.0}:
        raise ValidationError(f"labels must be -1/+1, got {sorted(classes)}")
    if len(classes) < 2:
        raise ValidationError(f"both classes are required, only {sorted(classes)} present")
    if C <= 0:
        raise ValidationError("C must be positive")
    res = smo.solve(K, y, -np.ones(n), C, tol=tol, max_iter=max_iter, track=track)
    model = DualModel("svc", _ids(train_ids, n), y * res.alpha, -res.rho, {"C": float(C)})
    return (model, res) if track else model


def _ids(train_ids, n):
    if train_ids is None:
        return tuple(str(i) for i in range(n))
    train_ids = tuple(train_ids)
    if len(train_ids) != n:
        raise DimensionMismatchError(f"{len(train_ids)} ids for {n} training items")
    return train_ids
