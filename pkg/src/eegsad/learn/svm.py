"""RBF support vector machine trained by sequential minimal optimization.

Pair selection follows the maximal-violating-pair rule (Keerthi et al.'s
"modification 2"), which gives a stopping test that bounds every sample's
KKT violation by the tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..core import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvmConfig:
    sigma: float = 0.4
    c: float = 1.0
    tolerance: float = 1e-3
    max_passes: int = 50
    gamma: float | None = None  # LIBSVM-style exp(-gamma * |x - y|^2); overrides sigma

    def __post_init__(self):
        if self.sigma <= 0 or self.c <= 0:
            raise ConfigError("sigma and c must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.tolerance <= 0 or self.max_passes < 1:
            raise ConfigError("tolerance must be positive and max_passes >= 1")

    @property
    def kernel_gamma(self) -> float:
        return self.gamma if self.gamma is not None else 1.0 / (2.0 * self.sigma ** 2)


@dataclass
class SvmModel:
    support_x: np.ndarray
    support_coef: np.ndarray  # alpha_i * y_i for the support vectors
    b: float
    gamma: float
    converged: bool
    iterations: int
    alpha: np.ndarray  # full multiplier vector over the training set
    y: np.ndarray  # training labels in {-1, +1}

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.support_x.shape[1])
        if self.support_x.shape[0] == 0:
            return np.full(x.shape[0], self.b)
        k = rbf_kernel(x, self.support_x, self.gamma)
        return k @ self.support_coef + self.b


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


def _signed_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    values = set(np.unique(labels).tolist())
    if values <= {0, 1}:
        return np.where(labels == 1, 1.0, -1.0)
    if values <= {-1, 1}:
        return labels.astype(np.float64)
    raise DataError(f"SVM needs binary labels, got {sorted(values)}")


def _snap(a: float, c: float) -> float:
    # round-off residue next to a bound would otherwise keep selecting a pair with no room to move
    eps = 1e-12 * c
    return 0.0 if a <= eps else c if a >= c - eps else float(a)


def svm_fit(x: np.ndarray, labels: np.ndarray, config: SvmConfig = SvmConfig()) -> SvmModel:
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = _signed_labels(labels)
    n = x.shape[0]
    if n == 0:
        raise DataError("empty training set")
    gamma = config.kernel_gamma
    kmat = rbf_kernel(x, x, gamma)
    c = config.c
    alpha = np.zeros(n)
    err = -y.copy()  # F_i = sum_j alpha_j y_j K_ij - y_i
    tol = config.tolerance
    converged = False
    it = 0
    b_up = b_low = 0.0
    max_iter = config.max_passes * max(n, 1)
    pos, neg = y > 0, y < 0
    while it < max_iter:
        at_upper = alpha >= c
        at_lower = alpha <= 0
        up = (pos & ~at_upper) | (neg & ~at_lower)
        low = (pos & ~at_lower) | (neg & ~at_upper)
        if not up.any() or not low.any():
            converged = True
            break
        i_up = np.flatnonzero(up)[np.argmin(err[up])]
        i_low = np.flatnonzero(low)[np.argmax(err[low])]
        b_up, b_low = err[i_up], err[i_low]
        # stopping at gap <= tol leaves every sample within tol/2 of its KKT bound
        if b_low - b_up <= tol:
            converged = True
            break
        i1, i2 = i_low, i_up
        y1, y2 = y[i1], y[i2]
        a1, a2 = alpha[i1], alpha[i2]
        if y1 != y2:
            lo, hi = max(0.0, a2 - a1), min(c, c + a2 - a1)
        else:
            lo, hi = max(0.0, a1 + a2 - c), min(c, a1 + a2)
        eta = max(kmat[i1, i1] + kmat[i2, i2] - 2.0 * kmat[i1, i2], 1e-12)
        a2_new = float(np.clip(a2 + y2 * (err[i1] - err[i2]) / eta, lo, hi))
        a1_new = a1 + y1 * y2 * (a2 - a2_new)
        a1_new, a2_new = _snap(a1_new, c), _snap(a2_new, c)
        d1, d2 = a1_new - a1, a2_new - a2
        it += 1
        if d1 == 0.0 and d2 == 0.0:
            log.warning("SMO made no progress at iteration %d; stopping", it)
            break
        alpha[i1], alpha[i2] = a1_new, a2_new
        err += d1 * y1 * kmat[:, i1] + d2 * y2 * kmat[:, i2]
    if not converged:
        log.warning("SMO did not reach tolerance %.1e within %d iterations", tol, max_iter)
    b = -(b_up + b_low) / 2.0
    sv = alpha > 0
    return SvmModel(x[sv], alpha[sv] * y[sv], float(b), gamma, converged, it, alpha, y)


def svm_predict(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Class 1 where the decision value is >= 0, else class 0."""
    return (model.decision_function(x) >= 0).astype(np.int64)


def kkt_violation(model: SvmModel, x: np.ndarray, c: float) -> np.ndarray:
    """Per-sample KKT violation of the trained multipliers (0 when satisfied).

    alpha = 0 needs y f >= 1; 0 < alpha < C needs y f = 1; alpha = C needs y f <= 1.
    """
    margin = model.y * model.decision_function(x)
    a = model.alpha
    v = np.where(a <= 0, np.maximum(0.0, 1.0 - margin),
                 np.where(a >= c, np.maximum(0.0, margin - 1.0), np.abs(margin - 1.0)))
    return v
