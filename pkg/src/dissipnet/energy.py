"""Learnable quadratic energy V(w) = (w - w_c)^T Q (w - w_c).

Q is positive definite by construction: in ``diag`` mode Q = diag(d) with
d = softplus(theta) + EPS_PD, in ``full`` mode Q = L L^T where L is lower
triangular with diagonal softplus(raw) + EPS_PD.  All batched helpers take
row vectors, i.e. arrays of shape (..., n).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EPS_PD = 1e-6
MODES = ("diag", "full")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@lru_cache(maxsize=16)
def _strict_lower_mask(n):
    return np.tri(n, k=-1)


def alpha_threshold(k):
    """Largest admissible contraction factor for sigmoid steepness ``k``."""
    if not k > 0:
        raise ValueError(f"sigmoid steepness k must be positive, got {k}")
    return (1.0 + 1.0 / (2.0 * k + 2.0 * np.sqrt(2.0 * k))) ** -2


def check_hyperparameters(alpha, c, k):
    """Raise ValueError unless (alpha, c, k) give a bounded learned system."""
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    threshold = alpha_threshold(k)
    if not alpha < threshold:
        raise ValueError(
            f"alpha={alpha} violates alpha < {threshold:.4f} required for k={k}"
        )
    if not c > 1.0 / alpha:
        raise ValueError(f"c={c} must exceed 1/alpha = {1.0 / alpha:.6g}")


@dataclass
class QuadraticEnergy:
    center: np.ndarray
    q_raw: np.ndarray
    mode: str = "diag"
    alpha: float = 0.99
    c: float = 1000.0
    k: float = 100.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.q_raw = np.asarray(self.q_raw, dtype=float)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = self.center.shape[0]
        expected = (n,) if self.mode == "diag" else (n, n)
        if self.center.ndim != 1 or self.q_raw.shape != expected:
            raise ValueError(
                f"{self.mode} energy with n={n} needs q_raw of shape {expected}, "
                f"got {self.q_raw.shape}"
            )
        if self.mode == "full":
            self.q_raw = np.tril(self.q_raw)
        check_hyperparameters(self.alpha, self.c, self.k)

    @property
    def n(self):
        return self.center.shape[0]

    @classmethod
    def from_diagonal(cls, center, d, **kw):
        """Energy with Q = diag(d) in either mode."""
        d = np.asarray(d, dtype=float)
        mode = kw.pop("mode", "diag")
        if mode == "diag":
            raw = softplus_inverse(d - EPS_PD)
        else:
            raw = np.diag(softplus_inverse(np.sqrt(d) - EPS_PD))
        return cls(center=center, q_raw=raw, mode=mode, **kw)

    @classmethod
    def from_data(cls, states, mode="diag", margin=2.0, **kw):
        """Center on the data mean; size Q so {V <= alpha*c} holds every state
        with ``margin`` to spare in radius."""
        states = np.asarray(states, dtype=float)
        center = states.mean(axis=0)
        var = states.var(axis=0)
        var = np.where(var > 0, var, 1.0)
        alpha = kw.get("alpha", cls.alpha)
        c = kw.get("c", cls.c)
        spread = np.max(np.sum((states - center) ** 2 / var, axis=1))
        scale = alpha * c / (margin**2 * max(spread, 1e-12))
        return cls.from_diagonal(center, scale / var, mode=mode, **kw)

    def diag(self):
        """d in diag mode."""
        return softplus(self.q_raw) + EPS_PD

    def lower(self):
        """Cholesky factor L (full mode)."""
        n = self.n
        L = self.q_raw * _strict_lower_mask(n)
        L.flat[:: n + 1] = softplus(np.diagonal(self.q_raw)) + EPS_PD
        return L

    def copy(self):
        return QuadraticEnergy(self.center.copy(), self.q_raw.copy(), self.mode,
                               self.alpha, self.c, self.k)

    # -- batched primitives ---------------------------------------------------

    def quad(self, v):
        """v^T Q v for rows of v."""
        if self.mode == "diag":
            return np.sum(self.diag() * v * v, axis=-1)
        Lv = v @ self.lower()
        return np.sum(Lv * Lv, axis=-1)

    def apply_Q(self, v):
        if self.mode == "diag":
            return self.diag() * v
        L = self.lower()
        return (v @ L) @ L.T

    def quad_raw_grad(self, v, weights):
        """Gradient w.r.t. q_raw of sum_b weights[b] * v_b^T Q v_b."""
        v = np.atleast_2d(v)
        weights = np.atleast_1d(weights)
        if self.mode == "diag":
            gd = weights @ (v * v)
            return gd * sigmoid(self.q_raw)
        L = self.lower()
        gL = 2.0 * (v * weights[:, None]).T @ (v @ L)
        return self.lower_grad_to_raw(gL)

    def lower_grad_to_raw(self, gL):
        g = np.tril(gL)
        idx = np.diag_indices(self.n)
        g[idx] *= sigmoid(self.q_raw[idx])
        return g

    def diag_grad_to_raw(self, gd):
        return gd * sigmoid(self.q_raw)

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.n:
            raise ValueError(f"state has dimension {w.shape[-1]}, energy expects {self.n}")
        return w


def materialize(energy):
    """Dense (Q, L) with L @ L.T == Q."""
    if energy.mode == "diag":
        d = energy.diag()
        return np.diag(d), np.diag(np.sqrt(d))
    L = energy.lower()
    return L @ L.T, L


def eval_V(energy, w):
    w = energy._check(w)
    return energy.quad(w - energy.center)


def grad_V_state(energy, w):
    w = energy._check(w)
    return 2.0 * energy.apply_Q(w - energy.center)


def grad_V_params(energy, w):
    """Gradients of V(w) w.r.t. (center, q_raw), returned as a dict."""
    w = energy._check(w)
    if w.ndim != 1:
        raise ValueError("grad_V_params takes a single state")
    v = w - energy.center
    return {
        "center": -2.0 * energy.apply_Q(v),
        "q_raw": energy.quad_raw_grad(v[None, :], np.ones(1)),
    }


def log_det_Q(energy):
    if energy.mode == "diag":
        return float(np.sum(np.log(energy.diag())))
    return 2.0 * float(np.sum(np.log(np.diag(energy.lower()))))


def volume_penalty(energy):
    """det(Q)^(-1/2) and its gradient w.r.t. q_raw."""
    value = float(np.exp(-0.5 * log_det_Q(energy)))
    if energy.mode == "diag":
        grad = -0.5 * value * sigmoid(energy.q_raw) / energy.diag()
    else:
        grad = np.zeros_like(energy.q_raw)
        idx = np.diag_indices(energy.n)
        diag_L = softplus(energy.q_raw[idx]) + EPS_PD
        grad[idx] = -value * sigmoid(energy.q_raw[idx]) / diag_L
    return value, grad
