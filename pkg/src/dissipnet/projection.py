"""Dissipative projection layer.

Given the layer input w_t and the raw emulator prediction w_hat, the output

    w* = gamma * w_hat + (1 - gamma) * w_bar,
    gamma = sigmoid(k * (b - V(w_hat))),   b = alpha * max(V(w_t), c),

blends w_hat with its radial projection w_bar onto the ellipsoid V = b.
The blend keeps V(w*) <= (1 + delta)^2 b with delta = (2kb + 2 sqrt(2kb))^-1.

Everything is batched over leading rows; single vectors are accepted too.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import solve_lower, solve_upper

CENTER_EPS = 1e-12
SIGMOID_CLAMP = 500.0


class CenterSingularityError(ValueError):
    """w_hat coincides with the ellipsoid center; radial projection undefined."""


@dataclass
class ProjectionRecord:
    w_star: np.ndarray
    w_bar: np.ndarray
    gamma: np.ndarray
    b: np.ndarray
    V_input: np.ndarray
    V_hat: np.ndarray
    guard_active: np.ndarray
    cache: dict = None

    @property
    def V_star(self):
        return self.cache["energy"].quad(self.w_star - self.cache["energy"].center)


def lemma1_certificate(k, b):
    """Upper bound (1 + delta)^2 b on V of the projection output."""
    b = np.asarray(b, dtype=float)
    if not k > 0 or np.any(b <= 0):
        raise ValueError("k and b must be positive")
    if np.isinf(k):
        return b * 1.0
    kb = k * b
    delta = 1.0 / (2.0 * kb + 2.0 * np.sqrt(2.0 * kb))
    return (1.0 + delta) ** 2 * b


def compute_bound(energy, w_t):
    """b = alpha * [V(w_t) + ReLU(c - V(w_t))]."""
    w_t = energy._check(w_t)
    V = energy.quad(w_t - energy.center)
    return energy.alpha * (V + np.maximum(energy.c - V, 0.0))


def _stable_sigmoid(x):
    x = np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def _inv_LT(energy, u):
    """Rows of (L^T)^{-1} u."""
    if energy.mode == "diag":
        return u / np.sqrt(energy.diag())
    return solve_upper(energy.lower().T, u.T).T


def _inv_L(energy, g):
    """Rows of L^{-1} g."""
    if energy.mode == "diag":
        return g / np.sqrt(energy.diag())
    return solve_lower(energy.lower(), g.T).T


def _center_eps(n):
    return CENTER_EPS * np.sqrt(n)


def equality_project(energy, w_hat, b):
    """Point on {V = b} along the ray from the center through ``w_hat``."""
    w_hat = energy._check(w_hat)
    single = w_hat.ndim == 1
    v = np.atleast_2d(w_hat - energy.center)
    r = np.linalg.norm(v, axis=1)
    if np.any(r < _center_eps(energy.n)):
        raise CenterSingularityError("w_hat is at the energy center")
    y = _inv_LT(energy, v / r[:, None])
    out = energy.center + np.sqrt(np.asarray(b, dtype=float)).reshape(-1, 1) * y
    return out[0] if single else out


def dissipative_project(energy, w_t, w_hat, stop_gradient_gamma=False):
    """Forward pass of the layer; returns a ProjectionRecord with caches."""
    w_t = energy._check(w_t)
    w_hat = energy._check(w_hat)
    if w_t.shape != w_hat.shape:
        raise ValueError(f"w_t shape {w_t.shape} != w_hat shape {w_hat.shape}")
    single = w_t.ndim == 1
    w_t2 = np.atleast_2d(w_t)
    w_hat2 = np.atleast_2d(w_hat)

    v_t = w_t2 - energy.center
    V_t = energy.quad(v_t)
    b = energy.alpha * (V_t + np.maximum(energy.c - V_t, 0.0))

    v_hat = w_hat2 - energy.center
    V_hat = energy.quad(v_hat)
    r = np.linalg.norm(v_hat, axis=1)
    guard = r < _center_eps(energy.n)
    r_safe = np.where(guard, 1.0, r)
    u = v_hat / r_safe[:, None]
    y = _inv_LT(energy, u)
    sqrt_b = np.sqrt(b)
    w_bar = energy.center + sqrt_b[:, None] * y
    gamma = _stable_sigmoid(energy.k * (b - V_hat))
    gamma = np.where(guard, 1.0, gamma)
    w_bar = np.where(guard[:, None], w_hat2, w_bar)
    w_star = gamma[:, None] * w_hat2 + (1.0 - gamma[:, None]) * w_bar

    cache = dict(energy=energy, w_t=w_t2, w_hat=w_hat2, v_t=v_t, v_hat=v_hat,
                 r=r_safe, u=u, y=y, sqrt_b=sqrt_b,
                 stop_gradient_gamma=stop_gradient_gamma, single=single)
    rec = ProjectionRecord(w_star, w_bar, gamma, b, V_t, V_hat, guard, cache)
    if single:
        rec.w_star, rec.w_bar = w_star[0], w_bar[0]
    return rec


def projection_backward(record, upstream):
    """Chain rule through the layer.

    Returns ``(grad_w_hat, grad_w_t, {"center": ..., "q_raw": ...})``; energy
    gradients are summed over the batch.
    """
    if record.cache is None:
        raise ValueError("projection record carries no forward cache")
    cache = record.cache
    energy = cache["energy"]
    g = np.atleast_2d(np.asarray(upstream, dtype=float))
    if g.shape != cache["w_hat"].shape:
        raise ValueError(f"upstream shape {g.shape} != {cache['w_hat'].shape}")

    act = (~record.guard_active).astype(float)
    gamma = record.gamma
    y, u, r = cache["y"], cache["u"], cache["r"]
    sqrt_b = cache["sqrt_b"]
    w_bar = np.atleast_2d(record.w_bar)

    g_hat = gamma[:, None] * g
    g_bar = (1.0 - gamma[:, None]) * g * act[:, None]

    if cache["stop_gradient_gamma"]:
        g_b = np.zeros_like(gamma)
        g_Vhat = np.zeros_like(gamma)
    else:
        dgamma = gamma * (1.0 - gamma) * energy.k * act
        g_gamma = np.sum(g * (cache["w_hat"] - w_bar), axis=1)
        g_b = g_gamma * dgamma
        g_Vhat = -g_gamma * dgamma

    g_center = g_bar.sum(axis=0)
    g_b = g_b + np.sum(g_bar * y, axis=1) / (2.0 * sqrt_b)
    g_y = sqrt_b[:, None] * g_bar
    z = _inv_L(energy, g_y)
    if energy.mode == "diag":
        gd = -np.sum(y * g_y, axis=0) / (2.0 * energy.diag())
        g_q = energy.diag_grad_to_raw(gd)
    else:
        g_q = energy.lower_grad_to_raw(-(y.T @ z))

    g_u = z
    g_vhat = (g_u - u * np.sum(u * g_u, axis=1, keepdims=True)) / r[:, None]
    g_vhat = g_vhat + 2.0 * g_Vhat[:, None] * energy.apply_Q(cache["v_hat"])
    g_q = g_q + energy.quad_raw_grad(cache["v_hat"], g_Vhat)

    kink = (record.V_input >= energy.c).astype(float)
    g_Vt = g_b * energy.alpha * kink
    g_vt = 2.0 * g_Vt[:, None] * energy.apply_Q(cache["v_t"])
    g_q = g_q + energy.quad_raw_grad(cache["v_t"], g_Vt)

    g_w_hat = g_hat + g_vhat
    g_center = g_center - g_vhat.sum(axis=0) - g_vt.sum(axis=0)
    grads = {"center": g_center, "q_raw": g_q}
    if cache["single"]:
        return g_w_hat[0], g_vt[0], grads
    return g_w_hat, g_vt, grads
