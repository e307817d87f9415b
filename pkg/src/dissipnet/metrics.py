"""Invariant-statistics metrics: histogram KL divergences and log-spectral distance."""

from dataclasses import dataclass, asdict

import numpy as np

from .numerics import fft_forward, is_power_of_two, top_principal_components
from .rollout import BLOWUP_THRESHOLD


@dataclass
class HistogramSpec:
    bin_count: int = 100
    range: tuple = None
    smoothing_eps: float = 1e-10

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        if self.range is not None and not self.range[0] < self.range[1]:
            raise ValueError("histogram range needs lo < hi")


@dataclass
class MetricsReport:
    kl_physical: float
    kl_pca: float
    log_spectral_distance: float
    bounded: bool
    blowup_step: int = None
    kl_physical_per_component: list = None
    config: dict = None

    def as_dict(self):
        return asdict(self)


def kl_divergence(P, Q):
    """sum P log(P/Q), natural log; both must be strictly positive and normalized."""
    P = np.asarray(P, dtype=float).ravel()
    Q = np.asarray(Q, dtype=float).ravel()
    if P.shape != Q.shape:
        raise ValueError("distributions differ in length")
    if np.any(P <= 0) or np.any(Q <= 0):
        raise ValueError("distributions must be strictly positive (smooth first)")
    if abs(P.sum() - 1.0) > 1e-9 or abs(Q.sum() - 1.0) > 1e-9:
        raise ValueError("distributions must be normalized")
    return max(float(np.sum(P * np.log(P / Q))), 0.0)


def smooth(counts, eps):
    p = counts / counts.sum() + eps
    return p / p.sum()


def padded_range(values, margin=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo
    if span == 0.0:
        span = max(abs(lo), 1.0)
    return lo - margin * span, hi + margin * span


def _require_finite(traj_states, name):
    if not np.all(np.isfinite(traj_states)):
        raise ValueError(f"{name} contains non-finite values; truncate at blowup before computing metrics")


def histogram_1d(values, lo, hi, bins):
    """Counts with out-of-range samples clipped into the edge bins."""
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, values.ravel(), side="right") - 1, 0, bins - 1)
    return np.bincount(idx, minlength=bins).astype(float), edges


def histogram_2d(points, box, bins):
    (x0, x1), (y0, y1) = box
    ix = np.clip(((points[:, 0] - x0) / (x1 - x0) * bins).astype(np.int64), 0, bins - 1)
    iy = np.clip(((points[:, 1] - y0) / (y1 - y0) * bins).astype(np.int64), 0, bins - 1)
    counts = np.bincount(ix * bins + iy, minlength=bins * bins).astype(float)
    return counts.reshape(bins, bins)


def _states(traj):
    return np.asarray(getattr(traj, "states", traj), dtype=float)


def kl_physical(truth, pred, spec=None):
    """KL(P_truth || Q_pred) between pooled 1D histograms of every state entry."""
    spec = spec or HistogramSpec()
    t, p = _states(truth), _states(pred)
    if t.size == 0 or p.size == 0:
        raise ValueError("empty trajectory")
    if t.shape[1] != p.shape[1]:
        raise ValueError("trajectories have different state dimensions")
    _require_finite(p, "prediction")
    lo, hi = spec.range if spec.range is not None else padded_range(t)
    P, _ = histogram_1d(t, lo, hi, spec.bin_count)
    Q, _ = histogram_1d(p, lo, hi, spec.bin_count)
    return kl_divergence(smooth(P, spec.smoothing_eps), smooth(Q, spec.smoothing_eps))


def pca_fit(truth):
    t = _states(truth)
    components, projected, _ = top_principal_components(t, 2)
    return t.mean(axis=0), components, projected


def kl_pca(truth, pred, bins_per_axis=50, smoothing_eps=1e-10, components=None):
    """KL between 2D histograms of states projected on the truth's top two PCs."""
    t, p = _states(truth), _states(pred)
    if t.shape[0] < 2 or p.shape[0] == 0:
        raise ValueError("need at least two truth states and one predicted state")
    if t.shape[1] != p.shape[1]:
        raise ValueError("trajectories have different state dimensions")
    _require_finite(p, "prediction")
    mean = t.mean(axis=0)
    if components is None:
        components = top_principal_components(t, 2)[0]
    pt = (t - mean) @ components.T
    pp = (p - mean) @ components.T
    box = (padded_range(pt[:, 0]), padded_range(pt[:, 1]))
    P = histogram_2d(pt, box, bins_per_axis)
    Q = histogram_2d(pp, box, bins_per_axis)
    return kl_divergence(smooth(P, smoothing_eps), smooth(Q, smoothing_eps))


def power_spectrum(traj):
    """Time-averaged |X_m|^2 of the spatial DFT for modes m = 1..n/2."""
    s = _states(traj)
    n = s.shape[1]
    if not is_power_of_two(n):
        raise ValueError(f"state dimension {n} is not a power of two")
    X = fft_forward(s)
    return np.mean(np.abs(X[:, 1: n // 2 + 1]) ** 2, axis=0)


def log_spectral_distance(P_truth, P_pred, p=2.0):
    a = np.asarray(P_truth, dtype=float)
    b = np.asarray(P_pred, dtype=float)
    if a.shape != b.shape:
        raise ValueError("spectra differ in length")
    diff = np.log(np.maximum(a, 1e-300)) - np.log(np.maximum(b, 1e-300))
    return float(np.mean(np.abs(diff) ** p) ** (1.0 / p))


def blowup_index(states, threshold=BLOWUP_THRESHOLD):
    """First row that is non-finite or exceeds ``threshold`` in magnitude, else None."""
    with np.errstate(invalid="ignore"):
        bad = ~np.all(np.isfinite(states), axis=1) | (np.nanmax(np.abs(states), axis=1) > threshold)
    hits = np.nonzero(bad)[0]
    return int(hits[0]) if hits.size else None


def evaluate(truth, pred, energy=None, bins=100, pca_bins=50, transient=50, smoothing_eps=1e-10,
             per_component=False):
    """Assemble the metric suite for ``pred`` against ``truth``.

    A blown-up prediction is cut at its first bad row; the transient is then
    dropped only if at least two states remain.  With ``energy`` the verdict
    also requires the trace to stay below max(V_0, certified cap).
    """
    t = _states(truth)
    p = _states(pred)
    if t.shape[1] != p.shape[1]:
        raise ValueError(f"incompatible dimensions {t.shape[1]} vs {p.shape[1]}")
    blow = blowup_index(p)
    bounded = blow is None
    if blow is not None:
        p = p[:blow]
        if p.shape[0] == 0:
            raise ValueError("prediction has no valid states")
    if bounded and energy is not None:
        from .projection import lemma1_certificate
        trace = energy.quad(p - energy.center)
        cap = max(trace[0], float(lemma1_certificate(energy.k, energy.alpha * energy.c)))
        bounded = bool(np.all(trace[1:] <= cap * (1 + 1e-12)))
    t_eval = t[transient:] if t.shape[0] > transient + 1 else t
    p_eval = p[transient:] if p.shape[0] > transient + 1 else p
    spec = HistogramSpec(bins, None, smoothing_eps)
    klp = kl_physical(t_eval, p_eval, spec)
    per = None
    if per_component:
        per = [kl_physical(t_eval[:, [i]], p_eval[:, [i]], spec) for i in range(t.shape[1])]
    klc = kl_pca(t_eval, p_eval, pca_bins, smoothing_eps)
    lsd = None
    if is_power_of_two(t.shape[1]):
        lsd = log_spectral_distance(power_spectrum(t_eval), power_spectrum(p_eval))
    cfg = dict(bins=bins, pca_bins=pca_bins, transient=transient, smoothing_eps=smoothing_eps,
               truth_states=int(t_eval.shape[0]), pred_states=int(p_eval.shape[0]))
    return MetricsReport(klp, klc, lsd, bounded, blow, per, cfg)
