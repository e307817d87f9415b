"""Autoregressive rollout of the learned operator and dissipativity checks."""

from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory
from .projection import dissipative_project, lemma1_certificate
from .training import emulate

BLOWUP_THRESHOLD = 1e8


@dataclass
class RolloutResult:
    trajectory: Trajectory
    energy_trace: np.ndarray
    entry_step: int
    max_post_entry_energy: float
    bounded: bool
    blowup_step: int = None


@dataclass
class DissipativityReport:
    passed: bool
    entry_step: int
    entry_bound: int
    first_violation: int = None
    violation: str = ""
    max_ratio: float = 0.0

    def as_dict(self):
        return dict(passed=self.passed, entry_step=self.entry_step, entry_bound=self.entry_bound,
                    first_violation=self.first_violation, violation=self.violation,
                    max_ratio=self.max_ratio)


def _entry_step(trace, c):
    inside = np.nonzero(trace <= c)[0]
    return int(inside[0]) if inside.size else None


def rollout(state, w0, steps, projection=None, step_fn=None):
    """Iterate the learned operator ``steps`` times from ``w0``.

    ``step_fn`` replaces the trained emulator (any map w -> w_hat), which is
    how untrained or adversarial emulators are exercised.  A non-finite or
    huge state ends an unprojected rollout early with ``bounded=False``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    energy = state.energy
    w = np.asarray(w0, dtype=float)
    if w.shape != (energy.n,):
        raise ValueError(f"initial state has shape {w.shape}, model expects ({energy.n},)")
    use_proj = state.projection_enabled if projection is None else projection
    states = np.empty((steps + 1, energy.n))
    states[0] = w
    blowup = None
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, steps + 1):
            if step_fn is None:
                w_hat = emulate(state, w[None, :])[0][0]
            else:
                w_hat = np.asarray(step_fn(w), dtype=float)
            w = dissipative_project(energy, w, w_hat).w_star if use_proj else w_hat
            states[t] = w
            # a projected state is certified by its energy, however far from the origin
            if not np.all(np.isfinite(w)) or (not use_proj and np.max(np.abs(w)) > BLOWUP_THRESHOLD):
                blowup = t
                break
    if blowup is not None:
        states = states[: blowup + 1]
    with np.errstate(over="ignore", invalid="ignore"):
        trace = energy.quad(states - energy.center)
    entry = _entry_step(trace, energy.c)
    post = float(np.max(trace[entry:])) if entry is not None else float("nan")
    traj = Trajectory(states, state.dt_sample, state.system_tag)
    return RolloutResult(traj, trace, entry, post, blowup is None, blowup)


def verify_dissipativity(result, energy):
    """Check the per-step energy conditions along a rollout's energy trace.

    (a) V_t > c  ->  V_{t+1} <= (1+delta_t)^2 alpha V_t
    (b) V_t <= c ->  V_{t+1} <= (1+delta_t)^2 alpha c
    (c) the trace enters {V <= c} within ceil(log_alpha(c / V_0)) steps
    """
    trace = np.asarray(result.energy_trace if hasattr(result, "energy_trace") else result, dtype=float)
    alpha, c = energy.alpha, energy.c
    if trace.size == 0 or not np.all(np.isfinite(trace)):
        bad = int(np.argmax(~np.isfinite(trace))) if trace.size else 0
        return DissipativityReport(False, None, None, bad, "non-finite energy")
    V0 = trace[0]
    bound = int(np.ceil(np.log(c / V0) / np.log(alpha))) if V0 > c else 0
    entry = _entry_step(trace, c)

    if trace.size > 1:
        b = alpha * np.maximum(trace[:-1], c)
        cap = lemma1_certificate(energy.k, b)
        ratio = trace[1:] / cap
        bad = np.nonzero(ratio > 1.0)[0]
        max_ratio = float(ratio.max())
    else:
        bad = np.array([], dtype=int)
        max_ratio = 0.0
    if bad.size:
        t = int(bad[0])
        kind = "contraction (a)" if trace[t] > c else "invariance (b)"
        return DissipativityReport(False, entry, bound, t + 1, kind, max_ratio)
    if V0 > c and (entry is None or entry > bound):
        if entry is not None or trace.size - 1 >= bound:
            return DissipativityReport(False, entry, bound, bound, "entry time (c)", max_ratio)
    return DissipativityReport(True, entry, bound, None, "", max_ratio)
