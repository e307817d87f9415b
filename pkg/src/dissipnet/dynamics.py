"""Ground-truth simulators (Lorenz 63, Kuramoto-Sivashinsky) and pair datasets."""

from dataclasses import dataclass, field

import numpy as np

from .numerics import fft_forward, fft_inverse, is_power_of_two

KS_BLOWUP = 1e6


@dataclass
class Trajectory:
    states: np.ndarray
    dt_sample: float
    system_tag: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise ValueError(f"states must be T x n, got shape {self.states.shape}")

    @property
    def T(self):
        return self.states.shape[0]

    @property
    def n(self):
        return self.states.shape[1]

    def __len__(self):
        return self.T


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0


def lorenz_rhs(params, w):
    x, y, z = w[0], w[1], w[2]
    return np.array([params.sigma * (y - x), x * (params.rho - z) - y, x * y - params.beta * z])


def rk4_step(rhs, w, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = rhs(w)
    k2 = rhs(w + 0.5 * dt * k1)
    k3 = rhs(w + 0.5 * dt * k2)
    k4 = rhs(w + dt * k3)
    return w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _substeps(interval, dt):
    count = int(round(interval / dt))
    if count < 1 or abs(count * dt - interval) > 1e-9 * interval:
        raise ValueError(f"internal step {dt} must divide the sampling interval {interval}")
    return count


def random_lorenz_state(seed):
    rng = np.random.default_rng(seed)
    return rng.uniform([-20.0, -25.0, 0.0], [20.0, 25.0, 45.0])


def simulate_lorenz(params=LorenzParams(), w0=None, duration=100.0, dt_sample=0.05,
                    dt_internal=0.005, seed=0):
    """Integrate Lorenz 63 with classical RK4, sampling every ``dt_sample``."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    if dt_internal > dt_sample:
        raise ValueError("dt_internal must not exceed dt_sample")
    sub = _substeps(dt_sample, dt_internal)
    steps = int(np.floor(duration / dt_sample + 1e-9))
    w = random_lorenz_state(seed) if w0 is None else np.asarray(w0, dtype=float)
    s, r, bt = params.sigma, params.rho, params.beta
    h = dt_internal
    out = np.empty((steps + 1, 3))
    x, y, z = (float(v) for v in w)
    out[0] = x, y, z

    # scalar RK4; same scheme as rk4_step, unrolled for speed
    def f(x, y, z):
        return s * (y - x), x * (r - z) - y, x * y - bt * z

    for i in range(1, steps + 1):
        for _ in range(sub):
            a1, b1, c1 = f(x, y, z)
            a2, b2, c2 = f(x + 0.5 * h * a1, y + 0.5 * h * b1, z + 0.5 * h * c1)
            a3, b3, c3 = f(x + 0.5 * h * a2, y + 0.5 * h * b2, z + 0.5 * h * c2)
            a4, b4, c4 = f(x + h * a3, y + h * b3, z + h * c3)
            x += h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
            y += h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
            z += h / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
        out[i] = x, y, z
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite Lorenz state; reduce dt_internal")
    return Trajectory(out, dt_sample, "lorenz")


# -- Kuramoto-Sivashinsky -------------------------------------------------------


@dataclass(frozen=True)
class KSConfig:
    domain_length: float = 32.0 * np.pi
    grid_points: int = 128
    dt_internal: float = 0.25
    snapshot_interval: float = 1.0

    def __post_init__(self):
        if not is_power_of_two(self.grid_points):
            raise ValueError(f"grid_points must be a power of two, got {self.grid_points}")
        _substeps(self.snapshot_interval, self.dt_internal)

    @property
    def x(self):
        return np.arange(self.grid_points) * self.domain_length / self.grid_points


@dataclass
class ETDRK4Coefficients:
    E: np.ndarray
    E2: np.ndarray
    Q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    g: np.ndarray = field(repr=False)
    linear: np.ndarray = field(repr=False)


def ks_wavenumbers(config):
    N = config.grid_points
    m = np.fft.fftfreq(N, d=1.0 / N)
    return 2.0 * np.pi * m / config.domain_length, m


def ks_coefficients(config, dt=None, contour_points=32):
    """ETDRK4 coefficients via contour-integral means (Kassam & Trefethen)."""
    h = config.dt_internal if dt is None else dt
    k, m = ks_wavenumbers(config)
    N = config.grid_points
    lin = k**2 - k**4
    roots = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    LR = h * lin[:, None] + roots[None, :]
    eLR = np.exp(LR)
    Q = h * np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1).real
    f1 = h * np.mean((-4.0 - LR + eLR * (4.0 - 3.0 * LR + LR**2)) / LR**3, axis=1).real
    f2 = h * np.mean((2.0 + LR + eLR * (LR - 2.0)) / LR**3, axis=1).real
    f3 = h * np.mean((-4.0 - 3.0 * LR - LR**2 + eLR * (4.0 - LR)) / LR**3, axis=1).real
    # odd derivative: drop the Nyquist mode; 2/3-rule dealiasing of the quadratic term
    kd = k.copy()
    kd[N // 2] = 0.0
    kd[np.abs(m) > N / 3.0] = 0.0
    g = -0.5j * kd
    return ETDRK4Coefficients(np.exp(h * lin), np.exp(h * lin / 2.0), Q, f1, f2, f3, g, lin)


def _nonlinear(coeffs, v):
    u = fft_inverse(v)
    return coeffs.g * fft_forward(u * u)


def _ks_spectral_step(coeffs, v):
    Nv = _nonlinear(coeffs, v)
    a = coeffs.E2 * v + coeffs.Q * Nv
    Na = _nonlinear(coeffs, a)
    b = coeffs.E2 * v + coeffs.Q * Na
    Nb = _nonlinear(coeffs, b)
    c = coeffs.E2 * a + coeffs.Q * (2.0 * Nb - Nv)
    Nc = _nonlinear(coeffs, c)
    return coeffs.E * v + Nv * coeffs.f1 + 2.0 * (Na + Nb) * coeffs.f2 + Nc * coeffs.f3


def ks_step_etdrk4(config, coeffs, w):
    """Advance a real KS state by one internal step."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != config.grid_points:
        raise ValueError(f"state has {w.shape[-1]} points, config expects {config.grid_points}")
    out = fft_inverse(_ks_spectral_step(coeffs, fft_forward(w)))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite KS state")
    return out


def ks_initial_condition(config, seed, modes=8, amplitude=0.1):
    """Band-limited random field over Fourier modes 1..modes, scaled to max |w| = amplitude."""
    rng = np.random.default_rng(seed)
    x = config.x
    phase = 2.0 * np.pi * x / config.domain_length
    field_ = np.zeros_like(x)
    for mode in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        field_ += a * np.cos(mode * phase) + b * np.sin(mode * phase)
    return amplitude * field_ / np.max(np.abs(field_))


def simulate_ks(config=KSConfig(), w0=None, duration=500.0, seed=0):
    """Integrate KS with ETDRK4, storing a snapshot every ``snapshot_interval``."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    coeffs = ks_coefficients(config)
    sub = _substeps(config.snapshot_interval, config.dt_internal)
    snaps = int(np.floor(duration / config.snapshot_interval + 1e-9))
    w = ks_initial_condition(config, seed) if w0 is None else np.asarray(w0, dtype=float)
    if w.shape != (config.grid_points,):
        raise ValueError(f"initial condition must have {config.grid_points} points")
    out = np.empty((snaps + 1, config.grid_points))
    out[0] = w
    v = fft_forward(w)
    for i in range(1, snaps + 1):
        for _ in range(sub):
            v = _ks_spectral_step(coeffs, v)
        u = fft_inverse(v)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > KS_BLOWUP:
            raise FloatingPointError(
                f"KS blowup at t={i * config.snapshot_interval}; dt_internal too large"
            )
        out[i] = u
        v = fft_forward(u)
    return Trajectory(out, config.snapshot_interval, f"ks{config.grid_points}")


def build_pairs(trajectories, skip=0):
    """Stack consecutive (w_i, w_{i+1}) pairs from each trajectory after ``skip`` states."""
    if not trajectories:
        raise ValueError("no trajectories given")
    xs, ys = [], []
    for traj in trajectories:
        states = traj.states[skip:]
        if states.shape[0] < 2:
            raise ValueError("each trajectory needs at least two states after skipping")
        xs.append(states[:-1])
        ys.append(states[1:])
    return np.concatenate(xs), np.concatenate(ys)
