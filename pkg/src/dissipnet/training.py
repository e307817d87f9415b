"""Joint training of the emulator and the energy under MSE + volume penalty."""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import emulator as emu
from .energy import QuadraticEnergy, volume_penalty
from .projection import dissipative_project, lemma1_certificate, projection_backward


ENERGY_KEYS = ("center", "q_raw")


@dataclass
class TrainConfig:
    lambda_vol: float = 1e-4
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0
    projection_enabled: bool = True
    grad_clip_norm: float = 10.0
    clip_per_block: bool = True
    energy_learning_rate: float = None
    stop_gradient_gamma: bool = False
    checkpoint_every: int = 0
    checkpoint_path: str = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_vol < 0:
            raise ValueError("lambda_vol must be nonnegative")
        self.adam_betas = tuple(self.adam_betas)


@dataclass
class Normalizer:
    """Per-dimension standardization; with ``residual`` the network predicts increments."""

    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    residual: bool = True

    @classmethod
    def fit(cls, X, Y, residual=True):
        target = Y - X if residual else Y
        return cls(X.mean(0), _safe_std(X), target.mean(0), _safe_std(target), residual)

    @classmethod
    def identity(cls, n, residual=False):
        return cls(np.zeros(n), np.ones(n), np.zeros(n), np.ones(n), residual)


def _safe_std(a):
    s = a.std(axis=0)
    return np.where(s > 0, s, 1.0)


@dataclass
class TrainState:
    emulator: emu.EmulatorParams
    energy: QuadraticEnergy
    normalizer: Normalizer
    projection_enabled: bool = True
    adam_m: dict = None
    adam_v: dict = None
    adam_t: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    system_tag: str = ""
    lambda_vol: float = 0.0
    dt_sample: float = 1.0

    @property
    def n(self):
        return self.emulator.n


def init_state(X, Y, hidden=(150,) * 6, activation="tanh", q_mode="diag",
               alpha=0.99, c=1000.0, k=100.0, seed=0, residual=True,
               projection_enabled=True, system_tag="", lambda_vol=0.0, dt_sample=1.0):
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    params = emu.init_params([n, *hidden, n], seed=seed, activation=activation)
    energy = QuadraticEnergy.from_data(np.concatenate([X, Y]), mode=q_mode, alpha=alpha, c=c, k=k)
    return TrainState(params, energy, Normalizer.fit(X, Y, residual),
                      projection_enabled=projection_enabled, system_tag=system_tag,
                      lambda_vol=lambda_vol, dt_sample=dt_sample)


# -- model evaluation -----------------------------------------------------------


def emulate(state, W, cache=False):
    """Raw emulator prediction w_hat in physical units."""
    nz = state.normalizer
    h, c = emu.forward(state.emulator, (W - nz.in_mean) / nz.in_std, cache=cache)
    w_hat = nz.out_mean + nz.out_std * h
    if nz.residual:
        w_hat = w_hat + W
    return w_hat, c


def predict(state, W, projection=None):
    """One step of the learned operator (projected unless disabled)."""
    w_hat, _ = emulate(state, W)
    use_proj = state.projection_enabled if projection is None else projection
    if not use_proj:
        return w_hat
    return dissipative_project(state.energy, W, w_hat).w_star


@dataclass
class LossResult:
    total: float
    mse: float
    volume: float
    records: object
    max_ratio: float
    grads: dict = None


def param_dict(state):
    d = {}
    for i, (W, b) in enumerate(zip(state.emulator.weights, state.emulator.biases)):
        d[f"W{i}"] = W
        d[f"b{i}"] = b
    if state.projection_enabled:
        d["center"] = state.energy.center
        d["q_raw"] = state.energy.q_raw
    return d


def _set_params(state, d):
    L = len(state.emulator.weights)
    state.emulator.weights = [d[f"W{i}"] for i in range(L)]
    state.emulator.biases = [d[f"b{i}"] for i in range(L)]
    if state.projection_enabled:
        state.energy.center = d["center"]
        state.energy.q_raw = d["q_raw"]


def loss_forward(state, X, Y, lambda_vol=None, with_grad=False, stop_gradient_gamma=False):
    """Batch loss mean ||w* - y||^2 + lambda det(Q)^-1/2, optionally with gradients."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape != Y.shape or X.shape[0] == 0:
        raise ValueError(f"batch shapes {X.shape} and {Y.shape} must match and be nonempty")
    if X.shape[1] != state.n:
        raise ValueError(f"batch dimension {X.shape[1]} != model dimension {state.n}")
    lam = state.lambda_vol if lambda_vol is None else lambda_vol
    B = X.shape[0]
    w_hat, cache = emulate(state, X, cache=with_grad)
    rec = None
    max_ratio = 0.0
    volume = 0.0
    if state.projection_enabled:
        rec = dissipative_project(state.energy, X, w_hat, stop_gradient_gamma=stop_gradient_gamma)
        w_star = rec.w_star
        V_star = state.energy.quad(w_star - state.energy.center)
        max_ratio = float(np.max(V_star / lemma1_certificate(state.energy.k, rec.b)))
        volume, vol_grad = volume_penalty(state.energy)
    else:
        w_star = w_hat
    resid = w_star - Y
    mse = float(np.sum(resid * resid) / B)
    total = mse + (lam * volume if state.projection_enabled else 0.0)
    result = LossResult(total, mse, volume, rec, max_ratio)
    if not with_grad:
        return result

    g = 2.0 * resid / B
    grads = {}
    if state.projection_enabled:
        g_hat, _, eg = projection_backward(rec, g)
        grads["center"] = eg["center"]
        grads["q_raw"] = eg["q_raw"] + lam * vol_grad
    else:
        g_hat = g
    pg, _ = emu.backward(state.emulator, cache, state.normalizer.out_std * g_hat)
    for i, (gw, gb) in enumerate(zip(pg["weights"], pg["biases"])):
        grads[f"W{i}"] = gw
        grads[f"b{i}"] = gb
    result.grads = grads
    return result


def train_step(state, X, Y, config):
    """One Adam update over all learnable parameters. Mutates and returns ``state``."""
    res = loss_forward(state, X, Y, lambda_vol=config.lambda_vol, with_grad=True,
                       stop_gradient_gamma=config.stop_gradient_gamma)
    grads = res.grads
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    if config.grad_clip_norm:
        if config.clip_per_block:
            blocks = [[k for k in grads if k not in ENERGY_KEYS], [k for k in grads if k in ENERGY_KEYS]]
        else:
            blocks = [list(grads)]
        grads = dict(grads)
        for keys in blocks:
            norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in keys))
            if norm > config.grad_clip_norm:
                scale = config.grad_clip_norm / norm
                for k in keys:
                    grads[k] = grads[k] * scale

    params = param_dict(state)
    if state.adam_m is None:
        state.adam_m = {k: np.zeros_like(p) for k, p in params.items()}
        state.adam_v = {k: np.zeros_like(p) for k, p in params.items()}
    b1, b2 = config.adam_betas
    state.adam_t += 1
    t = state.adam_t
    new = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.adam_m[name] + (1.0 - b1) * g
        v = b2 * state.adam_v[name] + (1.0 - b2) * g * g
        state.adam_m[name], state.adam_v[name] = m, v
        lr = config.learning_rate
        if name in ENERGY_KEYS and config.energy_learning_rate is not None:
            lr = config.energy_learning_rate
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new[name] = p - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    _set_params(state, new)
    return state, res


def dataset_mse(state, X, Y, chunk=4096):
    total = 0.0
    for s in range(0, X.shape[0], chunk):
        total += loss_forward(state, X[s:s + chunk], Y[s:s + chunk], lambda_vol=0.0).mse * len(X[s:s + chunk])
    return total / X.shape[0]


def epoch_permutation(seed, epoch, size):
    rng = np.random.default_rng([seed, 0x5EED, epoch])
    return rng.permutation(size)


def train(config, X, Y, state, log=None):
    """Run ``config.epochs`` epochs of shuffled minibatch Adam on ``state``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    state.projection_enabled = config.projection_enabled
    state.lambda_vol = config.lambda_vol
    if not state.history:
        mse0 = dataset_mse(state, X, Y)
        state.history.append({"epoch": 0, "mse": mse0, "volume": _volume(state), "max_ratio": None})
    for _ in range(config.epochs):
        state.epoch += 1
        perm = epoch_permutation(config.seed, state.epoch, X.shape[0])
        mse_sum, count, max_ratio = 0.0, 0, 0.0
        for s in range(0, X.shape[0], config.batch_size):
            idx = perm[s:s + config.batch_size]
            state, res = train_step(state, X[idx], Y[idx], config)
            if res.max_ratio > 1.0 + 1e-9:
                raise AssertionError(
                    f"projection output exceeded its energy certificate (ratio {res.max_ratio})"
                )
            mse_sum += res.mse * len(idx)
            count += len(idx)
            max_ratio = max(max_ratio, res.max_ratio)
        entry = {"epoch": state.epoch, "mse": mse_sum / count, "volume": _volume(state),
                 "max_ratio": max_ratio if state.projection_enabled else None}
        if not np.isfinite(entry["mse"]):
            raise FloatingPointError(f"non-finite loss at epoch {state.epoch}")
        state.history.append(entry)
        if log is not None:
            log(f"epoch {state.epoch:4d}  mse {entry['mse']:.6g}  volume {entry['volume']:.6g}"
                f"  max V*/cap {max_ratio:.6f}")
        if config.checkpoint_every and config.checkpoint_path and state.epoch % config.checkpoint_every == 0:
            from .io import save_checkpoint
            save_checkpoint(config.checkpoint_path, state)
    return state


def _volume(state):
    return volume_penalty(state.energy)[0] if state.projection_enabled else 0.0


def config_dict(config):
    return asdict(config)
