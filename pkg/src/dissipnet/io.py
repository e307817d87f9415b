"""Persistence: binary trajectory files, JSON checkpoints, CSV exports.

Trajectory file layout (all little-endian)::

    magic      8 bytes  b"ECOTRAJ1"
    n          uint32
    T          uint64
    dt_sample  float64
    system_tag 16 bytes ASCII, zero padded
    payload    T * n float64, row-major
"""

import csv
import json
import struct

import numpy as np

from .dynamics import Trajectory
from .emulator import EmulatorParams
from .energy import QuadraticEnergy
from .training import Normalizer, TrainState

MAGIC = b"ECOTRAJ1"
HEADER = struct.Struct("<8sIQd16s")
CHECKPOINT_VERSION = 1
EXPORT_KINDS = ("trajectory", "energy_trace", "spectrum", "pca_projection", "histogram")


class TrajectoryFormatError(ValueError):
    pass


class BadMagicError(TrajectoryFormatError):
    pass


class TruncatedFileError(TrajectoryFormatError):
    pass


class DimensionOverflowError(TrajectoryFormatError):
    pass


class CheckpointError(ValueError):
    pass


def write_trajectory(path, traj):
    states = np.ascontiguousarray(traj.states, dtype="<f8")
    T, n = states.shape
    if n >= 2**32 or n == 0:
        raise DimensionOverflowError(f"state dimension {n} does not fit the header")
    tag = traj.system_tag.encode("ascii")
    if len(tag) > 16:
        raise ValueError(f"system tag {traj.system_tag!r} longer than 16 bytes")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, n, T, float(traj.dt_sample), tag.ljust(16, b"\0")))
        fh.write(states.tobytes())


def read_trajectory(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        if not raw.startswith(MAGIC[: len(raw)]) or len(raw) < len(MAGIC):
            raise BadMagicError(f"{path}: bad magic (not a trajectory file)")
        raise TruncatedFileError(f"{path}: truncated header")
    magic, n, T, dt, tag = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if n == 0 or T * n > (2**63 - 1) // 8:
        raise DimensionOverflowError(f"{path}: header dimensions n={n}, T={T} are invalid")
    expected = T * n * 8
    payload = raw[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: truncated payload ({len(payload)} of {expected} bytes, header says T={T})"
        )
    if len(payload) > expected:
        raise TrajectoryFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    states = np.frombuffer(payload, dtype="<f8").reshape(T, n).astype(float)
    return Trajectory(states, dt, tag.rstrip(b"\0").decode("ascii"))


# -- checkpoints ----------------------------------------------------------------


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def state_to_dict(state, train_config=None):
    e = state.energy
    nz = state.normalizer
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "system": {"n": state.n, "system_tag": state.system_tag, "dt_sample": state.dt_sample},
        "projection_enabled": state.projection_enabled,
        "normalization": {"in_mean": _arr(nz.in_mean), "in_std": _arr(nz.in_std),
                          "out_mean": _arr(nz.out_mean), "out_std": _arr(nz.out_std),
                          "residual": nz.residual},
        "emulator": {"layer_sizes": list(state.emulator.layer_sizes),
                     "activation": state.emulator.activation,
                     "weights": [_arr(W) for W in state.emulator.weights],
                     "biases": [_arr(b) for b in state.emulator.biases]},
        "energy": {"mode": e.mode, "center": _arr(e.center), "q_raw": _arr(e.q_raw)},
        "hyperparams": {"alpha": e.alpha, "c": e.c, "k": e.k, "lambda_vol": state.lambda_vol},
        "epoch": state.epoch,
        "history": state.history,
        "optimizer": None,
    }
    if state.adam_m is not None:
        doc["optimizer"] = {"t": state.adam_t,
                            "m": {k: _arr(v) for k, v in state.adam_m.items()},
                            "v": {k: _arr(v) for k, v in state.adam_v.items()}}
    if train_config is not None:
        from dataclasses import asdict
        doc["train_config"] = asdict(train_config)
    return doc


def state_from_dict(doc):
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {doc.get('format_version')!r} != {CHECKPOINT_VERSION}"
        )
    hp = doc["hyperparams"]
    en = doc["energy"]
    try:
        energy = QuadraticEnergy(np.array(en["center"]), np.array(en["q_raw"]), en["mode"],
                                 hp["alpha"], hp["c"], hp["k"])
    except ValueError as exc:
        raise CheckpointError(f"invalid energy hyperparameters: {exc}") from exc
    em = doc["emulator"]
    params = EmulatorParams(list(em["layer_sizes"]), [np.array(W) for W in em["weights"]],
                            [np.array(b) for b in em["biases"]], em["activation"])
    nz = doc["normalization"]
    normalizer = Normalizer(np.array(nz["in_mean"]), np.array(nz["in_std"]),
                            np.array(nz["out_mean"]), np.array(nz["out_std"]), nz["residual"])
    sysd = doc["system"]
    state = TrainState(params, energy, normalizer, projection_enabled=doc["projection_enabled"],
                       epoch=doc["epoch"], history=doc.get("history", []),
                       system_tag=sysd["system_tag"], lambda_vol=hp["lambda_vol"],
                       dt_sample=sysd["dt_sample"])
    opt = doc.get("optimizer")
    if opt:
        state.adam_t = opt["t"]
        state.adam_m = {k: np.array(v) for k, v in opt["m"].items()}
        state.adam_v = {k: np.array(v) for k, v in opt["v"].items()}
    if params.n != sysd["n"]:
        raise CheckpointError("emulator width does not match the recorded state dimension")
    return state


def save_checkpoint(path, state, train_config=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_dict(state, train_config), fh, allow_nan=False)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return state_from_dict(doc)


# -- CSV ------------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def export_csv(kind, source, path):
    """Write ``source`` as CSV.

    trajectory      Trajectory or T x n array     -> step, w0..w{n-1}
    energy_trace    1D array                      -> step, V
    spectrum        1D array over modes 1..n/2    -> mode, energy
    pca_projection  T x 2 array                   -> pc1, pc2
    histogram       (edges, probabilities)        -> bin_lo, bin_hi, p
    """
    if kind not in EXPORT_KINDS:
        raise ValueError(f"unknown export kind {kind!r}; choose from {EXPORT_KINDS}")
    with open(path, "w", newline="", encoding="ascii") as fh:
        out = csv.writer(fh, lineterminator="\n")
        if kind == "trajectory":
            states = np.asarray(getattr(source, "states", source), dtype=float)
            out.writerow(["step"] + [f"w{i}" for i in range(states.shape[1])])
            for t, row in enumerate(states):
                out.writerow([t] + [_fmt(v) for v in row])
        elif kind == "energy_trace":
            out.writerow(["step", "V"])
            for t, v in enumerate(np.ravel(source)):
                out.writerow([t, _fmt(v)])
        elif kind == "spectrum":
            out.writerow(["mode", "energy"])
            for m, v in enumerate(np.ravel(source), start=1):
                out.writerow([m, _fmt(v)])
        elif kind == "pca_projection":
            pts = np.asarray(source, dtype=float)
            out.writerow(["pc1", "pc2"])
            for a, b in pts[:, :2]:
                out.writerow([_fmt(a), _fmt(b)])
        else:
            edges, probs = source
            out.writerow(["bin_lo", "bin_hi", "p"])
            for lo, hi, p in zip(edges[:-1], edges[1:], probs):
                out.writerow([_fmt(lo), _fmt(hi), _fmt(p)])


def read_csv(path):
    """Header list and float matrix from a CSV written by export_csv."""
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
