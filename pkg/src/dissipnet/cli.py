"""Command-line entry point: simulate, train, rollout, eval, export."""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor


from . import io
from .dynamics import KSConfig, Trajectory, build_pairs, random_lorenz_state, simulate_ks, simulate_lorenz
from .energy import check_hyperparameters
from .metrics import evaluate, histogram_1d, padded_range, power_spectrum
from .numerics import is_power_of_two, top_principal_components
from .rollout import rollout, verify_dissipativity
from .training import TrainConfig, config_dict, init_state, train

# Per-system training defaults; flags left unset fall back to these.
SYSTEM_DEFAULTS = {
    "lorenz": dict(q_mode="full", activation="tanh", hidden=(150,) * 6, lambda_vol=1e-4,
                   clip="global", batch=256, epochs=40),
    "ks": dict(q_mode="diag", activation="gelu", hidden=(512, 512, 512), lambda_vol=1e25,
               clip="block", batch=64, epochs=150),
}


class UsageError(Exception):
    """Bad flag combination detected after parsing (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None and "default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _system_of(tag):
    if tag == "lorenz":
        return "lorenz"
    if tag.startswith("ks"):
        return "ks"
    raise ValueError(f"unrecognized system tag {tag!r}")


def _header(args, command):
    print(f"# dissipnet {command}  seed={args.seed}  threads={args.threads}", flush=True)


# -- simulate -------------------------------------------------------------------


def _simulate_one(system, duration, dt_sample, resolution, seed):
    if system == "lorenz":
        return simulate_lorenz(duration=duration, dt_sample=dt_sample,
                               dt_internal=min(0.005, dt_sample), seed=seed)
    cfg = KSConfig(grid_points=resolution, snapshot_interval=dt_sample,
                   dt_internal=min(0.25, dt_sample))
    return simulate_ks(cfg, duration=duration, seed=seed)


def _out_paths(out, count):
    if count == 1:
        return [out]
    root, ext = os.path.splitext(out)
    return [f"{root}_{i}{ext}" for i in range(count)]


def cmd_simulate(args):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.system == "ks" and not is_power_of_two(args.resolution):
        raise UsageError(f"--resolution {args.resolution} is not a power of two")
    dt = args.dt_sample if args.dt_sample is not None else (0.05 if args.system == "lorenz" else 1.0)
    seeds = [args.seed + i for i in range(args.count)]
    jobs = [(args.system, args.duration, dt, args.resolution, s) for s in seeds]
    if args.threads > 1 and args.count > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            trajs = list(pool.map(_simulate_one, *zip(*jobs)))
    else:
        trajs = [_simulate_one(*j) for j in jobs]
    for path, seed, traj in zip(_out_paths(args.out, args.count), seeds, trajs):
        io.write_trajectory(path, traj)
        print(f"{path}: system={traj.system_tag} seed={seed} states={traj.T} n={traj.n} "
              f"dt={traj.dt_sample} min={traj.states.min():.6g} max={traj.states.max():.6g}")
    return 0


# -- train ----------------------------------------------------------------------


def cmd_train(args):
    trajs = [io.read_trajectory(p) for p in args.data]
    systems = {_system_of(t.system_tag) for t in trajs}
    dims = {t.n for t in trajs}
    if len(systems) != 1 or len(dims) != 1:
        raise ValueError("all --data files must come from the same system and resolution")
    system = systems.pop()
    d = SYSTEM_DEFAULTS[system]
    projection = not args.no_projection
    alpha, c, k = args.alpha, args.c, args.k
    if projection:
        try:
            check_hyperparameters(alpha, c, k)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        # the energy never acts on an unconstrained model; keep a valid inert one
        defaults = build_parser()._subparsers._group_actions[0].choices["train"]
        alpha, c, k = (defaults.get_default(f) for f in ("alpha", "c", "k"))
        if (args.alpha, args.c, args.k) != (alpha, c, k):
            print("# note: --alpha/--c/--k are ignored without projection")
    q_mode = args.q_mode or d["q_mode"]
    lam = d["lambda_vol"] if args.lambda_vol is None else args.lambda_vol
    epochs = d["epochs"] if args.epochs is None else args.epochs
    batch = d["batch"] if args.batch is None else args.batch
    hidden = tuple(args.hidden) if args.hidden else d["hidden"]
    clip = args.clip or d["clip"]

    X, Y = build_pairs(trajs, skip=args.skip)
    state = init_state(X, Y, hidden=hidden, activation=d["activation"], q_mode=q_mode,
                       alpha=alpha, c=c, k=k, seed=args.seed,
                       projection_enabled=projection, system_tag=trajs[0].system_tag,
                       lambda_vol=lam, dt_sample=trajs[0].dt_sample)
    config = TrainConfig(lambda_vol=lam, learning_rate=args.lr, epochs=epochs, batch_size=batch,
                         seed=args.seed, projection_enabled=projection,
                         clip_per_block=clip == "block",
                         checkpoint_every=args.checkpoint_every,
                         checkpoint_path=args.out if args.checkpoint_every else None)
    print(f"# system={system} pairs={X.shape[0]} layers={state.emulator.layer_sizes} "
          f"q_mode={q_mode} projection={'on' if projection else 'off (unconstrained baseline)'}")
    print(f"# config {json.dumps(config_dict(config))}")
    train(config, X, Y, state, log=print)
    io.save_checkpoint(args.out, state, config)
    print(f"wrote {args.out}" + ("" if projection else "  [unconstrained]"))
    return 0


# -- rollout --------------------------------------------------------------------


def _initial_state(spec, state):
    if spec.startswith("random:"):
        seed = int(spec.split(":", 1)[1])
        system = _system_of(state.system_tag)
        if system == "lorenz":
            return random_lorenz_state(seed), f"random seed {seed}"
        from .dynamics import ks_initial_condition
        n = state.n
        cfg = KSConfig(grid_points=n)
        # settle the small random field onto the attractor before handing it over
        w = simulate_ks(cfg, ks_initial_condition(cfg, seed), duration=200.0).states[-1]
        return w, f"random seed {seed} (KS, 200 s spin-up)"
    traj = io.read_trajectory(spec)
    return traj.states[0], f"first state of {spec}"


def cmd_rollout(args):
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    state = io.load_checkpoint(args.ckpt)
    w0, origin = _initial_state(args.init, state)
    if w0.shape != (state.n,):
        raise ValueError(f"initial state has dimension {w0.shape[0]}, checkpoint expects {state.n}")
    print(f"# init: {origin}; projection={'on' if state.projection_enabled else 'off'}")
    result = rollout(state, w0, args.steps)
    io.write_trajectory(args.out, result.trajectory)
    if args.trace_out:
        io.write_trajectory(args.trace_out,
                            Trajectory(result.energy_trace[:, None], state.dt_sample, "energy"))
    report = {"steps": int(result.trajectory.T - 1), "bounded": result.bounded,
              "blowup_step": result.blowup_step, "entry_step": result.entry_step,
              "max_post_entry_energy": result.max_post_entry_energy}
    if state.projection_enabled:
        report["dissipativity"] = verify_dissipativity(result, state.energy).as_dict()
    print(json.dumps(report, indent=2))
    if not result.bounded:
        print(f"FLAG: rollout blew up at step {result.blowup_step}")
    return 0


# -- eval -----------------------------------------------------------------------


def cmd_eval(args):
    truth = io.read_trajectory(args.truth)
    pred = io.read_trajectory(args.pred)
    if truth.n != pred.n:
        raise ValueError(f"incompatible dimensions: truth n={truth.n}, pred n={pred.n}")
    report = evaluate(truth, pred, bins=args.bins, transient=args.transient).as_dict()
    text = json.dumps(report, indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


# -- export ---------------------------------------------------------------------


def cmd_export(args):
    kind = args.kind
    if kind not in io.EXPORT_KINDS:
        raise UsageError(f"unknown kind {kind!r}; choose from {', '.join(io.EXPORT_KINDS)}")
    trajs = [io.read_trajectory(p) for p in args.inputs]
    outs = _out_paths(args.out, len(trajs))
    if kind == "pca_projection":
        ref = trajs[0].states
        comps = top_principal_components(ref, 2)[0]
        for traj, path in zip(trajs, outs):
            io.export_csv(kind, (traj.states - ref.mean(axis=0)) @ comps.T, path)
    else:
        for traj, path in zip(trajs, outs):
            if kind == "trajectory":
                src = traj
            elif kind == "energy_trace":
                src = traj.states[:, 0]
            elif kind == "spectrum":
                src = power_spectrum(traj)
            else:
                lo, hi = padded_range(trajs[0].states)
                counts, edges = histogram_1d(traj.states, lo, hi, args.bins)
                src = (edges, counts / counts.sum())
            io.export_csv(kind, src, path)
    for path in outs:
        print(f"wrote {path}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--threads", type=int, default=1,
                        help="maximum concurrent workers (multi-trajectory simulation)")

    p = _Parser(prog="dissipnet", description=__doc__, formatter_class=_Formatter,
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kw = dict(formatter_class=_Formatter, parents=[common])

    s = sub.add_parser("simulate", help="generate ground-truth trajectories", **kw)
    s.add_argument("--system", choices=["lorenz", "ks"], required=True, help="dynamical system")
    s.add_argument("--duration", type=float, default=2000.0, help="simulated time span")
    s.add_argument("--dt-sample", type=float, default=None,
                   help="sampling interval (default: 0.05 lorenz, 1.0 ks)")
    s.add_argument("--resolution", type=int, default=128, help="KS grid points (power of two)")
    s.add_argument("--count", type=int, default=1,
                   help="number of trajectories; seeds are seed, seed+1, ...")
    s.add_argument("--out", default="trajectory.bin", help="output file (suffixed _i when count > 1)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train an emulator and its energy", **kw)
    t.add_argument("--data", nargs="+", required=True, help="trajectory files")
    t.add_argument("--out", default="model.ckpt.json", help="checkpoint path")
    t.add_argument("--epochs", type=int, default=None, help="epochs (default: 40 lorenz, 150 ks)")
    t.add_argument("--batch", type=int, default=None, help="batch size (default: 256 lorenz, 64 ks)")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    t.add_argument("--lambda", dest="lambda_vol", type=float, default=None,
                   help="volume penalty weight (default: 1e-4 lorenz, 1e25 ks)")
    t.add_argument("--alpha", type=float, default=0.99, help="contraction factor")
    t.add_argument("--c", type=float, default=1000.0, help="energy level of the invariant set")
    t.add_argument("--k", type=float, default=100.0, help="sigmoid sharpness")
    t.add_argument("--no-projection", action="store_true", help="train the unconstrained baseline")
    t.add_argument("--clip", choices=["block", "global"], default=None,
                   help="gradient clipping per parameter block or on the global norm "
                        "(default: global lorenz, block ks)")
    t.add_argument("--q-mode", choices=["diag", "full"], default=None,
                   help="energy matrix form (default: full lorenz, diag ks)")
    t.add_argument("--hidden", type=int, nargs="+", default=None,
                   help="hidden widths (default: 150 x6 lorenz, 512 x3 ks)")
    t.add_argument("--skip", type=int, default=0, help="leading states dropped from each file")
    t.add_argument("--checkpoint-every", type=int, default=0,
                   help="also write the checkpoint every N epochs (0 disables)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="autoregressive rollout from a checkpoint", **kw)
    r.add_argument("--ckpt", required=True, help="checkpoint path")
    r.add_argument("--init", default="random:0", help="trajectory file (first state) or random:SEED")
    r.add_argument("--steps", type=int, default=1000, help="number of steps")
    r.add_argument("--out", default="rollout.bin", help="output trajectory file")
    r.add_argument("--trace-out", default=None,
                   help="energy trace file, stored as a one-column trajectory (default: not written)")
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="compare a prediction with ground truth", **kw)
    e.add_argument("--truth", required=True, help="ground-truth trajectory")
    e.add_argument("--pred", required=True, help="predicted trajectory")
    e.add_argument("--report", default=None, help="JSON report path (default: stdout only)")
    e.add_argument("--bins", type=int, default=100, help="histogram bins")
    e.add_argument("--transient", type=int, default=50, help="leading states dropped")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write CSV tables for external plotting", **kw)
    x.add_argument("--kind", required=True, help=f"one of {', '.join(io.EXPORT_KINDS)}")
    x.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="trajectory files; for pca_projection the first fixes the basis")
    x.add_argument("--out", required=True, help="CSV path (suffixed _i for several inputs)")
    x.add_argument("--bins", type=int, default=100, help="bins for the histogram kind")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    _header(args, args.command)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dissipnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"dissipnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
