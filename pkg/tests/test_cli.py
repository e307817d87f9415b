import json

import numpy as np
import pytest

from dissipnet import io
from dissipnet.cli import build_parser, main


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_help_lists_every_flag_with_default(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for name, p in sub.items():
        text = p.format_help()
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.option_strings[-1] in text
                if not action.required:
                    help_str = p._get_formatter()._get_help_string(action)
                    assert "default" in help_str, (name, action.dest)


def test_simulate_lorenz_count_and_determinism(workdir):
    assert run(["simulate", "--system", "lorenz", "--duration", "20", "--dt-sample", "0.05",
                "--out", "a.bin", "--seed", "3"]) == 0
    assert run(["simulate", "--system", "lorenz", "--duration", "20", "--out", "b.bin", "--seed", "3"]) == 0
    assert io.read_trajectory("a.bin").T == 401
    assert (workdir / "a.bin").read_bytes() == (workdir / "b.bin").read_bytes()


def test_simulate_long_lorenz_state_count(workdir):
    assert run(["simulate", "--system", "lorenz", "--duration", "2000", "--dt-sample", "0.05",
                "--out", "l.bin"]) == 0
    assert io.read_trajectory("l.bin").T == 40_001


def test_simulate_errors(workdir, capsys):
    assert run(["simulate", "--system", "ks", "--resolution", "96"]) == 1
    assert "power of two" in capsys.readouterr().err
    assert run(["simulate", "--system", "navier"]) == 1
    assert run(["simulate", "--system", "lorenz", "--bogus"]) == 1
    assert run(["simulate", "--system", "lorenz", "--duration", "1", "--out",
                str(workdir / "missing" / "x.bin")]) == 2


def test_simulate_multiple_with_threads(workdir):
    assert run(["simulate", "--system", "ks", "--duration", "20", "--count", "2", "--threads", "2",
                "--out", "k.bin", "--seed", "1"]) == 0
    a, b = io.read_trajectory("k_0.bin"), io.read_trajectory("k_1.bin")
    assert a.T == 21 and a.system_tag == "ks128" and not np.array_equal(a.states, b.states)


@pytest.fixture
def lorenz_file(workdir):
    assert run(["simulate", "--system", "lorenz", "--duration", "30", "--out", "l.bin", "--seed", "1"]) == 0
    return "l.bin"


def test_train_alpha_threshold(lorenz_file, capsys):
    base = ["train", "--data", lorenz_file, "--epochs", "1", "--hidden", "8", "--k", "100"]
    assert run(base + ["--alpha", "0.99", "--out", "ok.json"]) == 0
    capsys.readouterr()
    assert run(base + ["--alpha", "0.995", "--out", "bad.json"]) == 1
    assert "0.9913" in capsys.readouterr().err
    assert run(base + ["--alpha", "0.995", "--no-projection", "--out", "free.json"]) == 0
    assert "[unconstrained]" in capsys.readouterr().out
    assert io.load_checkpoint("free.json").projection_enabled is False


def test_rollout_eval_export_pipeline(lorenz_file, workdir, capsys):
    assert run(["train", "--data", lorenz_file, "--epochs", "2", "--hidden", "16", "16",
                "--out", "m.json"]) == 0
    capsys.readouterr()
    assert run(["rollout", "--ckpt", "m.json", "--init", "random:5", "--steps", "300",
                "--out", "r.bin", "--trace-out", "tr.bin"]) == 0
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{"):])
    assert report["bounded"] and report["dissipativity"]["passed"]
    r, tr = io.read_trajectory("r.bin"), io.read_trajectory("tr.bin")
    assert r.T == 301 and tr.n == 1 and tr.T == 301
    assert run(["rollout", "--ckpt", "m.json", "--steps", "0"]) == 1
    assert run(["rollout", "--ckpt", "m.json", "--init", "nope.bin"]) == 2

    assert run(["eval", "--truth", lorenz_file, "--pred", lorenz_file, "--report", "rep.json"]) == 0
    rep = json.loads((workdir / "rep.json").read_text())
    assert rep["kl_physical"] == 0.0 and rep["kl_pca"] == 0.0 and rep["bounded"]
    assert run(["eval", "--truth", "missing.bin", "--pred", lorenz_file]) == 2
    assert run(["eval", "--truth", lorenz_file, "--pred", "tr.bin"]) == 2

    assert run(["export", "--kind", "energy_trace", "--in", "tr.bin", "--out", "e.csv"]) == 0
    header, rows = io.read_csv(workdir / "e.csv")
    assert header == ["step", "V"] and rows.shape == (301, 2)
    assert run(["export", "--kind", "pca_projection", "--in", lorenz_file, "r.bin", "--out", "p.csv"]) == 0
    assert io.read_csv(workdir / "p_0.csv")[0] == ["pc1", "pc2"]
    assert io.read_csv(workdir / "p_1.csv")[1].shape == (301, 2)
    assert run(["export", "--kind", "histogram", "--in", lorenz_file, "--out", "h.csv"]) == 0
    assert run(["export", "--kind", "surface", "--in", "tr.bin", "--out", "x.csv"]) == 1


def test_baseline_blowup_is_success(lorenz_file, workdir, capsys):
    assert run(["train", "--data", lorenz_file, "--epochs", "1", "--hidden", "8", "--no-projection",
                "--out", "b.json"]) == 0
    st = io.load_checkpoint("b.json")
    st.emulator.weights[-1] *= 0.0
    st.normalizer.out_mean[:] = 0.0
    st.normalizer.residual = False
    st.emulator.layer_sizes = list(st.emulator.layer_sizes)
    # make the baseline an exploding linear map: w -> 3 w
    st.normalizer.in_mean[:] = 0.0
    st.normalizer.in_std[:] = 1.0
    st.normalizer.out_std[:] = 1.0
    st.emulator.weights = [np.eye(3) * 3.0, ]
    st.emulator.biases = [np.zeros(3)]
    st.emulator.layer_sizes = [3, 3]
    io.save_checkpoint("b.json", st)
    capsys.readouterr()
    assert run(["rollout", "--ckpt", "b.json", "--init", "random:1", "--steps", "100", "--out", "r.bin"]) == 0
    out = capsys.readouterr().out
    assert "FLAG" in out and '"bounded": false' in out


def test_header_prints_seed(lorenz_file, capsys):
    capsys.readouterr()
    run(["eval", "--truth", lorenz_file, "--pred", lorenz_file, "--seed", "42"])
    assert "seed=42" in capsys.readouterr().out
