import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissipnet.emulator import forward, init_params
from dissipnet.energy import QuadraticEnergy, eval_V
from dissipnet.projection import lemma1_certificate
from dissipnet.rollout import rollout, verify_dissipativity
from dissipnet.training import Normalizer, TrainState


def make_state(rng, n=3, mode="full", hidden=(16, 16), seed=0, projection=True, **kw):
    raw = rng.standard_normal(n) - 3 if mode == "diag" else np.tril(rng.standard_normal((n, n))) - 3 * np.eye(n)
    energy = QuadraticEnergy(rng.standard_normal(n), raw, mode, **kw)
    params = init_params([n, *hidden, n], seed=seed)
    return TrainState(params, energy, Normalizer.identity(n, residual=False),
                      projection_enabled=projection, dt_sample=0.05, system_tag="test")


def start_at(energy, V, rng):
    u = rng.standard_normal(energy.n)
    return energy.center + u * np.sqrt(V / eval_V(energy, energy.center + u))


def test_one_step_from_center(rng):
    for seed in range(10):
        st = make_state(rng, seed=seed)
        scale = 10.0 ** rng.uniform(0, 4)
        res = rollout(st, st.energy.center, 1, step_fn=lambda w: scale * forward(st.emulator, w)[0])
        e = st.energy
        assert res.energy_trace[1] <= lemma1_certificate(e.k, e.alpha * e.c)


def test_trace_is_energy_of_states(rng):
    st = make_state(rng)
    res = rollout(st, start_at(st.energy, 5e4, rng), 200)
    np.testing.assert_allclose(res.energy_trace, eval_V(st.energy, res.trajectory.states), rtol=1e-12)
    assert res.trajectory.dt_sample == 0.05 and res.trajectory.system_tag == "test"
    assert res.trajectory.T == 201


def test_long_rollout_untrained_is_bounded(rng):
    st = make_state(rng, hidden=(32,))
    res = rollout(st, start_at(st.energy, 1e6, rng), 40_000,
                  step_fn=lambda w: 50.0 * forward(st.emulator, w)[0] + 3 * w)
    assert res.bounded and np.all(np.isfinite(res.trajectory.states))
    e = st.energy
    assert res.entry_step is not None
    # the entry state may lie anywhere in (cap, c]; every later state is capped
    assert res.max_post_entry_energy <= e.c
    assert res.energy_trace[res.entry_step + 1:].max() <= lemma1_certificate(e.k, e.alpha * e.c)
    assert verify_dissipativity(res, e).passed


def test_adversarial_unprojected_blowup(rng):
    st = make_state(rng, projection=False)
    w0 = np.array([1.0, 0.0, 0.0])
    res = rollout(st, w0, 2000, step_fn=lambda w: 2.0 * w)
    assert not res.bounded and res.blowup_step is not None and res.blowup_step <= 1100
    assert res.trajectory.T == res.blowup_step + 1
    # projection keeps the same map bounded
    res = rollout(st, w0, 2000, projection=True, step_fn=lambda w: 2.0 * w)
    assert res.bounded and verify_dissipativity(res, st.energy).passed


def test_rollout_validation(rng):
    st = make_state(rng)
    with pytest.raises(ValueError):
        rollout(st, np.zeros(3), 0)
    with pytest.raises(ValueError):
        rollout(st, np.zeros(4), 5)


def energy_1d(alpha=0.99, c=1000.0, k=100.0):
    return QuadraticEnergy.from_diagonal(np.zeros(1), np.ones(1), alpha=alpha, c=c, k=k)


def test_verify_inside_and_entry_bound():
    e = energy_1d()
    rep = verify_dissipativity(np.array([10.0, 900.0, 990.0, 5.0]), e)
    assert rep.passed and rep.entry_step == 0 and rep.entry_bound == 0
    V0 = 100 * e.c
    assert np.log(0.01) / np.log(0.99) == pytest.approx(458.2, abs=0.05)
    trace = V0 * 0.99 ** np.arange(500.0)
    rep = verify_dissipativity(trace, e)
    assert rep.passed and rep.entry_bound == 459 and rep.entry_step <= 459


def test_verify_fault_injection():
    e = energy_1d()
    trace = 1e5 * 0.99 ** np.arange(50.0)
    trace[17] = trace[16] * 0.995  # too slow a decrease above c
    rep = verify_dissipativity(trace, e)
    assert not rep.passed and rep.first_violation == 17 and "(a)" in rep.violation
    trace = np.array([500.0, 800.0, 1100.0])
    rep = verify_dissipativity(trace, e)
    assert not rep.passed and rep.first_violation == 2 and "(b)" in rep.violation
    rep = verify_dissipativity(np.r_[1e5 * 0.99 ** np.arange(300.0), np.full(10, np.nan)], e)
    assert not rep.passed and rep.violation == "non-finite energy"


def test_verify_entry_time_violation():
    # k huge makes the per-step slack negligible, so an exact alpha decay enters on
    # the bound; duplicating one state is an (a) violation
    e = energy_1d(alpha=0.5, c=10.0, k=1e12)
    trace = np.array([1e4, 5e3, 2.5e3, 1.25e3, 625.0, 312.5, 156.25, 78.125, 39.0625, 19.53125, 9.765625])
    rep = verify_dissipativity(trace, e)
    assert rep.passed and rep.entry_step == 10 and rep.entry_bound == 10
    rep = verify_dissipativity(np.r_[trace[:5], trace[4] * 0.5, trace[5:]], e)
    assert not rep.passed


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), logV0=st.floats(0, 6), logscale=st.floats(-1, 4),
       mode=st.sampled_from(["diag", "full"]))
def test_random_emulators_stay_dissipative(seed, logV0, logscale, mode):
    rng = np.random.default_rng(seed)
    st_ = make_state(rng, n=4, mode=mode, hidden=(12,), seed=seed % 1000)
    scale = 10.0**logscale
    res = rollout(st_, start_at(st_.energy, 10.0**logV0, rng), 600,
                  step_fn=lambda w: scale * forward(st_.emulator, w)[0] + w)
    assert np.all(np.isfinite(res.trajectory.states))
    assert verify_dissipativity(res, st_.energy).passed


def test_verify_entry_time_only_violation():
    # small k leaves real per-step slack: decaying at exactly (1+delta)^2 alpha
    # satisfies (a) at every step yet enters later than ceil(log_alpha(c / V0))
    e = energy_1d(alpha=0.05, c=25.0, k=0.01)
    trace = [25.0 * 0.05**-3 * 0.9999]
    while trace[-1] > e.c:
        trace.append(lemma1_certificate(e.k, e.alpha * trace[-1]) * (1 - 1e-12))
    rep = verify_dissipativity(np.array(trace), e)
    assert rep.entry_bound == 3 and rep.entry_step == 4
    assert not rep.passed and "(c)" in rep.violation
