import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissipnet.energy import (EPS_PD, QuadraticEnergy, alpha_threshold, check_hyperparameters,
                              eval_V, grad_V_params, grad_V_state, log_det_Q, materialize,
                              volume_penalty)
from dissipnet.numerics import cholesky

from conftest import central_diff, rel_err


def random_energy(rng, n, mode, **kw):
    center = rng.standard_normal(n)
    raw = rng.standard_normal(n) if mode == "diag" else np.tril(rng.standard_normal((n, n)))
    return QuadraticEnergy(center, raw, mode, **kw)


def test_materialize_examples(rng):
    e = QuadraticEnergy.from_diagonal(np.zeros(3), np.ones(3))
    Q, L = materialize(e)
    np.testing.assert_allclose(Q, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(L, np.eye(3), atol=1e-12)
    _, L = materialize(QuadraticEnergy.from_diagonal(np.zeros(2), [4.0, 9.0]))
    np.testing.assert_allclose(L, np.diag([2.0, 3.0]), atol=1e-12)
    for _ in range(5):
        Q, L = materialize(random_energy(rng, 6, "full"))
        np.testing.assert_allclose(cholesky(Q) @ cholesky(Q).T, Q, atol=1e-10)
        np.testing.assert_allclose(L @ L.T, Q, atol=1e-12)


@pytest.mark.parametrize("mode", ["diag", "full"])
def test_eval_V_examples(mode):
    e = QuadraticEnergy.from_diagonal(np.zeros(2), [1.0, 1.0], mode=mode)
    assert eval_V(e, e.center) == 0.0
    assert eval_V(e, [3.0, 4.0]) == pytest.approx(25.0, rel=1e-12)
    e = QuadraticEnergy.from_diagonal(np.array([1.0, 0.0]), [2.0, 1.0], mode=mode)
    assert eval_V(e, [2.0, 2.0]) == pytest.approx(6.0, rel=1e-12)
    with pytest.raises(ValueError):
        eval_V(e, np.zeros(3))


def test_grad_V_state_examples(rng):
    e = QuadraticEnergy.from_diagonal(np.zeros(2), [1.0, 1.0])
    np.testing.assert_allclose(grad_V_state(e, [3.0, 4.0]), [6.0, 8.0], rtol=1e-12)
    np.testing.assert_array_equal(grad_V_state(e, e.center), 0.0)
    with pytest.raises(ValueError):
        grad_V_state(e, np.zeros(5))


def test_grad_V_params_examples():
    e = QuadraticEnergy.from_diagonal(np.zeros(3), [1.0, 2.0, 3.0])
    g = grad_V_params(e, e.center)
    assert not np.any(g["center"]) and not np.any(g["q_raw"])
    g = grad_V_params(e, np.array([1.0, 0.0, 0.0]))
    assert g["q_raw"][0] != 0.0 and not np.any(g["q_raw"][1:])
    with pytest.raises(ValueError):
        grad_V_params(e, np.zeros(2))


@pytest.mark.parametrize("mode", ["diag", "full"])
def test_gradients_match_finite_differences(mode, rng):
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        e = random_energy(rng, n, mode)
        w = e.center + rng.standard_normal(n)
        worst = max(worst, rel_err(grad_V_state(e, w), central_diff(lambda x: eval_V(e, x), w)))

        def V_center(c):
            return eval_V(QuadraticEnergy(c, e.q_raw, mode), w)

        def V_raw(r):
            return eval_V(QuadraticEnergy(e.center, r, mode), w)

        g = grad_V_params(e, w)
        worst = max(worst, rel_err(g["center"], central_diff(V_center, e.center)))
        worst = max(worst, rel_err(g["q_raw"], central_diff(V_raw, e.q_raw)))

        def vol(r):
            return volume_penalty(QuadraticEnergy(e.center, r, mode))[0]

        worst = max(worst, rel_err(volume_penalty(e)[1], central_diff(vol, e.q_raw)))
    assert worst <= 1e-5


def test_volume_penalty_examples():
    for n in (1, 3, 7):
        for mode in ("diag", "full"):
            e = QuadraticEnergy.from_diagonal(np.zeros(n), np.ones(n), mode=mode)
            assert volume_penalty(e)[0] == pytest.approx(1.0, rel=1e-12)
    e = QuadraticEnergy.from_diagonal(np.zeros(2), [4.0, 4.0])
    assert np.exp(log_det_Q(e)) == pytest.approx(16.0, rel=1e-12)
    assert volume_penalty(e)[0] == pytest.approx(0.25, rel=1e-12)


def test_alpha_threshold_examples():
    assert round(alpha_threshold(100.0), 4) == 0.9913
    assert alpha_threshold(2.0) == pytest.approx((8.0 / 9.0) ** 2, rel=1e-14)
    assert alpha_threshold(1e12) == pytest.approx(1.0, abs=1e-6)
    ks = np.logspace(-2, 8, 200)
    assert np.all(np.diff([alpha_threshold(k) for k in ks]) > 0)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            alpha_threshold(bad)


def test_constructor_rejects_invalid_hyperparameters():
    z = np.zeros(2)
    QuadraticEnergy(z, z, alpha=0.99, c=1000, k=100)
    with pytest.raises(ValueError, match="0.9913"):
        QuadraticEnergy(z, z, alpha=0.995, c=1000, k=100)
    with pytest.raises(ValueError, match="0.9913"):
        QuadraticEnergy(z, z, alpha=0.999, c=1000, k=100)
    with pytest.raises(ValueError):
        QuadraticEnergy(z, z, alpha=0.5, c=2.0, k=100)  # c <= 1/alpha
    with pytest.raises(ValueError):
        check_hyperparameters(0.5, 10.0, -1.0)
    with pytest.raises(ValueError):
        QuadraticEnergy(z, np.zeros(3))
    with pytest.raises(ValueError):
        QuadraticEnergy(z, z, mode="banana")


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6), mode=st.sampled_from(["diag", "full"]),
       scale=st.floats(-60, 5))
def test_radially_unbounded(seed, n, mode, scale):
    rng = np.random.default_rng(seed)
    e = random_energy(rng, n, mode)
    # push raw parameters toward -inf so Q approaches its eps floor
    e.q_raw = e.q_raw + scale * (1.0 if mode == "diag" else np.eye(n))
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    V1 = eval_V(e, e.center + u)
    assert V1 > 0
    for t in (1.0, 10.0, 100.0):
        V = eval_V(e, e.center + t * u)
        assert V / t**2 == pytest.approx(V1, rel=1e-9)
        if mode == "diag":
            assert V / t**2 >= EPS_PD * (1 - 1e-12)
    # full mode: det(Q) = prod(L_ii^2) with every L_ii >= eps, so Q is PD
    assert np.all(np.diag(materialize(e)[1]) >= EPS_PD)


def test_from_data_contains_states(rng):
    X = rng.standard_normal((500, 3)) * [5.0, 1.0, 20.0] + [0.0, 0.0, 30.0]
    for mode in ("diag", "full"):
        e = QuadraticEnergy.from_data(X, mode=mode)
        np.testing.assert_allclose(e.center, X.mean(0))
        V = eval_V(e, X)
        assert V.max() == pytest.approx(e.alpha * e.c / 4.0, rel=1e-6)
