import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from lipgan import autodiff as ad
from lipgan import lipschitz as lip
from lipgan import nn
from lipgan.errors import UsageError
from oracles import jacobi_spectral_norm


def test_jacobi_oracle_agrees_with_lapack():
    rng = np.random.default_rng(0)
    for shape in [(3, 3), (5, 2), (2, 7), (16, 16)]:
        w = rng.normal(size=shape)
        assert jacobi_spectral_norm(w) == pytest.approx(lip.spectral_norm(w), rel=1e-12)


def _state(w, seed=0):
    return lip.SnState(1.0, np.random.default_rng(seed).normal(size=np.shape(w)[0]))


def test_power_iteration_examples():
    w = np.diag([3.0, 1.0])
    assert lip.power_iteration(w, _state(w), 100) == pytest.approx(3.0, rel=1e-12)
    w = np.array([[0.0, 2.0], [0.0, 0.0]])
    s = lip.power_iteration(w, lip.SnState(1.0, np.array([0.6, 0.8])), 5)
    assert s == pytest.approx(2.0, rel=1e-12)
    # oracle for this one: eigenvalues of W^T W are {0, 4}
    assert math.sqrt(np.linalg.eigvalsh(w.T @ w).max()) == 2.0
    rng = np.random.default_rng(4)
    w = rng.normal(size=(8, 8))
    s = lip.power_iteration(w, _state(w), 200)
    assert abs(s - jacobi_spectral_norm(w)) / jacobi_spectral_norm(w) < 1e-6


def test_power_iteration_keeps_unit_vector_and_underestimates():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(6, 4))
    st_ = _state(w)
    for _ in range(20):
        s = lip.power_iteration(w, st_)
        assert abs(np.linalg.norm(st_.u) - 1.0) <= 1e-9
        assert s <= lip.spectral_norm(w) + 1e-12


def test_zero_matrix_is_flagged_and_passed_through():
    w = np.zeros((3, 2))
    st_ = _state(w)
    assert lip.power_iteration(w, st_) == 0.0
    assert st_.degenerate
    with pytest.warns(UserWarning):
        out = lip.sn_weight(w, st_)
    assert np.array_equal(out.value, w)


@pytest.mark.parametrize("k", [0.25, 0.5, 1.0, 5.0, 50.0])
def test_spectral_normalize_hits_k(k):
    rng = np.random.default_rng(int(k * 100))
    for shape in [(2, 16), (16, 16), (64, 64), (32, 1)]:
        w = rng.normal(size=shape)
        st_ = lip.init_sn_state(w, k, 1, rng)
        wn = lip.sn_weight(w, st_).value
        assert jacobi_spectral_norm(wn) == pytest.approx(k, rel=1e-3)


def test_scaling_example():
    w = np.diag([4.0, 1.0, 0.5])
    st_ = lip.init_sn_state(w, 0.5, 1, 0)
    wn = lip.sn_weight(w, st_).value
    assert_allclose(wn, w / 8.0, rtol=1e-12)


@pytest.mark.parametrize("k,n", [(50.0, 4), (0.5, 4)])
def test_layer_product_equals_k_to_the_n(k, n):
    cfg = nn.MlpConfig([2] + [16] * (n - 1) + [1])
    p = nn.init_params(cfg, 0)
    states = lip.init_sn_states(p, k, 1, 0)
    ws = lip.spectral_normalize(p, states)
    assert lip.lipschitz_upper_bound(ws) == pytest.approx(k ** n, rel=1e-9)


def test_sn_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    w0 = rng.normal(size=(4, 3))
    st_ = lip.init_sn_state(w0, 2.0, 1, rng)
    uv = np.outer(st_.u, st_.v)
    c = rng.normal(size=(4, 3))
    fn = lambda w: (ad.apply("sn_scale", w, uv=uv, k=2.0) * c).sum()
    assert ad.finite_diff_check(fn, w0) < 1e-6


def test_gradient_penalty_examples():
    rng = np.random.default_rng(0)
    xr, xf = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    w = np.array([0.6, 0.8])
    with ad.Tape() as tape:
        wt = tape.watch(w)
        D = lambda x: ad.matmul(x, ad.reshape(wt, (2, 1)))
        gp = lip.gradient_penalty(D, xr, xf, lip.GpConfig(10.0, 1.0), rng)
    assert gp.item() == pytest.approx(0.0, abs=1e-24)
    with ad.Tape() as tape:
        wt = tape.watch(2 * w)
        D = lambda x: ad.matmul(x, ad.reshape(wt, (2, 1)))
        gp = lip.gradient_penalty(D, xr, xf, lip.GpConfig(10.0, 1.0), rng)
    assert gp.item() == pytest.approx(10.0, rel=1e-12)


def test_gradient_penalty_errors():
    D = lambda x: x
    with pytest.raises(UsageError):
        with ad.Tape():
            lip.gradient_penalty(D, np.ones((3, 2)), np.ones((4, 2)), lip.GpConfig(), np.random.default_rng())
    with pytest.raises(UsageError):
        lip.gradient_penalty(D, np.ones((3, 2)), np.ones((3, 2)), lip.GpConfig(), np.random.default_rng())
    with pytest.raises(UsageError):
        lip.GpConfig(lam=-1.0)


@pytest.mark.parametrize("widths", [[2, 6, 1], [2, 6, 5, 1]])
def test_gradient_penalty_parameter_gradient(widths):
    rng = np.random.default_rng(7)
    cfg = nn.MlpConfig(widths)
    p = nn.init_params(cfg, rng)
    xr, xf = rng.uniform(-1, 1, (6, 2)), rng.uniform(-1, 1, (6, 2))
    theta0 = p.flat()
    shapes = p.shapes()

    def penalty(theta):
        parts, i = [], 0
        for s in shapes:
            n = math.prod(s)
            parts.append(ad.reshape(ad.rows(theta, i, i + n), tuple(s)))
            i += n
        q = nn.ParamStore.from_tensors(parts)
        D = lambda x: nn.scores(q, cfg, x)
        return lip.gradient_penalty(D, xr, xf, lip.GpConfig(10.0, 1.0), np.random.default_rng(3))

    assert ad.finite_diff_check(penalty, theta0) < 1e-4


def test_gradient_penalty_symmetric_in_distribution():
    rng = np.random.default_rng(0)
    cfg = nn.MlpConfig([2, 8, 1], "tanh")
    p = nn.init_params(cfg, 1)
    xr, xf = rng.normal(size=(4000, 2)), rng.normal(loc=2.0, size=(4000, 2))
    D = lambda x: nn.scores(p, cfg, x)
    with ad.Tape():
        a = lip.gradient_penalty(D, xr, xf, lip.GpConfig(), np.random.default_rng(1)).item()
        b = lip.gradient_penalty(D, xf, xr, lip.GpConfig(), np.random.default_rng(2)).item()
    assert a == pytest.approx(b, rel=0.05)


def test_domain_bound_examples():
    assert lip.domain_bound(1.0, (32, 32, 3)) == pytest.approx(110.851, abs=1e-3)
    assert lip.domain_bound(1.0, (32, 32, 3)) == pytest.approx(64 * math.sqrt(3), rel=1e-15)
    assert lip.domain_bound(0.0, (32, 32, 3)) == 0.0
    assert lip.domain_bound(2.0, 1) == 4.0
    with pytest.raises(UsageError):
        lip.domain_bound(1.0, 3, (1.0, -1.0))


def test_gradient_interval_bound_examples():
    assert lip.gradient_interval_bound(0.0, 17.0, (32, 32, 3)) == 0.0
    assert lip.gradient_interval_bound(0.25, 1.0, (32, 32, 3)) == pytest.approx(27.71, abs=5e-3)
    assert lip.gradient_interval_bound(1.0, 1.0, 1) == 2.0


def test_empirical_lipschitz_examples():
    rng = np.random.default_rng(0)
    w = np.array([3.0, -4.0])
    x = rng.normal(size=(200, 2))
    est = lip.empirical_lipschitz(lambda s: ad.as_tensor(s).value @ w, x, 2000, rng)
    assert est <= 5.0 + 1e-12
    along = np.array([[0.0, 0.0], [0.6, -0.8]])
    assert lip.empirical_lipschitz(lambda s: s @ w, along, 50, rng) == pytest.approx(5.0, rel=1e-12)
    assert lip.empirical_lipschitz(lambda s: np.zeros(len(s)), x, 100, rng) == 0.0
    with pytest.warns(UserWarning):
        assert lip.empirical_lipschitz(lambda s: s[:, 0], np.ones((5, 2)), 10, rng) == 0.0


def test_empirical_below_one_for_unit_sn_net():
    rng = np.random.default_rng(5)
    cfg = nn.MlpConfig([2, 32, 32, 32, 1])
    p = nn.init_params(cfg, rng)
    ws = [w.value for w in lip.spectral_normalize(p, lip.init_sn_states(p, 1.0, 1, rng))]
    f = lambda x: nn.scores(p, cfg, x, ws)
    assert lip.empirical_lipschitz(f, rng.uniform(-1, 1, (500, 2)), 5000, rng) <= 1.0 + 1e-9


def test_upper_bound_examples():
    assert lip.lipschitz_upper_bound([np.eye(3)]) == 1.0
    assert lip.lipschitz_upper_bound([np.diag([2.0, 1.0]), np.diag([3.0, 0.5])]) == pytest.approx(6.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.sampled_from([0.25, 0.5, 1.0, 2.0]))
def test_domain_bound_on_random_sn_nets(seed, k):
    rng = np.random.default_rng(seed)
    cfg = nn.MlpConfig([2, 16, 16, 1])
    p = nn.init_params(cfg, rng)
    p.biases = [rng.normal(size=b.shape) for b in p.biases]
    ws = [w.value for w in lip.spectral_normalize(p, lip.init_sn_states(p, k, 1, rng))]
    x = rng.uniform(-1, 1, size=(512, 2))
    x[:4] = [[-1, -1], [1, 1], [-1, 1], [1, -1]]
    f = nn.scores(p, cfg, x, ws).value
    assert f.max() - f.min() <= lip.domain_bound(lip.lipschitz_upper_bound(ws), (2,)) + 1e-6
    # and the empirical estimate never beats the product bound
    est = lip.empirical_lipschitz(lambda s: nn.scores(p, cfg, s, ws), x, 500, rng)
    assert est <= lip.lipschitz_upper_bound(ws) + 1e-9
