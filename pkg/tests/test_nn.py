import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lipgan import autodiff as ad
from lipgan import lipschitz as lip
from lipgan import nn
from lipgan.errors import ConfigurationError, FormatError


def test_init_is_deterministic_and_chains():
    cfg = nn.MlpConfig([2, 8, 1])
    a, b = nn.init_params(cfg, 7), nn.init_params(cfg, 7)
    assert a.equals(b)
    assert [w.shape for w in a.weights] == [(2, 8), (8, 1)]
    assert all(np.all(bias == 0) for bias in a.biases)


def test_init_statistics():
    cfg = nn.MlpConfig([100, 100])
    w = nn.init_params(cfg, 0).weights[0]
    limit = np.sqrt(6.0 / 200)
    assert np.all(np.abs(w) <= limit)
    sigma = limit / np.sqrt(3.0)
    assert abs(w.mean()) < 3 * sigma / 100


def test_config_validation():
    with pytest.raises(ConfigurationError):
        nn.MlpConfig([2, 0, 1])
    with pytest.raises(ConfigurationError):
        nn.MlpConfig([2, 4, 1], slope=1.5)
    with pytest.raises(ConfigurationError):
        nn.MlpConfig([2, 4, 2]).check_discriminator()
    with pytest.raises(ConfigurationError):
        nn.ParamStore([np.ones((2, 3)), np.ones((4, 1))], [np.zeros(3), np.zeros(1)])


def test_forward_trivial_cases():
    cfg = nn.MlpConfig([3, 4, 1])
    zero = nn.ParamStore([np.zeros((3, 4)), np.zeros((4, 1))], [np.zeros(4), np.zeros(1)])
    assert_array_equal(nn.forward(zero, cfg, np.ones((5, 3))).value, np.zeros((5, 1)))
    ident = nn.ParamStore([np.eye(3)], [np.zeros(3)])
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert_array_equal(nn.forward(ident, nn.MlpConfig([3, 3]), x).value, x)
    with pytest.raises(ConfigurationError):
        nn.forward(zero, cfg, np.ones((5, 2)))


def test_forward_matches_hand_rolled_oracle():
    rng = np.random.default_rng(1)
    cfg = nn.MlpConfig([3, 5, 2], "leaky_relu", 0.2, "tanh")
    p = nn.init_params(cfg, rng)
    p.biases = [rng.normal(size=5), rng.normal(size=2)]
    x = rng.normal(size=(6, 3))
    # independent loop-based dense arithmetic
    h = np.zeros((6, 5))
    for i in range(6):
        for j in range(5):
            s = p.biases[0][j] + sum(x[i, k] * p.weights[0][k, j] for k in range(3))
            h[i, j] = s if s > 0 else 0.2 * s
    out = np.zeros((6, 2))
    for i in range(6):
        for j in range(2):
            out[i, j] = np.tanh(p.biases[1][j] + sum(h[i, k] * p.weights[1][k, j] for k in range(5)))
    assert_allclose(nn.forward(p, cfg, x).value, out, rtol=1e-13)


def test_forward_is_pure():
    cfg = nn.MlpConfig([2, 6, 1])
    p = nn.init_params(cfg, 3)
    before = p.copy()
    x = np.random.default_rng(2).normal(size=(8, 2))
    a = nn.scores(p, cfg, x).value
    b = nn.scores(p, cfg, x).value
    assert_array_equal(a, b)
    assert p.equals(before)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), act=st.sampled_from(["leaky_relu", "tanh", "relu"]))
def test_empirical_lipschitz_below_layer_product(seed, act):
    rng = np.random.default_rng(seed)
    cfg = nn.MlpConfig([3, 8, 8, 1], act, 0.2)
    p = nn.init_params(cfg, rng)
    f = lambda x: nn.scores(p, cfg, x)
    est = lip.empirical_lipschitz(f, rng.uniform(-1, 1, size=(64, 3)), 500, rng)
    assert est <= lip.lipschitz_upper_bound(p, cfg.activation_lipschitz()) + 1e-9


def test_checkpoint_round_trip(tmp_path):
    cfg = nn.MlpConfig([2, 4, 1])
    p = nn.init_params(cfg, 5)
    path = tmp_path / "d.ckpt"
    nn.save_checkpoint(path, p, cfg, seed=5, iteration=12)
    q, cfg2, header = nn.load_checkpoint(path)
    assert q.equals(p)
    assert cfg2 == cfg
    assert header["seed"] == 5 and header["iteration"] == 12
    raw = path.read_bytes()
    head, body = raw.split(b"\n", 1)
    assert len(body) == 8 * p.flat().size
    assert_array_equal(np.frombuffer(body, dtype="<f8"), p.flat())


def test_truncated_checkpoint_is_a_format_error(tmp_path):
    cfg = nn.MlpConfig([2, 4, 1])
    path = tmp_path / "d.ckpt"
    nn.save_checkpoint(path, nn.init_params(cfg, 0), cfg)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError, match="expected"):
        nn.load_checkpoint(path)


def test_gradients_flow_to_all_parameters():
    cfg = nn.MlpConfig([2, 4, 1])
    p = nn.init_params(cfg, 0)
    with ad.Tape() as tape:
        P = p.watch(tape)
        y = nn.scores(P, cfg, np.array([[0.3, -0.7], [0.5, 0.1]])).sum()
    grads = ad.backward(y, P.tensors())
    assert [g.shape for g in grads] == [tuple(s) for s in p.shapes()]
