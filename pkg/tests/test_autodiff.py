import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, dense_log_density, max_relative_error, mixture_nll_direct
from regimevar.errors import DataError, NumericalError
from regimevar.nn import (ParamStore, Tensor, adamax_step, balance_regularizer,
                          causal_dilated_conv_forward, dense_forward, lstm_sequence, lstm_step,
                          regime_head, regularized_loss, sequence_loss)
from regimevar.nn import autodiff as ad
from regimevar.nn.layers import init_conv, init_dense, init_lstm
from regimevar.nn.losses import gaussian_logpdf
from regimevar.nn.params import GmmHeadParams, factor_from_raw, raw_from_factor


def check_gradients(loss_fn, store: ParamStore, extra: tuple[Tensor, ...] = (), tol=1e-5):
    """Compare backward() against central differences for every parameter and extra leaf."""
    store.zero_grad()
    for t in extra:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    # central differences carry roundoff of order |f| * 1e-16 / eps, so tiny
    # gradient entries of a large loss are compared on an absolute scale
    floor = max(1e-4, abs(float(loss.data)) * 1e-5)
    worst = 0.0
    leaves = list(store.params.values()) + list(extra)
    for t in leaves:
        numeric = central_difference(lambda: float(loss_fn().data), t.data)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_relative_error(analytic, numeric, floor=floor))
    assert worst < tol, worst


def projected(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.total(out * weights)


# dense

def test_dense_identity_weights():
    s = ParamStore()
    s.add("d.W", np.eye(3))
    s.add("d.b", np.zeros(3))
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(dense_forward(s, "d", x).data, np.tanh(x))
    np.testing.assert_allclose(dense_forward(s, "d", x, activation=False).data, x)


def test_dense_zero_weights():
    s = ParamStore()
    s.add("d.W", np.zeros((2, 3)))
    s.add("d.b", [0.1, -0.5, 2.0])
    np.testing.assert_allclose(dense_forward(s, "d", [4.0, 5.0]).data, np.tanh([0.1, -0.5, 2.0]))


def test_dense_shape_mismatch(rng):
    s = ParamStore()
    init_dense(s, "d", 3, 2, rng)
    with pytest.raises(DataError):
        dense_forward(s, "d", np.ones(4))


def test_dense_gradients(rng):
    s = ParamStore()
    init_dense(s, "a", 4, 6, rng)
    init_dense(s, "b", 6, 3, rng)
    x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    w = rng.normal(size=(5, 3))
    check_gradients(lambda: projected(dense_forward(s, "b", dense_forward(s, "a", x)), w), s, (x,))


# causal convolution

def test_conv_identity_tap(rng):
    s = ParamStore()
    W = np.zeros((3, 2, 2))
    W[2] = np.eye(2)
    s.add("c.W", W)
    s.add("c.b", np.zeros(2))
    x = rng.normal(size=(9, 2))
    for d in (1, 2, 8, 64):
        np.testing.assert_array_equal(causal_dilated_conv_forward(s, "c", x, d).data, x)


def test_conv_causality(rng):
    s = ParamStore()
    init_conv(s, "c", 1, 3, rng)
    s.set("c.b", np.zeros(3))
    x = np.zeros((30, 1))
    x[12] = 1.0
    y = causal_dilated_conv_forward(s, "c", x, 4).data
    assert np.all(y[:12] == 0)
    assert np.flatnonzero(np.any(y != 0, axis=1)).tolist() == [12, 16, 20]


def test_conv_taps_and_zero_padding(rng):
    s = ParamStore()
    W = rng.normal(size=(3, 2, 1))
    s.add("c.W", W)
    s.add("c.b", [0.5])
    x = rng.normal(size=(7, 2))
    y = causal_dilated_conv_forward(s, "c", x, 2).data
    pad = np.vstack([np.zeros((4, 2)), x])
    for t in range(7):
        expect = 0.5 + pad[t + 4] @ W[2] + pad[t + 2] @ W[1] + pad[t] @ W[0]
        assert y[t, 0] == pytest.approx(expect[0], abs=1e-14)


def test_receptive_field_255(rng):
    s = ParamStore()
    dilations = [2 ** i for i in range(7)]
    for i, d in enumerate(dilations):
        init_conv(s, f"c{i}", 1, 1, rng)
    T = 400
    x = Tensor(np.zeros((T, 1)), requires_grad=True)

    def net():
        h = x
        for i, d in enumerate(dilations):
            h = ad.tanh(causal_dilated_conv_forward(s, f"c{i}", h, d))
        return h[T - 1, 0]

    net().backward()
    support = np.flatnonzero(x.grad[:, 0] != 0)
    assert support.max() == T - 1
    assert T - support.min() == 1 + 2 * (2 ** 7 - 1) == 255


def test_conv_gradients(rng):
    s = ParamStore()
    init_conv(s, "c0", 2, 3, rng)
    init_conv(s, "c1", 3, 2, rng)
    x = Tensor(rng.normal(size=(12, 2)), requires_grad=True)
    w = rng.normal(size=(12, 2))

    def f():
        h = ad.tanh(causal_dilated_conv_forward(s, "c0", x, 1))
        return projected(causal_dilated_conv_forward(s, "c1", h, 4), w)
    check_gradients(f, s, (x,))


# LSTM

def test_lstm_zero_weights():
    s = ParamStore()
    s.add("l.W", np.zeros((3 + 4, 16)))
    s.add("l.b", np.zeros(16))
    h, (h2, c2) = lstm_step(s, "l", (np.zeros(4), np.zeros(4)), [1.0, -2.0, 3.0])
    np.testing.assert_array_equal(h.data, 0)
    np.testing.assert_array_equal(c2.data, 0)


def test_lstm_state_size_checked(rng):
    s = ParamStore()
    init_lstm(s, "l", 2, 5, rng)
    with pytest.raises(DataError):
        lstm_step(s, "l", (np.zeros(4), np.zeros(4)), np.ones(2))


def test_lstm_single_step_gradients(rng):
    s = ParamStore()
    init_lstm(s, "l", 3, 5, rng)
    x = Tensor(rng.normal(size=3), requires_grad=True)
    h0 = Tensor(rng.normal(size=5), requires_grad=True)
    c0 = Tensor(rng.normal(size=5), requires_grad=True)
    w = rng.normal(size=(2, 5))

    def f():
        h, (_, c) = lstm_step(s, "l", (h0, c0), x)
        return projected(h, w[0]) + projected(c, w[1])
    check_gradients(f, s, (x, h0, c0))


def test_lstm_fused_sequence_matches_steps(rng):
    s = ParamStore()
    init_lstm(s, "l", 2, 5, rng)
    x = rng.normal(size=(20, 2))
    hs, (hT, cT) = lstm_sequence(s, "l", x)
    state = (np.zeros(5), np.zeros(5))
    for t in range(20):
        h, state = lstm_step(s, "l", state, x[t])
        np.testing.assert_allclose(hs.data[t], h.data, atol=1e-14)
    np.testing.assert_allclose(cT, state[1].data, atol=1e-14)


def test_lstm_50_step_unrolled_gradients(rng):
    s = ParamStore()
    init_lstm(s, "l", 2, 5, rng)
    x = Tensor(rng.normal(size=(50, 2)), requires_grad=True)
    w = rng.normal(size=(50, 5))

    def unrolled():
        state = (np.zeros(5), np.zeros(5))
        out = []
        for t in range(50):
            h, state = lstm_step(s, "l", state, x[t])
            out.append(ad.total(h * w[t]))
        total = out[0]
        for o in out[1:]:
            total = total + o
        return total
    check_gradients(unrolled, s, (x,), tol=1e-4)
    check_gradients(lambda: projected(lstm_sequence(s, "l", x)[0], w), s, (x,), tol=1e-4)


# softmax head

def test_head_zero_logits_uniform():
    s = ParamStore()
    s.add("head.W", np.zeros((3, 4)))
    s.add("head.b", np.zeros(4))
    np.testing.assert_allclose(regime_head(s, np.ones(3)).data, 0.25)


def test_softmax_extreme_logits():
    p = ad.softmax(Tensor([100.0, -100.0])).data
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and 0 < p[1] < 1e-80


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-1e3, 1e3))
def test_softmax_properties(logits, shift):
    p = ad.softmax(Tensor(logits)).data
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(ad.softmax(Tensor(np.array(logits) + shift)).data, p, atol=1e-12)


def test_head_gradients(rng):
    s = ParamStore()
    init_dense(s, "head", 4, 3, rng)
    x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    w = rng.normal(size=(6, 3))
    check_gradients(lambda: projected(regime_head(s, x), w), s, (x,))
    v = rng.normal(size=(6, 4))
    check_gradients(lambda: projected(ad.log_softmax(x), v), s, (x,))


# losses

def _gmm_store(rng, k, n):
    s = ParamStore()
    s.add("gmm.mean", rng.normal(size=(k, n)) * 0.3, decay=False)
    raw = rng.normal(size=(k, n, n)) * 0.3
    s.add("gmm.chol", raw, decay=False)
    return s, GmmHeadParams(s)


def test_gaussian_logpdf_matches_dense(rng):
    s, gmm = _gmm_store(rng, 3, 2)
    X = rng.normal(size=(7, 2))
    out = gaussian_logpdf(X, s["gmm.mean"], s["gmm.chol"]).data
    covs = gmm.covariances()
    for t in range(7):
        for i in range(3):
            assert out[t, i] == pytest.approx(dense_log_density(gmm.means[i], covs[i], X[t]), abs=1e-10)


def test_gaussian_logpdf_gradients(rng):
    s, _ = _gmm_store(rng, 2, 3)
    X = rng.normal(size=(8, 3))
    w = rng.normal(size=(8, 2))
    check_gradients(lambda: projected(gaussian_logpdf(X, s["gmm.mean"], s["gmm.chol"]), w), s)


def test_sequence_loss_single_gaussian(rng):
    s, gmm = _gmm_store(rng, 1, 2)
    X = rng.normal(size=(10, 2))
    rows = np.arange(9)
    loss = sequence_loss(np.zeros((9, 1)), s["gmm.mean"], s["gmm.chol"], X, rows, 1).data
    cov = gmm.covariances()[0]
    expect = -sum(dense_log_density(gmm.means[0], cov, X[t]) for t in range(1, 10))
    assert float(loss) == pytest.approx(expect, abs=1e-10)


def test_sequence_loss_one_hot(rng):
    s, gmm = _gmm_store(rng, 2, 2)
    X = rng.normal(size=(12, 2))
    rows = np.arange(12)
    log_phi = np.log(np.tile([1.0, 1e-300], (12, 1)))
    log_phi[:, 1] = -np.inf
    loss = float(sequence_loss(log_phi, s["gmm.mean"], s["gmm.chol"], X, rows, 3).data)
    cov = gmm.covariances()[0]
    dens = {t: dense_log_density(gmm.means[0], cov, X[t]) for t in range(12)}
    expect = -sum(dens[t + j] for t in rows for j in (1, 2, 3) if t + j < 12)
    assert loss == pytest.approx(expect, abs=1e-10)


def test_sequence_loss_matches_direct_sum(rng):
    k, n, T, J = 3, 2, 11, 5
    s, gmm = _gmm_store(rng, k, n)
    X = rng.normal(size=(T, n))
    rows = np.arange(2, T)
    logits = Tensor(rng.normal(size=(len(rows), k)), requires_grad=True)

    def f():
        return sequence_loss(ad.log_softmax(logits), s["gmm.mean"], s["gmm.chol"], X, rows, J)
    phi = ad.softmax(logits).data
    expect = mixture_nll_direct(phi, gmm.means, gmm.covariances(), X, rows, J)
    assert float(f().data) == pytest.approx(expect, abs=1e-10)
    check_gradients(f, s, (logits,))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sequence_loss_nonfinite_density_reports_index(rng):
    s, _ = _gmm_store(rng, 2, 1)
    X = np.zeros((6, 1))
    X[4] = 1e200
    with pytest.raises(NumericalError, match="index 4"):
        sequence_loss(np.log(np.full((5, 2), 0.5)), s["gmm.mean"], s["gmm.chol"], X, np.arange(5), 1)


def test_regularizer_values():
    assert float(balance_regularizer(Tensor([[0.5, 0.5], [0.5, 0.5]])).data) == pytest.approx(0.5)
    assert float(balance_regularizer(Tensor([[0.9, 0.1], [0.1, 0.9]])).data) == pytest.approx(0.5)
    assert float(balance_regularizer(Tensor([[1.0, 0.0]] * 3)).data) == 1.0
    assert float(balance_regularizer(Tensor(np.full((5, 4), 0.25))).data) == pytest.approx(0.25)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 20))
def test_regularizer_range(seed, k, T):
    phi = np.random.default_rng(seed).dirichlet(np.ones(k) * 0.3, size=T)
    r = float(balance_regularizer(Tensor(phi)).data)
    assert 1.0 / k - 1e-12 <= r <= 1.0 + 1e-12


def test_regularizer_gradients(rng):
    logits = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
    check_gradients(lambda: balance_regularizer(ad.softmax(logits)), ParamStore(), (logits,))


def test_regularized_loss_factors():
    base = Tensor(3.0)
    assert float(regularized_loss(base, Tensor(1.0), 1.0).data) == 6.0
    assert float(regularized_loss(base, Tensor(0.5), 1.0).data) == 4.5
    assert float(regularized_loss(base, Tensor(0.7), 0.0).data) == 3.0
    assert float(regularized_loss(base, Tensor(0.5), 2.0).data) == 6.0


def test_full_objective_gradients(rng):
    s, _ = _gmm_store(rng, 2, 2)
    init_lstm(s, "lstm", 2, 5, rng)
    init_dense(s, "head", 5, 2, rng)
    X = rng.normal(size=(15, 2))
    rows = np.arange(15)

    def f():
        hs, _ = lstm_sequence(s, "lstm", X)
        logits = dense_forward(s, "head", hs, activation=False)
        base = sequence_loss(ad.log_softmax(logits), s["gmm.mean"], s["gmm.chol"], X, rows, 5)
        return regularized_loss(base, balance_regularizer(ad.softmax(logits)), 1.0)
    check_gradients(f, s)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_factor_always_positive_definite(seed, n):
    raw = np.random.default_rng(seed).normal(size=(n, n)) * 2
    L = factor_from_raw(raw)
    assert np.all(np.linalg.eigvalsh(L @ L.T) > 0)
    np.testing.assert_allclose(factor_from_raw(raw_from_factor(L)), L)


# optimizer

def _single(value=1.0, decay=True):
    s = ParamStore()
    s.add("p", [value], decay=decay)
    return s


def test_adamax_first_step_moves_by_learning_rate():
    s = _single(1.0)
    s["p"].grad = np.array([1.0])
    adamax_step(s, 0.01)
    assert s.value("p")[0] == pytest.approx(0.99, abs=1e-15)


def test_adamax_hand_evaluated_two_steps():
    s = _single(0.0)
    lr, b1, b2 = 0.1, 0.9, 0.999
    m = u = theta = 0.0
    for step, g in enumerate([2.0, -0.5], start=1):
        s["p"].grad = np.array([g])
        adamax_step(s, lr)
        m = b1 * m + (1 - b1) * g
        u = max(b2 * u, abs(g))
        theta -= lr / (1 - b1 ** step) * m / u
        assert s.value("p")[0] == pytest.approx(theta, abs=1e-15)


def test_adamax_zero_gradients_no_change():
    s = _single(0.7)
    s["p"].grad = np.zeros(1)
    adamax_step(s, 0.01)
    assert s.value("p")[0] == 0.7


def test_adamax_weight_decay_shrinks():
    s = _single(2.0)
    s["p"].grad = np.zeros(1)
    adamax_step(s, 0.01, weight_decay=0.5)
    assert s.value("p")[0] == pytest.approx(2.0 * (1 - 0.005), abs=1e-15)
    t = _single(2.0, decay=False)
    t["p"].grad = np.zeros(1)
    adamax_step(t, 0.01, weight_decay=0.5)
    assert t.value("p")[0] == 2.0


def test_adamax_rejects_nonfinite_gradient():
    s = _single(1.0)
    s["p"].grad = np.array([np.nan])
    with pytest.raises(NumericalError):
        adamax_step(s, 0.01)
    assert s.value("p")[0] == 1.0 and s.step == 0


def test_store_roundtrip(rng):
    s, _ = _gmm_store(rng, 2, 2)
    init_dense(s, "d", 2, 3, rng)
    back = ParamStore.from_dict(s.to_dict())
    assert back.no_decay == s.no_decay
    for k in s.names():
        np.testing.assert_array_equal(back.value(k), s.value(k))
    with pytest.raises(DataError):
        ParamStore.from_dict({**s.to_dict(), "version": 99})
