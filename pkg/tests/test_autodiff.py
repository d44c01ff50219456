import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kddt import autodiff as ad
from kddt.autodiff import ParameterStore, Tensor
from kddt.errors import ConfigurationError, DimensionError, DomainError, InvariantError, VocabularyError


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float32), requires_grad=grad)


def numeric_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def analytic_grad(f, x):
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    f(xt).backward()
    return xt.grad


# linear ---------------------------------------------------------------------

def test_linear_identity():
    y = ad.linear(t([3, 4]), t(np.eye(2)), t([0, 0]))
    np.testing.assert_array_equal(y.data, [3, 4])


def test_linear_hand_value():
    y = ad.linear(t([3, 4]), t([[1, 2]]), t([1]))
    np.testing.assert_array_equal(y.data, [12])


def test_linear_zero_weights():
    y = ad.linear(t([7, -2, 1]), t(np.zeros((2, 3))), t([5, 6]))
    np.testing.assert_array_equal(y.data, [5, 6])


def test_linear_shape_error_names_operand():
    with pytest.raises(DimensionError, match="x"):
        ad.linear(t([1, 2, 3]), t(np.zeros((2, 2))), t([0, 0]))
    with pytest.raises(DimensionError, match="b"):
        ad.linear(t([1, 2]), t(np.zeros((2, 2))), t([0, 0, 0]))


def test_linear_backward_accumulates():
    x, W, b = t([3, 4], True), t([[1, 2]], True), t([1], True)
    ad.linear(x, W, b).backward(np.ones(1, dtype=np.float32))
    np.testing.assert_array_equal(W.grad, [[3, 4]])
    np.testing.assert_array_equal(b.grad, [1])
    np.testing.assert_array_equal(x.grad, [1, 2])


# embedding --------------------------------------------------------------------

def test_embedding_lookup_order():
    E = t(np.arange(12).reshape(4, 3))
    out = ad.embedding([2, 0], E)
    np.testing.assert_array_equal(out.data, [[6, 7, 8], [0, 1, 2]])


def test_embedding_empty():
    out = ad.embedding([], t(np.ones((4, 3))))
    assert out.shape == (0, 3)


def test_embedding_duplicate_rows_accumulate():
    E = t(np.ones((3, 2)), True)
    out = ad.embedding([1, 1], E)
    out.backward(np.array([[1, 2], [10, 20]], dtype=np.float32))
    np.testing.assert_array_equal(E.grad, [[0, 0], [11, 22], [0, 0]])


def test_embedding_oov():
    with pytest.raises(VocabularyError):
        ad.embedding([4], t(np.ones((4, 2))))


# LSTM -------------------------------------------------------------------------

def _lstm_params(rng, d_in, H, dtype=np.float64, scale=0.5):
    return (Tensor(rng.normal(0, scale, (4 * H, d_in)).astype(dtype), requires_grad=True),
            Tensor(rng.normal(0, scale, (4 * H, H)).astype(dtype), requires_grad=True),
            Tensor(rng.normal(0, scale, (4 * H,)).astype(dtype), requires_grad=True))


def _sig(x):
    return 1 / (1 + math.exp(-x))


def test_lstm_zero_weights_gives_zero_outputs():
    H, d = 3, 2
    z = (t(np.zeros((4 * H, d))), t(np.zeros((4 * H, H))), t(np.zeros(4 * H)))
    h_seq, hL, cL = ad.lstm(t(np.random.default_rng(0).normal(size=(5, d))), *z)
    assert np.all(h_seq.data == 0) and np.all(hL.data == 0) and np.all(cL.data == 0)


def test_lstm_single_step_hand_evaluation():
    # 1-d input and hidden: gates from scalar weights
    w_ih = t([[0.5], [-0.3], [0.8], [0.2]])
    w_hh = t([[0.1], [0.4], [-0.2], [0.3]])
    b = t([0.05, 0.1, -0.1, 0.0])
    x, h0, c0 = 2.0, 0.5, -0.4
    h_seq, hL, cL = ad.lstm(t([[x]]), w_ih, w_hh, b, h0=np.array([h0]), c0=np.array([c0]))
    i = _sig(0.5 * x + 0.1 * h0 + 0.05)
    f = _sig(-0.3 * x + 0.4 * h0 + 0.1)
    g = math.tanh(0.8 * x - 0.2 * h0 - 0.1)
    o = _sig(0.2 * x + 0.3 * h0)
    c = f * c0 + i * g
    h = o * math.tanh(c)
    assert h_seq.data[0, 0] == pytest.approx(h, rel=1e-6)
    assert cL.data[0] == pytest.approx(c, rel=1e-6)


@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("masked", [False, True])
def test_lstm_gradient_matches_finite_differences(reverse, masked):
    rng = np.random.default_rng(1)
    B, L, d, H = 2, 4, 3, 2
    x0 = rng.normal(size=(B, L, d))
    mask = np.array([[1, 1, 1, 0], [0, 1, 1, 1]], bool) if masked else None
    params = _lstm_params(rng, d, H)
    weights = rng.normal(size=(B, L, H))

    def loss(xt, ps):
        h, _, _ = ad.lstm(xt, *ps, mask=mask, reverse=reverse)
        return ad.sum_(ad.mul(h, Tensor(weights)))

    xt = Tensor(x0, requires_grad=True)
    loss(xt, params).backward()
    num = numeric_grad(lambda xv: float(loss(Tensor(xv), params).data), x0)
    np.testing.assert_allclose(xt.grad, num, rtol=1e-5, atol=1e-7)
    for p in params:
        def f(pv, p=p):
            p_backup = p.data
            p.data = pv
            try:
                return float(loss(Tensor(x0), params).data)
            finally:
                p.data = p_backup
        np.testing.assert_allclose(p.grad, numeric_grad(f, p.data), rtol=1e-5, atol=1e-7)


def test_lstm_float32_gradients_within_1e3():
    rng = np.random.default_rng(2)
    d, H = 3, 4
    store = ParameterStore({
        "w_ih": rng.normal(0, 0.5, (4 * H, d)).astype(np.float32),
        "w_hh": rng.normal(0, 0.5, (4 * H, H)).astype(np.float32),
        "b": rng.normal(0, 0.5, (4 * H,)).astype(np.float32),
    })
    x = rng.normal(size=(5, d)).astype(np.float32)

    def fwd(s):
        h, _, _ = ad.lstm(x, s["w_ih"], s["w_hh"], s["b"])
        return ad.sum_(ad.square(h))

    assert ad.gradcheck(fwd, store, tol=1e-3).ok


# bi-LSTM ------------------------------------------------------------------------

def test_bilstm_palindrome_symmetric():
    rng = np.random.default_rng(3)
    ps = _lstm_params(rng, 2, 3)
    half = rng.normal(size=(3, 2))
    x = np.concatenate([half, half[::-1]])
    out = ad.bilstm(x, ps, ps).data
    np.testing.assert_allclose(out, out[::-1], atol=1e-12)


def test_bilstm_zero_backward_equals_forward():
    rng = np.random.default_rng(4)
    fwd = _lstm_params(rng, 2, 3)
    bwd = tuple(Tensor(np.zeros_like(p.data)) for p in fwd)
    x = rng.normal(size=(4, 2))
    np.testing.assert_allclose(ad.bilstm(x, fwd, bwd).data, ad.lstm(x, *fwd)[0].data)


def _brute_lstm(x, w_ih, w_hh, b):
    H = w_hh.shape[1]
    h = np.zeros(H)
    c = np.zeros(H)
    outs = []
    for xt in x:
        a = w_ih @ xt + w_hh @ h + b
        i, f, g, o = (1 / (1 + np.exp(-a[:H])), 1 / (1 + np.exp(-a[H:2 * H])),
                      np.tanh(a[2 * H:3 * H]), 1 / (1 + np.exp(-a[3 * H:])))
        c = f * c + i * g
        h = o * np.tanh(c)
        outs.append(h)
    return np.array(outs)


def test_bilstm_two_steps_brute_force():
    rng = np.random.default_rng(5)
    fwd = _lstm_params(rng, 2, 2)
    bwd = _lstm_params(rng, 2, 2)
    x = rng.normal(size=(2, 2))
    expected = _brute_lstm(x, *(p.data for p in fwd)) + _brute_lstm(x[::-1], *(p.data for p in bwd))[::-1]
    np.testing.assert_allclose(ad.bilstm(x, fwd, bwd).data, expected, rtol=1e-12)


def test_bilstm_hidden_mismatch():
    rng = np.random.default_rng(6)
    with pytest.raises(DimensionError):
        ad.bilstm(rng.normal(size=(3, 2)), _lstm_params(rng, 2, 3), _lstm_params(rng, 2, 4))


def test_masked_lstm_ignores_padding():
    rng = np.random.default_rng(7)
    ps = _lstm_params(rng, 2, 3)
    x = rng.normal(size=(4, 2))
    padded = np.concatenate([x, rng.normal(size=(3, 2))])
    mask = np.array([1, 1, 1, 1, 0, 0, 0], bool)
    full = ad.bilstm(padded, ps, ps, mask=mask).data
    np.testing.assert_allclose(full[:4], ad.bilstm(x, ps, ps).data, atol=1e-12)
    assert np.all(full[4:] == 0)


# conv / pool ------------------------------------------------------------------------

def test_conv_identity_kernel():
    x = t([[1, 2, 3, 4]])
    out = ad.conv1d(x, t([[[0, 1, 0]]]), t([0]))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_ones_kernel_zero_padding():
    out = ad.conv1d(t([[1, 2, 3]]), t([[[1, 1, 1]]]))
    np.testing.assert_array_equal(out.data, [[3, 6, 5]])


def test_conv_zero_kernel_bias():
    out = ad.conv1d(t(np.ones((2, 5))), t(np.zeros((3, 2, 3))), t([1.5, 1.5, 1.5]))
    np.testing.assert_array_equal(out.data, np.full((3, 5), 1.5))


def test_conv_even_kernel_rejected():
    with pytest.raises(ConfigurationError):
        ad.conv1d(t([[1, 2, 3]]), t([[[1, 1]]]))


def test_conv_gradient():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=(2, 3, 5))
    K = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
    bias = Tensor(rng.normal(size=4), requires_grad=True)
    w = rng.normal(size=(2, 4, 5))

    def f(xv):
        return float(ad.sum_(ad.mul(ad.conv1d(Tensor(xv), K, bias), Tensor(w))).data)

    xt = Tensor(x0, requires_grad=True)
    ad.sum_(ad.mul(ad.conv1d(xt, K, bias), Tensor(w))).backward()
    np.testing.assert_allclose(xt.grad, numeric_grad(f, x0), rtol=1e-6, atol=1e-8)

    def fk(kv):
        return float(ad.sum_(ad.mul(ad.conv1d(Tensor(x0), Tensor(kv), bias), Tensor(w))).data)

    np.testing.assert_allclose(K.grad, numeric_grad(fk, K.data), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(bias.grad, w.sum(axis=(0, 2)), rtol=1e-12)


def test_maxpool_definition():
    out = ad.maxpool1d(t([1, 3, 2, 5]), 2, 2)
    np.testing.assert_array_equal(out.data, [3, 5])


def test_maxpool_identity():
    x = t([[4, -1, 2]])
    np.testing.assert_array_equal(ad.maxpool1d(x, 1, 1).data, x.data)


def test_maxpool_tie_routes_to_first():
    x = t([2, 2], True)
    ad.maxpool1d(x, 2, 2).backward(np.ones(1, dtype=np.float32))
    np.testing.assert_array_equal(x.grad, [1, 0])


def test_maxpool_too_short():
    with pytest.raises(ConfigurationError):
        ad.maxpool1d(t([1, 2]), 3, 1)


def test_maxpool_right_padding_preserves_length():
    out = ad.maxpool1d(t([[-1, -3, -2]]), 2, 1, pad_right=1)
    np.testing.assert_array_equal(out.data, [[-1, -2, 0]])


def test_maxpool_gradient():
    rng = np.random.default_rng(9)
    x0 = rng.normal(size=(2, 3, 7))
    w = rng.normal(size=(2, 3, 3))
    xt = Tensor(x0, requires_grad=True)
    ad.sum_(ad.mul(ad.maxpool1d(xt, 2, 2), Tensor(w))).backward()
    num = numeric_grad(lambda xv: float(ad.sum_(ad.mul(ad.maxpool1d(Tensor(xv), 2, 2), Tensor(w))).data), x0)
    np.testing.assert_allclose(xt.grad, num, rtol=1e-6, atol=1e-8)


# activations / softmax / losses ------------------------------------------------------

def test_activations():
    np.testing.assert_array_equal(ad.relu(t([-1, 0, 2])).data, [0, 0, 2])
    assert ad.sigmoid(t([0.0])).data[0] == 0.5
    assert ad.sigmoid(Tensor(np.array([math.log(3)]))).data[0] == pytest.approx(0.75, abs=1e-12)
    assert ad.activation(t([0.0]), "tanh").data[0] == 0


def test_activation_gradients():
    x0 = np.array([-1.3, 0.4, 2.2])
    for fn in (ad.sigmoid, ad.tanh):
        g = analytic_grad(lambda x: ad.sum_(fn(x)), x0)
        np.testing.assert_allclose(g, numeric_grad(lambda v: float(ad.sum_(fn(Tensor(v))).data), x0), rtol=1e-7)


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(t([0, 0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ad.softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data, [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)
    np.testing.assert_allclose(ad.softmax(t([1000, 1000])).data, [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, st.integers(1, 12), elements=st.floats(-50, 50, width=32)),
       st.floats(-100, 100, width=32))
def test_softmax_normalised_and_shift_invariant(x, c):
    z = ad.softmax(Tensor(x)).data
    assert np.all(z >= 0)
    assert abs(float(z.sum()) - 1) < 1e-6
    np.testing.assert_allclose(ad.softmax(Tensor(x + np.float32(c))).data, z, atol=1e-6)


def test_cross_entropy_examples():
    assert ad.cross_entropy(t([0.5, 0.5]), 0).item() == pytest.approx(math.log(2), rel=1e-6)
    assert ad.cross_entropy(t([0, 1, 0]), 1).item() == 0
    for n in (2, 5, 260):
        z = np.full(n, 1 / n, dtype=np.float64)
        assert ad.cross_entropy(Tensor(z), 0).item() == pytest.approx(math.log(n), rel=1e-12)


def test_cross_entropy_clamps_zero_probability():
    assert ad.cross_entropy(t([1.0, 0.0]), 1).item() == pytest.approx(-math.log(1e-12), rel=1e-6)


def test_cross_entropy_through_softmax_is_z_minus_target():
    logits = Tensor(np.array([[0.2, -1.0, 3.0]]), requires_grad=True)
    z = ad.softmax(logits)
    ad.cross_entropy(z, [2]).backward(np.ones(1))
    expected = z.data.copy()
    expected[0, 2] -= 1
    np.testing.assert_allclose(logits.grad, expected, rtol=1e-12)


def test_cross_entropy_generic_path_gradient():
    x0 = np.array([0.2, 0.3, 0.5])
    g = analytic_grad(lambda z: ad.cross_entropy(z, 2), x0)
    np.testing.assert_allclose(g, [0, 0, -2.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-20, 20)), st.data())
def test_cross_entropy_nonnegative(logits, data):
    k = data.draw(st.integers(0, logits.size - 1))
    assert ad.cross_entropy(ad.softmax(Tensor(logits)), k).item() >= 0


def test_gaussian_kl_examples():
    assert ad.gaussian_kl(t(np.zeros(4)), t(np.ones(4))).item() == 0
    assert ad.gaussian_kl(t([1.0]), t([1.0])).item() == pytest.approx(0.5)
    sigma = math.sqrt(math.e)
    assert ad.gaussian_kl(Tensor(np.array([0.0])), Tensor(np.array([sigma]))).item() == pytest.approx((math.e - 2) / 2, rel=1e-12)
    assert (math.e - 2) / 2 == pytest.approx(0.3591, abs=1e-4)


def test_gaussian_kl_domain():
    with pytest.raises(DomainError):
        ad.gaussian_kl(t([0.0]), t([0.0]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-5, 5)), arrays(np.float64, 6, elements=st.floats(0.01, 5)))
def test_gaussian_kl_nonnegative(mu, sigma):
    assert ad.gaussian_kl(Tensor(mu), Tensor(sigma)).item() >= -1e-12


def test_gaussian_kl_gradient():
    mu0, s0 = np.array([0.3, -1.2]), np.array([0.4, 1.7])
    mu, s = Tensor(mu0, requires_grad=True), Tensor(s0, requires_grad=True)
    ad.gaussian_kl(mu, s).backward()
    np.testing.assert_allclose(mu.grad, numeric_grad(lambda v: ad.gaussian_kl(Tensor(v), Tensor(s0)).item(), mu0), rtol=1e-6)
    np.testing.assert_allclose(s.grad, numeric_grad(lambda v: ad.gaussian_kl(Tensor(mu0), Tensor(v)).item(), s0), rtol=1e-6)


def test_reparameterize():
    np.testing.assert_array_equal(ad.reparameterize(t([1, 2]), t([3, 4]), np.zeros(2)).data, [1, 2])
    assert ad.reparameterize(t([2]), t([3]), np.ones(1)).data[0] == 5


def test_reparameterize_gradients_by_finite_differences():
    mu0, s0, eps = np.array([0.5, -0.2]), np.array([0.7, 0.3]), np.array([1.5, -0.8])
    gm = numeric_grad(lambda v: float(ad.sum_(ad.reparameterize(Tensor(v), Tensor(s0), eps)).data), mu0)
    gs = numeric_grad(lambda v: float(ad.sum_(ad.reparameterize(Tensor(mu0), Tensor(v), eps)).data), s0)
    np.testing.assert_allclose(gm, [1, 1], rtol=1e-8)
    np.testing.assert_allclose(gs, eps, rtol=1e-8)
    mu, s = Tensor(mu0, requires_grad=True), Tensor(s0, requires_grad=True)
    ad.sum_(ad.reparameterize(mu, s, eps)).backward()
    np.testing.assert_allclose(mu.grad, gm, rtol=1e-8)
    np.testing.assert_allclose(s.grad, gs, rtol=1e-8)


def test_cosine_examples():
    assert ad.cosine_similarity(t([2, 3]), t([2, 3])).item() == pytest.approx(1, abs=1e-6)
    assert ad.cosine_similarity(t([1, 0]), t([0, 1])).item() == 0
    assert ad.cosine_similarity(t([1, 1]), t([1, 0])).item() == pytest.approx(1 / math.sqrt(2), abs=1e-6)
    assert ad.cosine_similarity(t([0, 0]), t([1, 0])).item() == 0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), arrays(np.float64, 5, elements=st.floats(-10, 10)),
       st.floats(0.01, 100))
def test_cosine_scale_invariant(a, b, lam):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    c1 = ad.cosine_similarity(Tensor(a), Tensor(b)).item()
    c2 = ad.cosine_similarity(Tensor(lam * a), Tensor(b)).item()
    assert abs(c1 - c2) < 1e-6
    assert -1 - 1e-9 <= c1 <= 1 + 1e-9


def test_cosine_gradient():
    a0, b0 = np.array([0.3, -1.0, 2.0]), np.array([1.0, 0.5, -0.2])
    a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
    ad.cosine_similarity(a, b).backward()
    np.testing.assert_allclose(a.grad, numeric_grad(lambda v: ad.cosine_similarity(Tensor(v), Tensor(b0)).item(), a0), rtol=1e-6)
    np.testing.assert_allclose(b.grad, numeric_grad(lambda v: ad.cosine_similarity(Tensor(a0), Tensor(v)).item(), b0), rtol=1e-6)


# optimizer ----------------------------------------------------------------------------

def _scalar_store(w):
    return ParameterStore({"w": np.array([w], dtype=np.float32)})


def test_adamw_zero_gradient_fixed_point():
    store = _scalar_store(0.7)
    state = ad.AdamWState(weight_decay=0.0)
    for _ in range(5):
        store["w"].grad = np.zeros(1, dtype=np.float32)
        ad.adamw_step(store, state)
    assert store["w"].data[0] == np.float32(0.7)


def test_adamw_first_step_hand_value():
    store = _scalar_store(1.0)
    state = ad.AdamWState(lr=0.001, beta1=0.9, beta2=0.999, weight_decay=0.0)
    store["w"].grad = np.ones(1, dtype=np.float32)
    ad.adamw_step(store, state)
    assert store["w"].data[0] == pytest.approx(0.999, abs=1e-6)
    assert state.step == 1
    assert store["w"].grad is None


def test_adamw_decoupled_decay():
    store = _scalar_store(2.0)
    state = ad.AdamWState(lr=0.001, weight_decay=0.1)
    store["w"].grad = np.zeros(1, dtype=np.float32)
    ad.adamw_step(store, state)
    assert store["w"].data[0] == pytest.approx(2.0 * (1 - 0.001 * 0.1), rel=1e-7)


def test_adamw_missing_gradient():
    with pytest.raises(InvariantError):
        ad.adamw_step(_scalar_store(1.0), ad.AdamWState())


def test_adamw_second_moment_nonnegative():
    rng = np.random.default_rng(0)
    store = ParameterStore({"a": rng.normal(size=(3, 2)).astype(np.float32)})
    state = ad.AdamWState()
    for _ in range(10):
        store["a"].grad = rng.normal(size=(3, 2)).astype(np.float32)
        ad.adamw_step(store, state)
        assert np.all(state.v["a"] >= 0)


# gradcheck / store / checkpoint -----------------------------------------------------------

def test_gradcheck_quadratic():
    store = ParameterStore({"x": np.array([1.0, -2.0, 0.5], dtype=np.float32)})
    report = ad.gradcheck(lambda s: ad.sum_(ad.square(s["x"])), store, tol=1e-6)
    assert report.ok and report.max_error < 1e-6


def test_gradcheck_flags_wrong_gradient():
    def broken(x):
        # forward x^2, backward pretends 3x
        return ad.tensor.make(x.data ** 2, (x,), lambda g: (g * 3 * x.data,), "broken")

    store = ParameterStore({"x": np.array([1.0, 2.0], dtype=np.float32)})
    report = ad.gradcheck(lambda s: ad.sum_(broken(s["x"])), store, tol=1e-3)
    assert report.flagged == ["x"]


def test_store_lexicographic_order():
    store = ParameterStore({"b": np.zeros(1), "a/z": np.zeros(1), "a/b": np.zeros(1)})
    assert store.names() == ["a/b", "a/z", "b"]


def test_checkpoint_round_trip_bit_exact():
    rng = np.random.default_rng(0)
    store = ParameterStore({
        "vae/mu/w": rng.normal(size=(3, 4)).astype(np.float32),
        "lm/embedding": rng.normal(size=(5, 2)).astype(np.float32),
        "scalar": np.array(np.float32(3.25)),
    })
    buf = io.BytesIO()
    ad.write_checkpoint(store, buf)
    raw = buf.getvalue()
    assert raw.startswith(b"KDDT1")
    # first entry is the lexicographically smallest name
    assert int.from_bytes(raw[5:9], "little") == len("lm/embedding")
    assert raw[9:9 + 12] == b"lm/embedding"
    loaded = ad.read_checkpoint(io.BytesIO(raw))
    assert list(loaded) == store.names()
    for name, tensor in store.items():
        assert loaded[name].tobytes() == tensor.data.tobytes()
        assert loaded[name].shape == tensor.shape


def test_checkpoint_truncated():
    store = ParameterStore({"w": np.ones((2, 2), dtype=np.float32)})
    buf = io.BytesIO()
    ad.write_checkpoint(store, buf)
    from kddt.errors import ParseError
    with pytest.raises(ParseError):
        ad.read_checkpoint(io.BytesIO(buf.getvalue()[:-3]))
