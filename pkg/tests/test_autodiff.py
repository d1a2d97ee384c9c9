import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcell import autodiff as ad


def leaf(arr):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def finite_diff(fn, arrs, h=1e-5):
    """Central-difference gradients of a scalar function of numpy arrays."""
    grads = []
    for arr in arrs:
        g = np.zeros_like(arr)
        flat, gf = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---------------------------------------------------------------- values


def test_hermitian_identity_element():
    t = ad.Tape()
    out = ad.hermitian_product(t, leaf([1.0, 0.0]), leaf([1.0, 0.0]))
    assert np.allclose(out.value, [1.0, 0.0])


def test_hermitian_imaginary_unit():
    # evaluating the two-branch formula by hand: (0,1)x(0,1) = (-1, 0)
    t = ad.Tape()
    out = ad.hermitian_product(t, leaf([0.0, 1.0]), leaf([0.0, 1.0]))
    assert np.allclose(out.value, [-1.0, 0.0])


def test_hermitian_hand_example():
    # (1,2)x(3,4): first 1*3-2*4=-5, second 1*4-2*3=-2
    t = ad.Tape()
    out = ad.hermitian_product(t, leaf([1.0, 2.0]), leaf([3.0, 4.0]))
    assert np.allclose(out.value, [-5.0, -2.0])


def test_hermitian_rejects_odd_dim():
    with pytest.raises(ValueError):
        ad.hermitian_product(ad.Tape(), leaf([1.0, 2.0, 3.0]),
                             leaf([1.0, 2.0, 3.0]))


def test_gated_combine_zero_weights_averages():
    t = ad.Tape()
    a, b = leaf([1.0, 3.0]), leaf([2.0, 5.0])
    wa, wb = leaf(np.zeros((2, 2))), leaf(np.zeros((2, 2)))
    out = ad.gated_combine(t, a, b, wa, wb)
    assert np.allclose(out.value, 0.5 * (a.value + b.value))


def test_softmax_cross_entropy_uniform_logits():
    for k in (2, 7, 100):
        t = ad.Tape()
        logits = leaf(np.zeros((1, k)))
        loss = ad.softmax_cross_entropy(t, logits, np.asarray([0]))
        assert np.isclose(float(loss.value), np.log(k))


def test_softmax_cross_entropy_is_neg_log_prob():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(4, 9))
    t = ad.Tape()
    loss = ad.softmax_cross_entropy(t, leaf(z), np.arange(4))
    assert float(loss.value) >= 0.0


def test_softmax_cross_entropy_shift_invariant():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 11))
    tg = np.asarray([1, 5, 10])
    l0 = ad.softmax_cross_entropy(ad.Tape(), leaf(z), tg)
    l1 = ad.softmax_cross_entropy(ad.Tape(), leaf(z + 123.456), tg)
    assert abs(float(l0.value) - float(l1.value)) < 1e-9


def test_backward_dot_product():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    t = ad.Tape()
    loss = ad.reduce_sum(t, ad.elementwise_mul(t, a, b))
    t.backward(loss)
    assert np.allclose(a.grad, [3.0, 4.0])
    assert np.allclose(b.grad, [1.0, 2.0])


def test_backward_sum_sigmoid_at_zero():
    x = leaf(np.zeros(5))
    t = ad.Tape()
    loss = ad.reduce_sum(t, ad.sigmoid(t, x))
    t.backward(loss)
    assert np.allclose(x.grad, 0.25)


def test_untouched_leaf_has_zero_gradient():
    a, unused = leaf([1.0, 2.0]), leaf([5.0, 6.0])
    t = ad.Tape()
    loss = ad.reduce_sum(t, ad.tanh(t, a))
    t.backward(loss)
    assert unused.grad is None
    assert np.allclose(unused.grad_or_zeros(), 0.0)


def test_backward_requires_scalar():
    a = leaf([1.0, 2.0])
    t = ad.Tape()
    out = ad.tanh(t, a)
    with pytest.raises(ValueError):
        t.backward(out)


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_detection():
    t = ad.Tape()
    big = leaf(np.full(3, 1e308))
    with pytest.raises(ad.NonFiniteError) as exc:
        ad.add(t, big, big)
    assert "add" in str(exc.value)


def test_dropout_scaling_and_mask_grad():
    rng = np.random.default_rng(3)
    x = leaf(np.ones(2000))
    t = ad.Tape()
    out = ad.dropout(t, x, 0.25, rng)
    kept = out.value > 0
    assert np.allclose(out.value[kept], 1.0 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.05
    loss = ad.reduce_sum(t, out)
    t.backward(loss)
    assert np.allclose(x.grad[kept], 1.0 / 0.75)
    assert np.allclose(x.grad[~kept], 0.0)


def test_embedding_lookup_accumulates_duplicate_rows():
    table = leaf(np.arange(12.0).reshape(4, 3))
    t = ad.Tape()
    out = ad.embedding_lookup(t, table, np.asarray([1, 1, 2]))
    loss = ad.reduce_sum(t, out)
    t.backward(loss)
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[2] = 1.0
    assert np.allclose(table.grad, expected)
    assert sorted(t.touched(table).tolist()) == [1, 2]


# -------------------------------------------------------- gradient checks


def _gradcheck_unary(op, shape=(3, 4), seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    proj = rng.normal(size=shape)

    def run():
        t = ad.Tape()
        xt = leaf(x)
        out = op(t, xt)
        loss = ad.reduce_sum(t, ad.elementwise_mul(t, out, ad.Tensor(proj)))
        return float(loss.value), xt, t, loss

    val, xt, t, loss = run()
    t.backward(loss)
    fd = finite_diff(lambda: run()[0], [x])
    assert max_rel_err([xt.grad], fd) < 1e-6


def test_gradcheck_sigmoid():
    _gradcheck_unary(ad.sigmoid)


def test_gradcheck_tanh():
    _gradcheck_unary(ad.tanh)


def test_gradcheck_affine():
    _gradcheck_unary(lambda t, x: ad.affine(t, x, -2.5, 0.75))


@pytest.mark.parametrize("op", [ad.add, ad.elementwise_mul,
                                ad.hermitian_product])
def test_gradcheck_binary(op):
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(2, 6)), rng.normal(size=(2, 6))
    proj = rng.normal(size=(2, 6))

    def run():
        t = ad.Tape()
        at, bt = leaf(a), leaf(b)
        out = op(t, at, bt)
        loss = ad.reduce_sum(t, ad.elementwise_mul(t, out, ad.Tensor(proj)))
        return float(loss.value), at, bt, t, loss

    _, at, bt, t, loss = run()
    t.backward(loss)
    fd = finite_diff(lambda: run()[0], [a, b])
    assert max_rel_err([at.grad, bt.grad], fd) < 1e-6


def test_gradcheck_matmul_and_scores_and_loss():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 4))
    table = rng.normal(size=(5, 4))
    targets = np.asarray([0, 3, 2])
    weights = np.asarray([1.0, 0.0, 2.0])

    def run():
        t = ad.Tape()
        xt, wt, tt = leaf(x), leaf(w), leaf(table)
        v = ad.matmul(t, xt, wt)
        logits = ad.dot_scores(t, v, tt)
        loss = ad.softmax_cross_entropy(t, logits, targets, weights)
        return float(loss.value), (xt, wt, tt), t, loss

    _, leaves, t, loss = run()
    t.backward(loss)
    fd = finite_diff(lambda: run()[0], [x, w, table])
    assert max_rel_err([lv.grad for lv in leaves], fd) < 1e-6


def test_gradcheck_gated_combine():
    rng = np.random.default_rng(13)
    a, b = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    wa, wb = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    proj = rng.normal(size=(2, 4))

    def run():
        t = ad.Tape()
        ts = [leaf(v) for v in (a, b, wa, wb)]
        out = ad.gated_combine(t, *ts)
        loss = ad.reduce_sum(t, ad.elementwise_mul(t, out, ad.Tensor(proj)))
        return float(loss.value), ts, t, loss

    _, ts, t, loss = run()
    t.backward(loss)
    fd = finite_diff(lambda: run()[0], [a, b, wa, wb])
    assert max_rel_err([x.grad for x in ts], fd) < 1e-6


def test_fanout_accumulates():
    # y = x * x reuses the same node twice; grad must be 2x
    x = leaf([3.0, -2.0])
    t = ad.Tape()
    loss = ad.reduce_sum(t, ad.elementwise_mul(t, x, x))
    t.backward(loss)
    assert np.allclose(x.grad, 2 * x.value)


# ----------------------------------------------------------- properties


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3))
def test_hermitian_is_bilinear(seed, alpha):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=6) for _ in range(3))
    t = ad.Tape()

    def herm(x, y):
        return ad.hermitian_product(t, ad.Tensor(x), ad.Tensor(y)).value

    assert np.allclose(herm(alpha * a, b), alpha * herm(a, b), atol=1e-9)
    assert np.allclose(herm(a, b + c), herm(a, b) + herm(a, c), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gated_combine_stays_between_inputs(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    wa, wb = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    t = ad.Tape()
    out = ad.gated_combine(t, ad.Tensor(a), ad.Tensor(b), ad.Tensor(wa),
                           ad.Tensor(wb)).value
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_float32_mode_roundtrip():
    ad.set_default_dtype(np.float32)
    try:
        t = ad.Tape()
        out = ad.add(t, ad.Tensor([1.0, 2.0]), ad.Tensor([3.0, 4.0]))
        assert out.value.dtype == np.float32
    finally:
        ad.set_default_dtype(np.float64)
