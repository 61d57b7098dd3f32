import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgcn import tensor as tn
from tgcn.errors import DimensionError, UnrecordedTensorError
from tgcn.tensor import Tape, Tensor

from oracles import conv1d_loops, numeric_grad, rel_err


def grad_of(fn, *arrays):
    """Analytic gradients of scalar ``fn(*tensors)`` w.r.t. every input."""
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    return tape.gradient(out, leaves)


def check_grads(fn, arrays, tol=1e-4):
    analytic = grad_of(fn, *arrays)
    for k, a in enumerate(arrays):
        def f(v, k=k):
            args = [Tensor(v) if j == k else Tensor(np.array(b, dtype=np.float64))
                    for j, b in enumerate(arrays)]
            return float(fn(*args).data)
        assert rel_err(analytic[k], numeric_grad(f, a)) < tol


# ------------------------------------------------------------- conv1d


def test_conv_identity_kernel():
    x = np.arange(1.0, 6.0)[:, None]
    out = tn.conv1d(x, np.ones((1, 1, 1)), np.zeros(1), padding="same")
    np.testing.assert_array_equal(out.data[:, 0], [1, 2, 3, 4, 5])


def test_conv_same_keeps_long_length():
    x = np.random.default_rng(0).standard_normal((19200, 1))
    out = tn.conv1d(x, np.ones((3, 1, 1)), np.zeros(1), padding="same")
    assert out.shape == (19200, 1)


@pytest.mark.parametrize("t", [1, 3, 5, 7])
def test_conv_same_preserves_extent(t):
    x = np.random.default_rng(t).standard_normal((2, 11, 4, 3))
    k = np.random.default_rng(t + 1).standard_normal((t, 5, 3))
    assert tn.conv1d(x, k, np.zeros(5), padding="same", axis=1).shape == (2, 11, 4, 5)


@pytest.mark.parametrize("padding", ["valid", "same"])
def test_conv_matches_triple_loop(padding):
    rng = np.random.default_rng(3)
    x, k, b = rng.standard_normal((4, 2)), rng.standard_normal((3, 2, 2)), rng.standard_normal(2)
    np.testing.assert_allclose(tn.conv1d(x, k, b, padding=padding).data,
                               conv1d_loops(x, k, b, padding), atol=1e-12)


def test_conv_batched_axis_matches_loop():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 7, 3, 2))
    k, b = rng.standard_normal((3, 4, 2)), rng.standard_normal(4)
    out = tn.conv1d(x, k, b, axis=1).data
    for bb in range(2):
        for node in range(3):
            np.testing.assert_allclose(out[bb, :, node], conv1d_loops(x[bb, :, node], k, b, "same"),
                                       atol=1e-12)


def test_conv_errors():
    with pytest.raises(DimensionError):
        tn.conv1d(np.zeros((5, 2)), np.zeros((3, 1, 3)))
    with pytest.raises(ValueError):
        tn.conv1d(np.zeros((5, 2)), np.zeros((2, 1, 2)), padding="same")
    with pytest.raises(DimensionError):
        tn.conv1d(np.zeros((2, 2)), np.zeros((3, 1, 2)), padding="valid")


# -------------------------------------------------------------- dense


def test_dense_identity_and_zero():
    x = np.array([1.5, -2.0, 3.0])
    np.testing.assert_array_equal(tn.dense(x, np.eye(3), np.zeros(3)).data, x)
    np.testing.assert_array_equal(tn.dense(x, np.zeros((2, 3)), np.array([4.0, 5.0])).data, [4, 5])


def test_dense_hand_expansion():
    w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    x = np.array([0.5, -1.0])
    b = np.array([0.1, 0.2, 0.3])
    expected = [1 * 0.5 + 2 * -1 + 0.1, 3 * 0.5 + 4 * -1 + 0.2, 5 * 0.5 + 6 * -1 + 0.3]
    np.testing.assert_allclose(tn.dense(x, w, b).data, expected, atol=1e-15)


def test_dense_dimension_error():
    with pytest.raises(DimensionError):
        tn.dense(np.zeros(3), np.zeros((2, 4)))


# --------------------------------------------------------- activations


def test_relu_sigmoid_values():
    np.testing.assert_array_equal(tn.relu(np.array([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert tn.sigmoid(np.array(0.0)).item() == 0.5
    with pytest.raises(ValueError):
        tn.activation(np.zeros(2), "tanh")


def test_sigmoid_monotone_and_stable():
    x = np.sort(np.random.default_rng(5).standard_normal(200) * 30)
    y = tn.sigmoid(x).data
    assert np.all(np.diff(y) >= 0)
    big = tn.sigmoid(np.array([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


def test_sigmoid_grad_at_zero():
    (g,) = grad_of(lambda x: tn.reduce(tn.sigmoid(x), kind="sum"), np.array([0.0]))
    assert g[0] == 0.25


# --------------------------------------------------------- reductions


def test_reduce_values():
    a = np.array([[1.0, 3.0], [5.0, 7.0]])
    np.testing.assert_array_equal(tn.reduce(a, axis=1, kind="mean").data, [2, 6])
    x = np.random.default_rng(0).standard_normal((3, 1, 4))
    np.testing.assert_array_equal(tn.reduce(x, axis=1, kind="max").data, x[:, 0])
    with pytest.raises(DimensionError):
        tn.reduce(a, axis=2)


@pytest.mark.parametrize("m", [3, 40])
def test_max_gradient_one_hot_lowest_tie(m):
    a = np.zeros((2, m))
    a[0, 1] = a[0, 2] = 5.0  # tie: index 1 wins
    a[1, :] = 1.0            # all tied: index 0 wins
    (g,) = grad_of(lambda x: tn.reduce(tn.reduce(x, axis=1, kind="max"), kind="sum"), a)
    expected = np.zeros_like(a)
    expected[0, 1] = expected[1, 0] = 1.0
    np.testing.assert_array_equal(g, expected)


def test_max_gradient_matches_fd():
    x = np.random.default_rng(6).standard_normal((3, 5, 2))
    check_grads(lambda t: tn.reduce(tn.reduce(t, axis=1, kind="max"), kind="sum"), [x])


def test_max_backward_bit_identical():
    x = np.round(np.random.default_rng(7).standard_normal((4, 6)), 1)
    fn = lambda t: tn.reduce(tn.reduce(t, axis=0, kind="max") * np.arange(6.0), kind="sum")
    assert np.array_equal(grad_of(fn, x)[0], grad_of(fn, x)[0])


# ------------------------------------------------------------- concat


def test_concat_channels_and_split():
    a = np.random.default_rng(0).standard_normal((3, 2))
    b = np.random.default_rng(1).standard_normal((3, 2))
    out = tn.concat([a, b], axis=-1).data
    assert out.shape == (3, 4)
    np.testing.assert_array_equal(out[:, :2], a)
    np.testing.assert_array_equal(out[:, 2:], b)
    np.testing.assert_array_equal(tn.concat([a, np.zeros((3, 0))], axis=1).data, a)
    with pytest.raises(DimensionError):
        tn.concat([a, np.zeros((2, 2))], axis=1)


# --------------------------------------------------------- batch norm


def test_batch_norm_standardized_input_passes_through():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((500, 3))
    x = (x - x.mean(0)) / x.std(0)
    out = tn.batch_norm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), train=True)
    # the only change is the epsilon inside the square root
    np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + 1e-5), atol=1e-12)
    np.testing.assert_allclose(out.data, x, rtol=1e-5)


def test_batch_norm_constant_channel_gives_beta():
    x = np.full((10, 4, 2), 3.0)
    out = tn.batch_norm(x, np.ones(2), np.array([0.5, -1.0]), np.zeros(2), np.ones(2), train=True)
    np.testing.assert_allclose(out.data[..., 0], 0.5)
    np.testing.assert_allclose(out.data[..., 1], -1.0)


def test_batch_norm_moments_and_running_stats():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((6, 5, 3)) * 4 + 2
    gamma, beta = np.array([1.0, 2.0, 0.5]), np.array([0.0, 1.0, -3.0])
    rm, rv = np.zeros(3), np.ones(3)
    out = tn.batch_norm(x, gamma, beta, rm, rv, train=True).data
    flat = out.reshape(-1, 3)
    np.testing.assert_allclose(flat.mean(0), beta, atol=1e-9)
    np.testing.assert_allclose(flat.std(0), gamma, rtol=1e-5)
    xf = x.reshape(-1, 3)
    np.testing.assert_allclose(rm, 0.1 * xf.mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * xf.var(0, ddof=1))
    # eval mode uses the running statistics
    ev = tn.batch_norm(x, gamma, beta, rm, rv, train=False).data
    np.testing.assert_allclose(ev, (x - rm) / np.sqrt(rv + 1e-5) * gamma + beta)


# ------------------------------------------------------------ dropout


def test_dropout_modes():
    x = np.random.default_rng(0).standard_normal(50)
    rng = np.random.default_rng(1)
    np.testing.assert_array_equal(tn.dropout(x, 0.0, True, rng).data, x)
    np.testing.assert_array_equal(tn.dropout(x, 0.7, False, rng).data, x)
    with pytest.raises(ValueError):
        tn.dropout(x, 1.0, True, rng)


def test_dropout_rate_and_scaling():
    out = tn.dropout(np.ones(100_000), 0.2, True, np.random.default_rng(2)).data
    assert abs(np.mean(out == 0) - 0.2) < 0.01
    np.testing.assert_allclose(out[out != 0], 1.25)


# ------------------------------------------------------------ backward


def test_identity_gradient_and_errors():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape() as tape:
        y = tn.reduce(x, kind="sum")
    assert tape.gradient(y, [x])[0] == 1.0
    other = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(UnrecordedTensorError):
        tape.gradient(y, [other])
    with pytest.raises(UnrecordedTensorError):
        tape.gradient(Tensor(1.0), [x])
    v = Tensor(np.ones(3), requires_grad=True)
    with Tape() as t2:
        w = v * 2.0
    with pytest.raises(DimensionError):
        t2.gradient(w, [v])


def test_unused_source_gets_zero_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        tape.watch(b)
        y = tn.reduce(a * 2.0, kind="sum")
    ga, gb = tape.gradient(y, [a, b])
    np.testing.assert_array_equal(ga, [2, 2])
    np.testing.assert_array_equal(gb, [0, 0, 0])


def test_composed_conv_relu_reduce_fd():
    rng = np.random.default_rng(10)
    x, k, b = rng.standard_normal((9, 2)), rng.standard_normal((3, 3, 2)), rng.standard_normal(3)
    fn = lambda x, k, b: tn.reduce(tn.reduce(tn.relu(tn.conv1d(x, k, b)), axis=0, kind="max"), kind="sum")
    check_grads(fn, [x, k, b])


def test_backward_is_linear():
    rng = np.random.default_rng(11)
    x0 = rng.standard_normal((4, 3))
    w = rng.standard_normal((2, 3))

    def losses(x):
        h = tn.dense(x, w)
        return tn.reduce(tn.sigmoid(h), kind="sum"), tn.reduce(h * h, kind="mean")

    x = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        l1, l2 = losses(x)
        combo = 2.5 * l1 - 0.75 * l2
    g1, = tape.gradient(l1, [x])
    g2, = tape.gradient(l2, [x])
    gc, = tape.gradient(combo, [x])
    np.testing.assert_allclose(gc, 2.5 * g1 - 0.75 * g2, atol=1e-10)


# every differentiable op against central differences, over 20 seeds

def _op_cases(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    s = lambda t: tn.reduce(t, kind="sum")
    w = rng.standard_normal((4, 4))
    w8, w42, w34 = rng.standard_normal((3, 8)), rng.standard_normal((4, 2)), rng.standard_normal((3, 4))
    y01 = (rng.random(4) < 0.5).astype(float)
    return [
        (lambda x, y: s(tn.add(x, y) * w[:3]), [a, b]),
        (lambda x, y: s(tn.sub(x, y) * w[:3]), [a, b]),
        (lambda x, y: s(tn.mul(x, y)), [a, b]),
        (lambda x, y: s(tn.div(x, y)), [a, pos]),
        (lambda x: s(tn.neg(x) * w[:3]), [a]),
        (lambda x: s(tn.exp(x)), [a]),
        (lambda x: s(tn.log(x)), [pos]),
        (lambda x: s(tn.absolute(x) * w[:3]), [a]),
        (lambda x, y: s(tn.magnitude(x, y)), [a, b]),
        (lambda x: s(tn.relu(x) * w[:3]), [a]),
        (lambda x: s(tn.sigmoid(x) * w[:3]), [a]),
        (lambda x, y: s(tn.matmul(x, tn.transpose(y)) * w[:3, :3]), [a, b]),
        (lambda x: s(tn.reshape(x, (4, 3)) * w[:, :3]), [a]),
        (lambda x: s(tn.take(x, np.array([[0, 2], [2, 1]]), axis=0) * w[:2, None, :]), [a]),
        (lambda x, y: s(tn.concat([x, y], axis=1) * w8), [a, b]),
        (lambda x: s(tn.reduce(x, axis=0, kind="mean") * w[0]), [a]),
        (lambda x: s(tn.reduce(x, axis=1, kind="max") * w[0, :3]), [a]),
        (lambda x, k, bb: s(tn.conv1d(x, k, bb) * w42),
         [rng.standard_normal((4, 3)), rng.standard_normal((3, 2, 3)), rng.standard_normal(2)]),
        (lambda x, ww, bb: s(tn.sigmoid(tn.dense(x, ww, bb))),
         [a, rng.standard_normal((2, 4)), rng.standard_normal(2)]),
        (lambda x, g, bb: s(tn.batch_norm(x, g, bb, np.zeros(4), np.ones(4), train=True)
                            * w34),
         [a, rng.uniform(0.5, 1.5, 4), rng.standard_normal(4)]),
        (lambda x: tn.bce(tn.sigmoid(tn.reduce(x, axis=0, kind="mean")), y01), [a]),
    ]


@pytest.mark.parametrize("seed", range(20))
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for fn, arrays in _op_cases(rng):
        check_grads(fn, arrays)


def test_dropout_gradient_uses_mask():
    x = np.random.default_rng(12).standard_normal(20)
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        out = tn.dropout(t, 0.5, True, np.random.default_rng(3))
        loss = tn.reduce(out, kind="sum")
    (g,) = tape.gradient(loss, [t])
    np.testing.assert_array_equal(g, out.data / np.where(x == 0, 1, x))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_forward_ops_stay_finite(values):
    x = np.array(values)
    for out in (tn.relu(x), tn.sigmoid(x), tn.magnitude(x, x[::-1]),
                tn.reduce(x, kind="max"), tn.reduce(x, kind="mean")):
        assert np.all(np.isfinite(out.data))


def test_tapes_on_threads_are_independent():
    from concurrent.futures import ThreadPoolExecutor

    def run(seed):
        x = Tensor(np.random.default_rng(seed).standard_normal(5), requires_grad=True)
        with Tape() as tape:
            y = tn.reduce(tn.exp(x), kind="sum")
        return np.allclose(tape.gradient(y, [x])[0], np.exp(x.data))

    with ThreadPoolExecutor(4) as pool:
        assert all(pool.map(run, range(16)))
