import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from umg.autodiff import (
    DimensionError,
    NumericError,
    Tensor,
    activation,
    adam,
    affine_channels,
    backward,
    channel_stats,
    conv2d,
    default_dtype,
    depthwise_conv2d,
    l2_distance,
    optimizer_step,
    pool_max2,
    rmsprop,
    upsample_nearest2,
)
from umg.autodiff.gradcheck import check_gradients


@pytest.fixture(autouse=True)
def float64():
    with default_dtype(np.float64):
        yield


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- conv2d -----------------------------------------------------------------

def test_conv_identity_kernel():
    x = t(np.arange(9.0).reshape(1, 1, 3, 3))
    out = conv2d(x, t([[[[1.0]]]]))
    assert np.array_equal(out.data, x.data)


def test_conv_hand_example():
    x = t([[[[1, 2, 3], [4, 5, 6], [7, 8, 9]]]])
    k = t([[[[1, 0], [0, 1]]]])
    assert conv2d(x, k).data[0, 0].tolist() == [[6, 8], [12, 14]]


def brute_conv(x, k, stride):
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(n):
        for b in range(o):
            for i in range(ho):
                for j in range(wo):
                    win = x[a, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[a, b, i, j] = (win * k[b]).sum()
    return out


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_matches_brute_force(stride):
    rng = np.random.default_rng(stride)
    x, k = rng.normal(size=(2, 3, 9, 8)), rng.normal(size=(4, 3, 3, 2))
    assert np.allclose(conv2d(t(x), t(k), stride=stride).data, brute_conv(x, k, stride))


def test_conv_output_size_and_errors():
    x = t(np.zeros((1, 2, 7, 7)))
    assert conv2d(x, t(np.zeros((3, 2, 3, 3))), stride=2).shape == (1, 3, 3, 3)
    assert conv2d(x, t(np.zeros((3, 2, 3, 3))), padding=("reflect", 1)).shape == (1, 3, 7, 7)
    with pytest.raises(DimensionError):
        conv2d(x, t(np.zeros((3, 5, 3, 3))))
    with pytest.raises(DimensionError):
        conv2d(x, t(np.zeros((3, 2, 9, 9))))


def test_conv_reflect_padding_values():
    x = t(np.arange(16.0).reshape(1, 1, 4, 4))
    out = conv2d(x, t([[[[0, 0, 0], [0, 0, 0], [0, 0, 1]]]]), padding=("reflect", 1))
    # bottom-right tap of a reflected border reads the mirrored row/column
    assert out.data[0, 0, 3, 3] == x.data[0, 0, 2, 2]


@pytest.mark.parametrize("padding", ["valid", ("reflect", 1), ("zero", 1)])
def test_conv_gradcheck(padding):
    rng = np.random.default_rng(0)
    x = t(rng.normal(size=(2, 3, 8, 8)), True)
    k = t(rng.normal(size=(4, 3, 3, 3)), True)
    b = t(rng.normal(size=4), True)
    w = rng.normal(size=conv2d(x, k, b, padding=padding).shape)
    assert check_gradients(lambda: (conv2d(x, k, b, padding=padding) * w).sum(), [x, k, b]) < 1e-4


def test_depthwise_gradcheck():
    rng = np.random.default_rng(1)
    x = t(rng.normal(size=(2, 3, 7, 7)), True)
    k = t(rng.normal(size=(3, 1, 3, 3)), True)
    w = rng.normal(size=(2, 3, 4, 4))
    fn = lambda: (depthwise_conv2d(x, k, stride=2, padding=("zero", 1)) * w).sum()
    assert check_gradients(fn, [x, k]) < 1e-4


def test_depthwise_equals_grouped_brute_force():
    rng = np.random.default_rng(2)
    x, k = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 1, 3, 3))
    out = depthwise_conv2d(t(x), t(k)).data
    for c in range(2):
        assert np.allclose(out[:, c:c + 1], brute_conv(x[:, c:c + 1], k[c:c + 1], 1))


# -- pooling / upsampling ---------------------------------------------------

def test_pool_and_upsample_examples():
    assert pool_max2(t([[[[1, 2], [3, 4]]]])).data.tolist() == [[[[4]]]]
    assert upsample_nearest2(t([[[[5]]]])).data.tolist() == [[[[5, 5], [5, 5]]]]
    with pytest.raises(DimensionError):
        pool_max2(t(np.zeros((1, 1, 3, 4))))


def test_pool_tie_goes_to_first_row_major():
    x = t(np.ones((1, 1, 2, 2)), True)
    backward(pool_max2(x).sum())
    assert x.grad[0, 0].tolist() == [[1, 0], [0, 0]]


def test_pool_upsample_gradcheck():
    rng = np.random.default_rng(3)
    x = t(rng.normal(size=(2, 2, 6, 4)), True)
    w = rng.normal(size=(2, 2, 6, 4))
    assert check_gradients(lambda: (upsample_nearest2(pool_max2(x)) * w).sum(), [x]) < 1e-4


# -- activations ------------------------------------------------------------

def test_activation_examples():
    assert activation(t([-1.0, 0.0, 2.0]), "relu").data.tolist() == [0, 0, 2]
    assert activation(t(0.0), "sigmoid").item() == 0.5
    with pytest.raises(NumericError):
        activation(t([1.0, 0.0]), "log")


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "log"])
def test_activation_gradcheck(kind):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 5))
    if kind == "log":
        x = np.abs(x) + 0.5
    else:
        x[np.abs(x) < 1e-3] = 0.5  # keep clear of the relu kink
    xt = t(x, True)
    w = rng.normal(size=x.shape)
    assert check_gradients(lambda: (activation(xt, kind) * w).sum(), [xt]) < 1e-4


def test_relu_subgradient_at_zero_is_zero():
    x = t([0.0], True)
    backward(activation(x, "relu").sum())
    assert x.grad.tolist() == [0.0]


# -- statistics and affine ----------------------------------------------------

def test_channel_stats_constant():
    mu, sd = channel_stats(t(np.full((1, 1, 4, 4), 5.0)), 1e-5)
    assert mu.item() == 5.0
    assert sd.item() == pytest.approx(np.sqrt(1e-5))


def test_channel_stats_two_values():
    mu, sd = channel_stats(t([[[[0.0, 2.0]]]]), 1e-12)
    assert mu.item() == 1.0
    assert sd.item() == pytest.approx(1.0, abs=1e-9)


def test_channel_stats_gradcheck():
    rng = np.random.default_rng(5)
    x = t(rng.normal(size=(2, 3, 4, 5)), True)
    w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))

    def fn():
        mu, sd = channel_stats(x, 1e-5)
        return (mu * w1).sum() + (sd * w2).sum()

    assert check_gradients(fn, [x]) < 1e-4


def test_affine_examples():
    x = t([[[[0.0, 2.0]]]])
    assert np.array_equal(affine_channels(x, t([[1.0]]), t([[0.0]])).data, x.data)
    assert affine_channels(x, t([[2.0]]), t([[10.0]])).data.ravel().tolist() == [10, 14]
    with pytest.raises(DimensionError):
        affine_channels(x, t([[1.0, 2.0]]), t([[0.0]]))


def test_affine_gradcheck():
    rng = np.random.default_rng(6)
    x = t(rng.normal(size=(2, 3, 4, 4)), True)
    s = t(rng.normal(size=(2, 3)), True)
    b = t(rng.normal(size=(2, 3)), True)
    w = rng.normal(size=(2, 3, 4, 4))
    assert check_gradients(lambda: (affine_channels(x, s, b) * w).sum(), [x, s, b]) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_then_inverse_affine_reconstructs(seed):
    rng = np.random.default_rng(seed)
    x = t(rng.normal(size=(2, 3, 5, 4)) * rng.uniform(0.5, 5) + rng.normal())
    mu, sd = channel_stats(x, 1e-5)
    normalized = affine_channels(x, t(1.0 / sd.data), t(-mu.data / sd.data))
    back = affine_channels(normalized, sd, mu)
    assert np.allclose(back.data, x.data, atol=1e-6)


# -- distance ---------------------------------------------------------------

def test_l2_examples():
    a = t([3.0, 0.0])
    assert l2_distance(a, a).item() <= 1e-6
    assert l2_distance(a, t([0.0, 4.0])).item() == pytest.approx(5.0)
    with pytest.raises(DimensionError):
        l2_distance(a, t([1.0]))


def test_l2_gradcheck():
    rng = np.random.default_rng(7)
    a, b = t(rng.normal(size=(3, 4)), True), t(rng.normal(size=(3, 4)), True)
    assert check_gradients(lambda: l2_distance(a, b), [a, b]) < 1e-4


# -- backward semantics -------------------------------------------------------

def test_backward_sum_of_squares():
    x = t([1.0, 2.0], True)
    grads = backward((x * x).sum())
    assert grads[x].tolist() == [2.0, 4.0]


def test_shared_node_gradients_add_up():
    rng = np.random.default_rng(8)
    x = t(rng.normal(size=4), True)
    a, b = rng.normal(size=4), rng.normal(size=4)

    def path1():
        return ((x * a).sum()) ** 2

    def path2():
        return (activation(x, "sigmoid") * b).sum()

    g1 = backward(path1())[x]
    g2 = backward(path2())[x]
    shared = x * 1.0  # one node with two consumers
    both = backward(((shared * a).sum()) ** 2 + (activation(shared, "sigmoid") * b).sum())[x]
    assert np.allclose(both, g1 + g2, atol=1e-12)


def test_non_scalar_loss_rejected():
    with pytest.raises(DimensionError):
        backward(t([1.0, 2.0], True) * 2)


def test_disconnected_parameter_gets_nothing():
    x, y = t([1.0], True), t([2.0], True)
    grads = backward((x * 3).sum())
    assert y not in grads
    assert grads[x].tolist() == [3.0]


def test_constants_never_touch_tape():
    a = t(np.ones(3))
    out = a * 2 + 1
    assert not out.requires_grad and out._parents == ()


def test_tape_is_freed():
    x = t([1.0, 2.0], True)
    y = x * x
    loss = y.sum()
    backward(loss)
    assert y._parents == () and loss._parents == ()


def test_nan_is_an_error():
    with pytest.raises(NumericError):
        t([1.0]) / t([0.0])
    with pytest.raises(NumericError):
        t([np.inf]) * 1.0


# -- optimizers ---------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = t([1.0, -2.0], True)
    st_ = adam([p], lr=0.1)
    optimizer_step(st_, [p], [np.zeros(2)])
    assert p.data.tolist() == [1.0, -2.0] and st_.step == 1


def test_adam_first_step_is_lr():
    p = t([0.5], True)
    st_ = adam([p], lr=0.1)
    optimizer_step(st_, [p], [np.ones(1)])
    # m_hat = 1, v_hat = 1 after bias correction
    assert p.data[0] == pytest.approx(0.5 - 0.1 / (1 + 1e-8), abs=1e-12)


def test_adam_converges_on_quadratic():
    w = t([0.0], True)
    st_ = adam([w], lr=0.3)
    for _ in range(100):
        loss = ((w - 3.0) ** 2).sum()
        optimizer_step(st_, [w], [backward(loss)[w]])
    assert abs(w.data[0] - 3.0) < 1e-2


def test_adam_quadratic_reference_run():
    # hand-rolled Adam on f(w) = (w - 3)^2 with the same hyperparameters
    w_ref, m, v = 0.0, 0.0, 0.0
    w = t([0.0], True)
    st_ = adam([w], lr=0.1)
    for k in range(1, 101):
        g = 2 * (w_ref - 3.0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w_ref -= 0.1 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
        optimizer_step(st_, [w], [backward(((w - 3.0) ** 2).sum())[w]])
    assert w.data[0] == pytest.approx(w_ref, abs=1e-12)


def test_rmsprop_step():
    p = t([1.0], True)
    st_ = rmsprop([p], lr=0.01)
    optimizer_step(st_, [p], [np.array([2.0])])
    assert p.data[0] == pytest.approx(1.0 - 0.01 * 2.0 / (np.sqrt(0.1 * 4.0) + 1e-10))


def test_optimizer_shape_mismatch():
    p = t([1.0, 2.0], True)
    st_ = adam([p])
    with pytest.raises(DimensionError):
        optimizer_step(st_, [p], [np.zeros(3)])


def test_optimizer_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(11)
        w = t(rng.normal(size=(3, 3)), True)
        st_ = adam([w], lr=0.01)
        for _ in range(20):
            optimizer_step(st_, [w], [backward((w * w * w).sum())[w]])
        return w.data.copy()

    assert np.array_equal(run(), run())
