import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ir2vis.autograd import (
    Adam,
    AdamState,
    Tensor,
    adam_step,
    backward,
    concat_channels,
    conv2d,
    conv2d_backward,
    dropout,
    max_pool2d,
    no_grad,
    read_ivt,
    relu,
    sigmoid,
    tanh,
    write_ivt,
)
from ir2vis.autograd.ivt import decode_ivt, encode_ivt
from ir2vis.errors import ContractError, DimensionError, OptimizerError, TapeError, ValidationError

from gradcases import CASES, check_case
from oracles import conv2d_loops, finite_difference, relative_error

CHEAP = [n for n in CASES if not n.startswith(("ssim", "composite"))]


@pytest.mark.parametrize("name", CHEAP)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_central_differences(name, seed):
    assert check_case(name, seed) < 1e-4


def test_conv_all_ones_gives_nine():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 1, 5, 7))
    out = conv2d(Tensor(x, dtype=np.float64), Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64))
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_six_loop_reference(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64), 1, 1)
    assert out.shape == (2, 4, 8, 8)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, 1, 1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("stride,padding,k", [(2, 0, 3), (2, 1, 4), (1, 2, 5)])
def test_conv_output_size_formula(rng, stride, padding, k):
    x = rng.normal(size=(1, 2, 9, 11))
    w = rng.normal(size=(3, 2, k, k))
    out = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), None, stride, padding)
    assert out.shape[2:] == ((9 + 2 * padding - k) // stride + 1, (11 + 2 * padding - k) // stride + 1)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, None, stride, padding), atol=1e-12)


def test_conv_dimension_error_names_axis():
    with pytest.raises(DimensionError, match="axis 1"):
        conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv_sum_gradient_fine_tolerance(rng):
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    xt = Tensor(x, requires_grad=True, dtype=np.float64)
    backward(conv2d(xt, Tensor(w, dtype=np.float64), padding=1).sum())
    numeric = finite_difference(
        lambda a: float(conv2d(Tensor(a, dtype=np.float64), Tensor(w, dtype=np.float64), padding=1).data.sum()), x)
    assert relative_error(xt.grad, numeric) < 1e-6


def test_conv_backward_contract(rng):
    x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True, dtype=np.float64)
    w = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
    b = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    out = conv2d(x, w, b)
    g = rng.normal(size=out.shape)
    gx, gw, gb = conv2d_backward(out, g)
    np.testing.assert_array_equal(gx, g)
    zx, zw, zb = conv2d_backward(out, np.zeros(out.shape))
    assert not zw.any() and not zb.any()
    with pytest.raises(TapeError):
        conv2d_backward(relu(x), g)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_conv_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(1, 2, 6, 6)), r.normal(size=(1, 2, 6, 6))
    w = Tensor(r.normal(size=(3, 2, 3, 3)), dtype=np.float64)
    lhs = conv2d(Tensor(a * x + b * y, dtype=np.float64), w, padding=1).data
    rhs = a * conv2d(Tensor(x, dtype=np.float64), w, padding=1).data + b * conv2d(
        Tensor(y, dtype=np.float64), w, padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_max_pool_block():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    assert max_pool2d(x, 2).item() == 4.0


def test_concat_channels(rng):
    a = Tensor(rng.normal(size=(2, 3, 4, 4)))
    b = Tensor(rng.normal(size=(2, 5, 4, 4)))
    out = concat_channels(a, b)
    assert out.shape == (2, 8, 4, 4)
    np.testing.assert_array_equal(out.data[:, :3], a.data)
    with pytest.raises(DimensionError, match="spatial"):
        concat_channels(a, Tensor(np.ones((2, 1, 3, 4))))


def test_dropout_identity_and_reproducible(rng):
    x = Tensor(rng.normal(size=(2, 4, 8, 8)))
    assert dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert dropout(x, 0.5, False, np.random.default_rng(0)) is x
    a = dropout(x, 0.5, True, np.random.default_rng(5)).data
    b = dropout(x, 0.5, True, np.random.default_rng(5)).data
    assert a.tobytes() == b.tobytes()
    kept = a != 0
    np.testing.assert_allclose(a[kept], 2.0 * x.data[kept], rtol=1e-6)
    s = dropout(x, 0.5, False, np.random.default_rng(5), stochastic_inference=True).data
    assert (s == 0).any()
    with pytest.raises(ContractError):
        dropout(x, 1.0, True, np.random.default_rng(0))


def test_dropout_keep_rate():
    x = Tensor(np.ones((1, 1, 200, 200)))
    frac = (dropout(x, 0.3, True, np.random.default_rng(1)).data != 0).mean()
    assert abs(frac - 0.7) < 0.01


def test_sigmoid_tanh_ranges():
    x = Tensor(np.linspace(-800, 800, 101).reshape(1, 1, 1, 101))
    s = sigmoid(x).data
    t = tanh(x).data
    assert np.isfinite(s).all() and s.min() >= 0 and s.max() <= 1
    assert t.min() >= -1 and t.max() <= 1


def test_backward_basics(rng):
    x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True, dtype=np.float64)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones(x.shape))
    x.zero_grad()
    backward((x * x).sum())
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates_until_reset(rng):
    x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True, dtype=np.float64)
    backward(x.sum())
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, 2 * np.ones(x.shape))


def test_backward_rejects_non_scalar(rng):
    x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)
    with pytest.raises(TapeError):
        backward(Tensor(np.ones((1, 1, 1, 1))))


def test_shared_subgraph_visited_once(rng):
    x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True, dtype=np.float64)
    y = x * 3.0
    backward((y + y).sum())
    np.testing.assert_allclose(x.grad, 6.0 * np.ones(x.shape))


def test_composite_network_gradient(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))

    def f(wa):
        h = relu(conv2d(Tensor(x, dtype=np.float64), Tensor(wa, dtype=np.float64), padding=1))
        return float(max_pool2d(h, 2).data.sum())

    wt = Tensor(w, requires_grad=True, dtype=np.float64)
    backward(max_pool2d(relu(conv2d(Tensor(x, dtype=np.float64), wt, padding=1)), 2).sum())
    assert relative_error(wt.grad, finite_difference(f, w)) < 1e-4


def test_no_grad_builds_no_tape(rng):
    x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
    with no_grad():
        y = relu(x) * 2.0
    assert not y.requires_grad and y.is_leaf


# -- Adam ------------------------------------------------------------------------------

def _param(value):
    return {"w": Tensor(np.array(value, dtype=np.float64).reshape(1, 1, 1, -1), requires_grad=True)}


def test_adam_zero_gradient_is_no_op():
    p = _param([1.5, -2.0])
    state = adam_step(p, {"w": np.zeros((1, 1, 1, 2))}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"].data.ravel(), [1.5, -2.0])
    assert state.t == 1


@pytest.mark.parametrize("g", [0.37, -5.0, 1e-3])
def test_adam_first_step_magnitude_is_lr(g):
    p = _param([0.0])
    adam_step(p, {"w": np.full((1, 1, 1, 1), g)}, AdamState(), 0.01)
    assert abs(abs(p["w"].data.item()) - 0.01) < 1e-6 * max(1.0, 1e-3 / abs(g))
    assert np.sign(p["w"].data.item()) == -np.sign(g)


def test_adam_scale_free_first_step():
    g = np.array([0.2, -1.3, 0.05]).reshape(1, 1, 1, 3)
    a, b = _param([0, 0, 0]), _param([0, 0, 0])
    adam_step(a, {"w": g}, AdamState(), 0.01)
    adam_step(b, {"w": 100 * g}, AdamState(), 0.01)
    np.testing.assert_allclose(a["w"].data, b["w"].data, atol=1e-6)


def test_adam_quadratic_converges():
    w = Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
    opt = Adam([("w", w)], lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        backward((w - 3.0) ** 2)
        opt.step()
    assert abs(w.item() - 3.0) < 0.05


def test_adam_nonfinite_names_parameter():
    p = _param([1.0])
    with pytest.raises(OptimizerError, match="w") as info:
        adam_step(p, {"w": np.full((1, 1, 1, 1), np.nan)}, AdamState(), 0.1)
    assert info.value.name == "w"
    assert p["w"].data.item() == 1.0


def test_adam_state_counter_and_shapes():
    p = _param([1.0, 2.0])
    state = AdamState()
    for t in range(1, 4):
        adam_step(p, {"w": np.ones((1, 1, 1, 2))}, state, 0.1)
        assert state.t == t
        assert state.m["w"].shape == state.v["w"].shape == p["w"].shape


# -- IVT1 ---------------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(shape=st.tuples(*[st.integers(1, 4)] * 4), f64=st.booleans(), seed=st.integers(0, 1000))
def test_ivt_round_trip(shape, f64, seed):
    arr = np.random.default_rng(seed).normal(size=shape).astype(np.float64 if f64 else np.float32)
    back = decode_ivt(encode_ivt(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_ivt_layout_and_errors(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3)
    buf = encode_ivt(arr)
    assert buf[:4] == b"IVT1" and buf[4] == 0
    assert np.frombuffer(buf[5:21], "<u4").tolist() == [1, 1, 2, 3]
    assert np.frombuffer(buf[21:], "<f4").tolist() == list(range(6))
    write_ivt(tmp_path / "a.ivt", arr.astype(np.float64))
    back = read_ivt(tmp_path / "a.ivt")
    assert back.dtype == np.float64 and (back == arr).all()
    with pytest.raises(ValidationError):
        decode_ivt(b"NOPE" + buf[4:])
    with pytest.raises(ValidationError):
        decode_ivt(buf[:-1])
