import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchfield import autograd as ag
from sketchfield.autograd import ShapeError, Tape, Tensor

from conftest import central_diff, rel_error


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def grad_of(fn, x):
    t = leaf(x)
    ag.backward(fn(t))
    return t.grad


def check(fn, x, tol=1e-3, h=1e-4):
    analytic = grad_of(fn, x)
    numeric = central_diff(lambda v: fn(Tensor(v)).item(), x, h)
    assert rel_error(analytic, numeric) < tol


# forward semantics -------------------------------------------------------------

def test_matmul_shape_rule():
    out = ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))
    assert out.shape == (2, 1)
    np.testing.assert_allclose(out.data, 3.0)


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 1\)"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))


def test_add_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(4))


def test_exp_of_zero_is_one():
    np.testing.assert_array_equal(ag.exp(Tensor(np.zeros((3, 2)))).data, np.ones((3, 2)))


def test_max_routes_to_argmax():
    x = leaf([1.0, 5.0, 3.0])
    m = ag.max_(x)
    assert m.item() == 5.0
    ag.backward(m)
    np.testing.assert_array_equal(x.grad, [0, 1, 0])


def test_max_ties_go_to_first():
    x = leaf([2.0, 7.0, 7.0, 1.0])
    ag.backward(ag.max_(x))
    np.testing.assert_array_equal(x.grad, [0, 1, 0, 0])
    y = leaf([[1.0, 4.0, 4.0], [3.0, 3.0, 0.0]])
    ag.backward(ag.sum_(ag.max_(y, axis=1)))
    np.testing.assert_array_equal(y.grad, [[0, 1, 0], [1, 0, 0]])


def test_float32_preserved():
    a = Tensor(np.ones(3, np.float32), requires_grad=True)
    b = ag.silu(a * 2.0)
    assert b.dtype == np.float32
    ag.backward(ag.sum_(b))
    assert a.grad.dtype == np.float32


def test_ops_do_not_mutate_inputs(rng):
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    xc, wc = x.copy(), w.copy()
    a, b = leaf(x), leaf(w)
    loss = ag.sum_(ag.silu(ag.matmul(a, b)) * ag.exp(ag.matmul(a, b)))
    ag.backward(loss)
    np.testing.assert_array_equal(x, xc)
    np.testing.assert_array_equal(w, wc)
    np.testing.assert_array_equal(a.data, xc)


# backward --------------------------------------------------------------------

def test_sum_of_squares_gradient():
    np.testing.assert_allclose(grad_of(lambda w: ag.sum_(w * w), [1.0, 2.0]), [2.0, 4.0])


def test_exp_gradient_at_zero():
    assert grad_of(lambda x: ag.sum_(ag.exp(x)), [0.0])[0] == 1.0


def test_non_scalar_loss_rejected():
    with pytest.raises(ShapeError, match="scalar"):
        ag.backward(leaf([1.0, 2.0]) * 2.0)


def test_shared_subexpression_accumulates():
    # y = x*x + x*x reuses x through two paths
    x = leaf([3.0])
    sq = x * x
    ag.backward(ag.sum_(sq + sq))
    np.testing.assert_allclose(x.grad, [12.0])


def test_tape_is_topological_and_visits_once(rng):
    a, b = leaf(rng.normal(size=(3, 3))), leaf(rng.normal(size=3))
    h = ag.silu(ag.matmul(a, a) + b)
    loss = ag.sum_(h * h + h)
    tape = Tape.record(loss)
    ids = [id(n) for n in tape.nodes]
    assert len(set(ids)) == len(ids)
    pos = {i: k for k, i in enumerate(ids)}
    for n in tape.nodes:
        for p in n.parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]
    assert tape.backward(np.ones(())) == len(tape)


def test_backward_is_bit_deterministic(rng):
    x = rng.normal(size=(5, 4)).astype(np.float32)
    w = rng.normal(size=(4, 3)).astype(np.float32)

    def run():
        a, b = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        ag.backward(ag.mean(ag.silu(ag.matmul(a, b)) ** 2))
        return a.grad, b.grad

    g1, g2 = run(), run()
    for u, v in zip(g1, g2):
        assert u.tobytes() == v.tobytes()


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with ag.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.parents == ()


# finite-difference checks per primitive ---------------------------------------

UNARY = {
    "exp": ag.exp, "sin": ag.sin, "cos": ag.cos, "tanh": ag.tanh, "sigmoid": ag.sigmoid,
    "silu": ag.silu, "neg": ag.neg, "sqrt": lambda t: ag.sqrt(t * t + 1.0),
    "log": lambda t: ag.log(t * t + 1.0), "power": lambda t: ag.power(t * t + 1.0, 1.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitives_match_finite_differences(name, rng):
    fn = UNARY[name]
    for _ in range(5):
        x = rng.normal(size=(3, 4))
        check(lambda t: ag.sum_(fn(t) * Tensor(np.arange(12.0).reshape(3, 4) / 7)), x)


def test_relu_and_clip_away_from_kinks(rng):
    for _ in range(5):
        x = rng.normal(size=10)
        x[np.abs(x) < 0.05] += 0.2
        check(lambda t: ag.sum_(ag.relu(t) * t), x, tol=1e-2)
        check(lambda t: ag.sum_(ag.clip(t, -0.5, 0.5) ** 2), x + 0.013, tol=1e-2)


def test_binary_broadcast_primitives(rng):
    b = rng.normal(size=(1, 4))
    for fn in (lambda t: ag.sum_((t + Tensor(b)) ** 2), lambda t: ag.sum_(t * Tensor(b) * t),
               lambda t: ag.sum_(Tensor(b) / (t * t + 1.0)), lambda t: ag.sum_((Tensor(b) - t) ** 3)):
        check(fn, rng.normal(size=(3, 4)))
    # gradient wrt the broadcast operand itself
    x = rng.normal(size=(3, 4))
    check(lambda t: ag.sum_((Tensor(x) * t + t) ** 2), b)


def test_reductions_and_shape_ops(rng):
    x = rng.normal(size=(3, 4))
    check(lambda t: ag.sum_(ag.mean(t, axis=0) ** 2), x)
    check(lambda t: ag.norm(t), x)
    check(lambda t: ag.sum_(ag.norm(t, axis=1) ** 2), x)
    check(lambda t: ag.sum_(ag.transpose(t) @ Tensor(np.ones((3, 2)))), x)
    check(lambda t: ag.sum_(ag.reshape(t, (2, 6)) ** 2), x)
    check(lambda t: ag.sum_(ag.broadcast_to(ag.reshape(t[0], (1, 4)), (5, 4)) ** 2), x)
    check(lambda t: ag.sum_(ag.concat([t, t * 2.0], axis=1) ** 2), x)
    check(lambda t: ag.sum_(ag.getitem(t, np.array([0, 2, 2, 1])) ** 2), x)
    y = x.copy()
    y[1, 2] += 1.0  # keep the max away from ties
    check(lambda t: ag.sum_(ag.max_(t, axis=1) ** 2), y, tol=1e-2)


def test_matmul_gradient(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
    check(lambda t: ag.sum_(ag.matmul(t, Tensor(b)) ** 2), a)
    check(lambda t: ag.sum_(ag.matmul(Tensor(a), t) ** 2), b)


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1)])
def test_conv2d_gradients(stride, pad, rng):
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    proj = rng.normal(size=ag.conv2d(Tensor(x), Tensor(w), Tensor(bias), stride, pad).shape)

    def f(xx=x, ww=w, bb=bias):
        return ag.sum_(ag.conv2d(xx, ww, bb, stride, pad) * Tensor(proj))

    check(lambda t: f(xx=t), x)
    check(lambda t: f(ww=t), w)
    check(lambda t: f(bb=t), bias)


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(1, 2, 3, 3))
    out = ag.conv2d(Tensor(x), Tensor(w), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 1, 3, 3))
    for i in range(3):
        for j in range(3):
            ref[0, 0, i, j] = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[0]).sum()
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_random_three_layer_mlp_gradient(rng):
    """h=1e-3 central differences on a small SiLU network, every weight."""
    sizes = [4, 6, 5, 2]
    ws = [rng.normal(size=(i, o)) / np.sqrt(i) for i, o in zip(sizes[:-1], sizes[1:])]
    x = rng.normal(size=(3, 4))
    flat = np.concatenate([w.ravel() for w in ws])

    def net(theta):
        pos, h = 0, Tensor(x)
        for k, w in enumerate(ws):
            n = w.size
            wt = ag.reshape(ag.getitem(theta, slice(pos, pos + n)), w.shape)
            pos += n
            h = ag.matmul(h, wt)
            if k < len(ws) - 1:
                h = ag.silu(h)
        return ag.sum_(ag.sigmoid(h) ** 2)

    analytic = grad_of(net, flat)
    numeric = central_diff(lambda v: net(Tensor(v)).item(), flat, h=1e-3)
    assert rel_error(analytic, numeric) < 1e-3


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8))
def test_sum_gradient_is_ones(values):
    np.testing.assert_array_equal(grad_of(ag.sum_, values), np.ones(len(values)))
