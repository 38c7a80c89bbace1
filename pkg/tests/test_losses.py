import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchfield import autograd as ag
from sketchfield.autograd import Tensor
from sketchfield.losses import (IntensityMap, LossWeights, cell_centers, gamma_schedule, implicit_loss,
                                intensity_map, mse_loss, visual_loss)
from sketchfield.sketch import SketchError, VectorSketch, point_segment_distance

from conftest import central_diff, rel_error, stable_configs


def brute_map(points, offsets, gamma, res, composition="max"):
    """Loop over cells and segments with the closed-form point-to-segment distance."""
    ends = list(offsets[1:]) + [len(points)]
    out = np.zeros(res)
    for idx, g in enumerate(cell_centers(*res)):
        per = []
        for s, e in zip(offsets, ends):
            segs = [(points[s], points[s])] if e - s == 1 else [(points[i], points[i + 1]) for i in range(s, e - 1)]
            per.append(max(np.exp(-gamma * point_segment_distance(g, a, b)) for a, b in segs))
        out.flat[idx] = max(per) if composition == "max" else sum(per)
    return out


def test_mse_examples():
    assert mse_loss(np.zeros((3, 2)), np.zeros((3, 2))).item() == 0
    assert mse_loss(np.array([[0.3, 0.4]]), np.zeros((1, 2))).item() == pytest.approx(0.25)
    assert mse_loss(np.array([[0.1, 0], [0, 0.2]]), np.zeros((2, 2))).item() == pytest.approx(0.025)


def test_mse_length_mismatch():
    with pytest.raises(SketchError, match="mismatch"):
        mse_loss(np.zeros((3, 2)), np.zeros((2, 2)))


def test_on_segment_cell_is_one():
    # cell (row 0, col 2) of a 4x4 grid has center (0.625, 0.125)
    m = intensity_map(np.array([[0.0, 0.125], [1.0, 0.125]]), [0], 150.0, (4, 4)).array()
    assert m[0, 2] == pytest.approx(1.0)
    assert m.max() <= 1.0


def test_off_segment_value():
    # distance 0.1 from the horizontal segment -> exp(-15)
    m = intensity_map(np.array([[0.0, 0.0], [1.0, 0.0]]), [0], 150.0, (10, 2)).array()
    # row 0 center y = 0.05; row 1 center y = 0.15
    assert m[0, 0] == pytest.approx(np.exp(-7.5), rel=1e-6)
    assert np.exp(-15) == pytest.approx(3.059e-7, rel=1e-3)
    g = np.array([0.5, 0.1])
    assert np.exp(-150 * point_segment_distance(g, np.array([0., 0.]), np.array([1., 0.]))) == pytest.approx(3.059e-7, rel=1e-3)


@pytest.mark.parametrize("composition", ["max", "sum"])
def test_map_matches_brute_force(composition):
    rng = np.random.default_rng(0)
    pts = rng.random((9, 2))
    offs = np.array([0, 4, 8])  # the last stroke is a single dot
    got = intensity_map(pts, offs, 30.0, (12, 10), composition).array()
    np.testing.assert_allclose(got, brute_map(pts, offs, 30.0, (12, 10), composition), rtol=1e-12, atol=1e-300)


def test_differentiable_map_equals_plain():
    pts = np.random.default_rng(1).random((6, 2))
    a = intensity_map(pts, [0, 3], 50.0, (16, 16)).array()
    b = intensity_map(Tensor(pts, requires_grad=True), [0, 3], 50.0, (16, 16)).array()
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_large_gamma_gives_thin_mask():
    sk = VectorSketch.from_strokes([[(0.1, 0.5), (0.9, 0.5)]])
    m = intensity_map(sk, None, 5000.0, (32, 32)).array()
    on = m > 0.5
    assert on.any(axis=1).sum() <= 2 and (m > 1e-3).sum() <= 2 * 32


def test_empty_and_bad_gamma():
    with pytest.raises(SketchError, match="empty"):
        intensity_map(np.zeros((0, 2)), [0], 150.0)
    with pytest.raises(ValueError):
        intensity_map(np.zeros((2, 2)), [0], 0.0)


def test_translation_equivariance():
    pts = np.array([[0.2, 0.3], [0.4, 0.35], [0.3, 0.5]])
    base = intensity_map(pts, [0], 40.0, (32, 32)).array()
    moved = intensity_map(pts + np.array([3, 5]) / 32, [0], 40.0, (32, 32)).array()
    np.testing.assert_allclose(moved[5:, 3:], base[:-5, :-3], rtol=1e-9, atol=1e-15)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=6))
def test_monotone_in_gamma_off_stroke(pts):
    pts = np.array(pts)
    maps = [intensity_map(pts, [0], g, (16, 16)).array() for g in (20.0, 50.0, 150.0, 200.0)]
    off = maps[0] < 1.0
    for lo, hi in zip(maps[:-1], maps[1:]):
        assert np.all(hi[off] <= lo[off])


def test_visual_loss_examples():
    sk = VectorSketch.from_strokes([[(0.1, 0.1), (0.9, 0.1), (0.9, 0.9)]])
    split = VectorSketch.from_strokes([[(0.1, 0.1), (0.9, 0.1)], [(0.9, 0.1), (0.9, 0.9)]])
    a = intensity_map(sk, None, 150.0)
    assert visual_loss(a, a).item() == 0
    assert visual_loss(a, intensity_map(split, None, 150.0)).item() == pytest.approx(0, abs=1e-12)


def test_visual_loss_mismatch_errors():
    a = IntensityMap(np.zeros((4, 4)), 150.0)
    with pytest.raises(SketchError, match="resolution"):
        visual_loss(a, IntensityMap(np.zeros((8, 8)), 150.0))
    with pytest.raises(SketchError, match="gamma"):
        visual_loss(a, IntensityMap(np.zeros((4, 4)), 20.0))


@given(st.integers(0, 10 ** 6))
def test_visual_loss_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = intensity_map(rng.random((4, 2)), [0], 80.0, (16, 16))
    b = intensity_map(rng.random((5, 2)), [0, 2], 80.0, (16, 16))
    assert visual_loss(a, b).item() == visual_loss(b, a).item()


def _vis(p, gt, offs, gamma=150.0, res=(32, 32)):
    return visual_loss(gt, intensity_map(p, offs, gamma, res))


@pytest.mark.parametrize("seed", range(8))
def test_visual_loss_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    gt = intensity_map(rng.random((6, 2)), [0, 3], 150.0, (32, 32))
    (p0,) = stable_configs(rng, 1, 6, [0, 3], (32, 32))
    t = Tensor(p0, requires_grad=True)
    ag.backward(_vis(t, gt, [0, 3]))
    num = central_diff(lambda x: _vis(Tensor(x), gt, [0, 3]).item(), p0)
    assert rel_error(t.grad, num) < 1e-2


def test_implicit_loss_combines_terms():
    rng = np.random.default_rng(3)
    gt = rng.random((5, 2))
    gm = intensity_map(gt, [0], 150.0)
    total, lv, lm = implicit_loss(gt, [0], gm, gt)
    assert total.item() == 0
    pred = rng.random((5, 2))
    total, lv, lm = implicit_loss(pred, [0], gm, gt, LossWeights(mse=0.7))
    assert total.item() == pytest.approx(lv.item() + 0.7 * lm.item())
    total0, lv0, _ = implicit_loss(pred, [0], gm, gt, LossWeights(mse=0.0))
    assert total0.item() == pytest.approx(lv0.item())
    assert 1.0 + 0.7 * 0.5 == pytest.approx(1.35)


@pytest.mark.parametrize("seed", range(4))
def test_implicit_loss_gradient_fd(seed):
    rng = np.random.default_rng(10 + seed)
    gt = rng.random((7, 2))
    gm = intensity_map(gt, [0, 4], 150.0, (32, 32))
    (p0,) = stable_configs(rng, 1, 7, [0, 4], (32, 32))

    def f(p):
        return implicit_loss(p, [0, 4], gm, gt, resolution=(32, 32))[0]

    t = Tensor(p0, requires_grad=True)
    ag.backward(f(t))
    assert rel_error(t.grad, central_diff(lambda x: f(Tensor(x)).item(), p0)) < 1e-2


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(mse=-1)


def test_gamma_schedule():
    assert gamma_schedule(0, 2000) == 20.0
    assert gamma_schedule(2000, 2000) == 200.0
    assert gamma_schedule(1000, 2000) == 110.0
    assert gamma_schedule(1099, 2000) == 110.0  # held between updates
    assert gamma_schedule(1100, 2000) == pytest.approx(119.0)


@given(st.integers(1, 5000), st.data())
def test_gamma_schedule_monotone(total, data):
    a = data.draw(st.integers(0, total))
    b = data.draw(st.integers(a, total))
    assert 20 <= gamma_schedule(a, total) <= gamma_schedule(b, total) <= 200
