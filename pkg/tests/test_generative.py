from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchfield import autograd as ag
from sketchfield.autograd import Tensor
from sketchfield.generative import (Encoder, VAEConfig, encode_vae, kl_divergence, load_encoder,
                                    load_raster, reparameterize, sample_unconditional, save_encoder,
                                    save_png, train_vae, vectorize)
from sketchfield.model import Decoder
from sketchfield.raster import rasterize
from sketchfield.sketch import VectorSketch

from conftest import central_diff, rel_error


@pytest.fixture(scope="module")
def parts():
    dec = Decoder.create(latent_dim=8, L=4, depth=3, width=32, rng=0)
    enc = Encoder.create(d=8, hidden=16, rng=1)
    return dec, enc


def digit(i):
    return VectorSketch.from_strokes([[(0.2 + 0.1 * i, 0.1), (0.5, 0.9), (0.8, 0.2)]], i)


# KL and reparameterization -----------------------------------------------------

@given(st.lists(st.floats(-10, 10), min_size=1, max_size=16))
def test_kl_unit_variance_is_half_squared_norm(mu):
    mu = np.array(mu)
    kl = kl_divergence(mu[None], np.zeros((1, len(mu)))).item()
    assert abs(kl - 0.5 * mu @ mu) <= 1e-6 * max(1.0, 0.5 * mu @ mu)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=8))
def test_kl_non_negative(pairs):
    mu, lv = np.array(pairs).T
    assert kl_divergence(mu[None], lv[None]).item() >= 0


def test_kl_zero_only_at_prior():
    assert kl_divergence(np.zeros((1, 4)), np.zeros((1, 4))).item() == 0
    assert kl_divergence(np.zeros((1, 4)), np.full((1, 4), 0.1)).item() > 0


def test_reparameterize_examples():
    mu = np.array([[0.3, -1.2]])
    assert np.array_equal(reparameterize(mu, np.array([[5.0, -3.0]]), np.ones((1, 2)), sigma_zero=True).data, mu)
    e = np.array([[0.7, -0.4]])
    np.testing.assert_array_equal(reparameterize(np.zeros((1, 2)), np.zeros((1, 2)), e).data, e)


def test_reparameterize_gradients():
    rng = np.random.default_rng(0)
    mu0, lv0, eps, w = rng.normal(size=(4, 1, 5))

    def f(mu, lv):
        return ag.sum_(reparameterize(mu, lv, eps) * Tensor(w))

    mu, lv = Tensor(mu0, requires_grad=True), Tensor(lv0, requires_grad=True)
    ag.backward(f(mu, lv))
    np.testing.assert_allclose(mu.grad, w)  # dz/dmu = 1
    sigma = np.exp(0.5 * lv0)
    np.testing.assert_allclose(lv.grad, w * eps * 0.5 * sigma)  # dz/dsigma = eps, chained
    assert rel_error(mu.grad, central_diff(lambda x: f(Tensor(x), Tensor(lv0)).item(), mu0)) < 1e-3
    assert rel_error(lv.grad, central_diff(lambda x: f(Tensor(mu0), Tensor(x)).item(), lv0)) < 1e-3


def test_kl_gradient_fd():
    rng = np.random.default_rng(1)
    mu0, lv0 = rng.normal(size=(2, 3, 4))
    mu, lv = Tensor(mu0, requires_grad=True), Tensor(lv0, requires_grad=True)
    ag.backward(ag.sum_(kl_divergence(mu, lv)))
    np.testing.assert_allclose(mu.grad, mu0)
    np.testing.assert_allclose(lv.grad, 0.5 * (np.exp(lv0) - 1))


# encoder -----------------------------------------------------------------------

def test_encoder_shapes_and_sigma_positive(parts):
    _, enc = parts
    imgs = np.random.default_rng(0).random((3, 64, 64))
    mu, lv = enc.forward(imgs)
    assert mu.shape == (3, 8) and lv.shape == (3, 8)
    assert np.all(np.exp(0.5 * lv.data) > 0)
    with pytest.raises(ValueError, match="64x64"):
        enc.forward(np.zeros((1, 32, 32)))


def test_encoder_gradient_fd():
    enc = Encoder.create(d=2, hidden=4, size=16, rng=2)
    for t in enc.tensors:
        t.data = t.data.astype(np.float64)
    img = np.random.default_rng(3).random((1, 16, 16))
    w = np.random.default_rng(4).normal(size=(1, 2))

    def loss():
        mu, lv = enc.forward(img)
        return ag.sum_(mu * Tensor(w)) + ag.sum_(ag.exp(lv))

    ag.backward(loss())
    conv = enc.tensors[0]
    analytic = conv.grad.copy()

    def f(x):
        old = conv.data
        conv.data = x
        try:
            with ag.no_grad():
                return loss().item()
        finally:
            conv.data = old

    assert rel_error(analytic, central_diff(f, conv.data.copy())) < 1e-3


def test_encode_vae_determinism(parts):
    _, enc = parts
    img = rasterize(digit(0))
    eps = np.random.default_rng(5).normal(size=8)
    a, b = encode_vae(enc, img, eps=eps), encode_vae(enc, img, eps=eps)
    np.testing.assert_array_equal(a.latent, b.latent)
    z0 = encode_vae(enc, img, eps=eps, sigma_zero=True)
    np.testing.assert_array_equal(z0.z, z0.mu)


def test_encoder_round_trip(tmp_path, parts):
    _, enc = parts
    save_encoder(tmp_path / "v.bin", enc)
    back = load_encoder(tmp_path / "v.bin")
    assert (back.d, back.hidden, back.size) == (8, 16, 64)
    for a, b in zip(enc.arrays(), back.arrays()):
        np.testing.assert_allclose(a, b, atol=2e-3, rtol=1e-3)


# sampling ----------------------------------------------------------------------

def test_unconditional_ranges(parts):
    dec, enc = parts
    for seed in range(100):
        sk = sample_unconditional(enc, dec, seed)
        assert 10 <= sk.n_strokes <= 30 and 100 <= sk.n_points <= 300
        assert sk.points.min() >= 0 and sk.points.max() <= 1
        assert rasterize(sk).sum() > 0


def test_unconditional_reproducible(parts):
    dec, enc = parts
    a, b = sample_unconditional(enc, dec, 7), sample_unconditional(enc, dec, 7)
    np.testing.assert_array_equal(a.points, b.points)
    z = sample_unconditional(enc, dec, 1, J=50, K=5, eps=np.zeros(8))
    np.testing.assert_array_equal(z.points, sample_unconditional(enc, dec, 2, J=50, K=5, eps=np.zeros(8)).points)


def test_vectorize(parts):
    dec, enc = parts
    img = rasterize(digit(1))
    a = vectorize(enc, dec, img, 1, 40, 3, seed=0, sigma_zero=True)
    b = vectorize(enc, dec, img, 1, 40, 3, seed=9, sigma_zero=True)
    np.testing.assert_array_equal(a[0].points, b[0].points)
    assert vectorize(enc, dec, img, 1, 40, 7, sigma_zero=True)[0].n_strokes == 7
    assert len(vectorize(enc, dec, img, 4, 40, 3, seed=0)) == 4


# training ----------------------------------------------------------------------

def test_train_vae_keeps_decoder_frozen(parts):
    dec, _ = parts
    before = dec.checksum()
    sks = [digit(i) for i in range(4)]
    cfg = VAEConfig(hidden=16, batch_size=2, steps=8, resolution=32, log_every=4, point_phase=0.5)
    enc, hist = train_vae(dec, sks, cfg)
    assert dec.checksum() == before
    assert len(hist) == 8 and all(np.isfinite(h["loss"]) and h["kl"] >= 0 for h in hist)
    enc2, hist2 = train_vae(dec, sks, cfg)
    assert [h["loss"] for h in hist] == [h["loss"] for h in hist2]


def test_train_vae_dimension_check(parts):
    dec, _ = parts
    with pytest.raises(ValueError, match="dimension"):
        train_vae(dec, [digit(0)], VAEConfig(steps=1), enc=Encoder.create(d=4, hidden=8))


# raster I/O --------------------------------------------------------------------

def test_load_raster_inverts_light_background(tmp_path):
    img = np.ones((128, 128))
    img[60:62, 10:120] = 0.0  # dark ink on white
    save_png(tmp_path / "a.png", img)
    r = load_raster(tmp_path / "a.png")
    assert r.shape == (64, 64) and r.min() >= 0 and r.max() <= 1
    assert r[30, 32] > 0.5 and r[5, 5] == 0
