import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kddt import autodiff as ad
from kddt.autodiff import Tensor
from kddt.data import tokenize_many, tokenize_packet
from kddt.errors import ConfigurationError, DimensionError
from kddt.lm import FeatureScaler, LanguageModel, LMConfig, lm_train, packet_docs
from kddt.vae import (Vae, VaeConfig, VaeDecoding, VaeEncoding, reconstruction_accuracy, reconstruction_nll,
                      vae_decode, vae_encode, vae_loss, vae_pretrain)

SMALL = VaeConfig(latent_dim=4, dec_dim=3, conv_channels=2, feature_dim=5, vocab_size=7, packet_len=6, seed=0)


def _features(n, dim=64, seed=0):
    return np.random.default_rng(seed).normal(0, 1, (n, dim)).astype(np.float32)


# encoder ---------------------------------------------------------------------

def test_zero_noise_latent_is_the_mean():
    enc = Vae(VaeConfig()).encode(_features(3))
    assert np.array_equal(enc.h.data, enc.mu.data)
    assert ((enc.sigma.data > 0) & (enc.sigma.data < 1)).all()


def test_zero_initialised_heads():
    vae = Vae(VaeConfig())
    for name in ("vae/enc/mu/W", "vae/enc/mu/b", "vae/enc/sigma/W", "vae/enc/sigma/b"):
        vae.params[name].data[:] = 0
    eps = np.random.default_rng(1).standard_normal((2, 32)).astype(np.float32)
    enc = vae.encode(_features(2), eps)
    assert (enc.mu.data == 0).all()
    assert np.allclose(enc.sigma.data, 0.5)
    assert np.allclose(enc.h.data, 0.5 * eps)


def test_resampled_noise_moves_only_the_latent():
    vae = Vae(VaeConfig())
    f = _features(2)
    rng = np.random.default_rng(0)
    a = vae.encode(f, rng.standard_normal((2, 32)))
    b = vae.encode(f, rng.standard_normal((2, 32)))
    assert np.array_equal(a.mu.data, b.mu.data) and np.array_equal(a.sigma.data, b.sigma.data)
    assert not np.allclose(a.h.data, b.h.data)


def test_encoder_rejects_bad_noise_shape():
    with pytest.raises(DimensionError):
        Vae(VaeConfig()).encode(_features(2), np.zeros((2, 31)))


def test_encode_through_language_model():
    lm = LanguageModel(LMConfig(seed=0))
    vae = Vae(VaeConfig())
    tp = tokenize_packet(b"\x01\x02\x03\x04")
    direct = vae.encode(lm.pooled_features(tp.ids[None], np.array([tp.true_len])))
    assert np.allclose(vae_encode(tp, lm, vae).mu.data, direct.mu.data[0])


# decoder ---------------------------------------------------------------------

def test_decoder_rows_are_distributions_and_deterministic():
    vae = Vae(VaeConfig())
    h = _features(2, 32)
    a = vae_decode(h[0], vae).x_hat.data
    assert a.shape == (64, 260)
    assert np.allclose(a.sum(-1), 1, atol=1e-6)
    assert np.array_equal(a, vae.decode(h[0]).x_hat.data)


def test_zero_output_projection_is_uniform():
    vae = Vae(VaeConfig())
    vae.params["vae/dec/out/W"].data[:] = 0
    assert np.allclose(vae.decode(_features(1, 32)).x_hat.data, 1 / 260, atol=1e-7)


@pytest.mark.parametrize("T", [1, 2, 5, 40, 63, 64])
def test_truncated_decode_matches_full_decode(T):
    vae = Vae(VaeConfig())
    h = _features(3, 32)
    full = vae.decode(h).x_hat.data
    cut = vae.decode(h, T).x_hat.data
    assert np.allclose(cut, full[:, :T], atol=1e-6)


def test_decoder_rejects_bad_position_count():
    with pytest.raises(DimensionError):
        Vae(VaeConfig()).decode(_features(1, 32), 65)


# loss ------------------------------------------------------------------------

def test_loss_vanishes_for_prior_and_exact_reconstruction():
    ids = np.array([[1, 5, 7, 2, 0, 0]])
    x_hat = np.eye(10)[ids]
    enc = VaeEncoding(Tensor(np.zeros((1, 3))), Tensor(np.ones((1, 3))), np.zeros((1, 3)), Tensor(np.zeros((1, 3))))
    loss = vae_loss(enc, VaeDecoding(None, Tensor(x_hat)), ids, np.array([4]))
    assert float(loss.total.data[0]) == 0.0


def test_uniform_reconstruction_costs_log_vocab_per_token():
    x_hat = Tensor(np.full((1, 12, 260), 1 / 260))
    ids = np.arange(12)[None] + 4
    mll = reconstruction_nll(x_hat, ids, np.array([10]))
    assert float(mll.data[0]) == pytest.approx(10 * math.log(260), rel=1e-12)


def test_kl_term_is_standalone_kl_and_ignores_the_decoded_packet():
    vae = Vae(VaeConfig())
    f = _features(2)
    ids, lengths = tokenize_many([b"\x01\x02", b"\x09" * 20])
    loss, enc, _ = vae.loss(f, ids, lengths)
    other, _, _ = vae.loss(f, ids[::-1], lengths[::-1])
    assert np.array_equal(loss.kl.data, ad.gaussian_kl(enc.mu, enc.sigma).data)
    assert np.array_equal(loss.kl.data, other.kl.data)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_total_is_kl_plus_mll(seed):
    rng = np.random.default_rng(seed)
    vae = Vae(SMALL)
    f = rng.normal(0, 2, (3, 5)).astype(np.float32)
    ids = rng.integers(0, 7, (3, 6))
    lengths = rng.integers(1, 7, 3)
    loss, _, _ = vae.loss(f, ids, lengths, rng.standard_normal((3, 4)))
    assert np.array_equal(loss.total.data, (loss.kl + loss.mll).data)
    m = loss.mean()
    assert float(m.total.data) == float((m.kl + m.mll).data)


def test_gradients_reach_mean_and_scale_heads():
    rng = np.random.default_rng(0)
    store = Vae(SMALL).params.astype(np.float64)
    f = rng.normal(0, 1, (3, 5))
    ids = rng.integers(0, 7, (3, 6))
    lengths = np.array([6, 3, 4])
    eps = rng.standard_normal((3, 4))

    def total(s):
        loss, _, _ = Vae(SMALL, s).loss(f, ids, lengths, eps)
        return ad.mean(loss.total)

    report = ad.gradcheck(total, store)
    assert report.ok, report.errors
    for head in ("mu", "sigma"):
        assert f"vae/enc/{head}/W" in report.errors


# pretraining -----------------------------------------------------------------

def test_pretraining_is_deterministic_and_finite():
    f = _features(30)
    ids, lengths = tokenize_many([bytes([i % 5, 3]) for i in range(30)])
    a = vae_pretrain(f, ids, lengths, VaeConfig(epochs=2), max_batches=4)
    b = vae_pretrain(f, ids, lengths, VaeConfig(epochs=2), max_batches=4)
    assert a.losses == b.losses and len(a.losses) == 4
    assert np.isfinite(a.losses).all()
    for name in a.model.params.names():
        assert np.array_equal(a.model.params[name].data, b.model.params[name].data)


def test_pretraining_errors():
    with pytest.raises(ConfigurationError):
        vae_pretrain(np.zeros((0, 64)), np.zeros((0, 64), int), np.zeros(0, int), VaeConfig())
    with pytest.raises(DimensionError):
        vae_pretrain(np.zeros((2, 8)), np.zeros((2, 64), int), np.ones(2, int), VaeConfig())
    with pytest.raises(ConfigurationError):
        VaeConfig(kernel_size=2)


def test_reconstruction_of_a_small_corpus():
    rng = np.random.default_rng(0)
    payloads = [bytes(rng.integers(0, 256, 8).tolist()) for _ in range(4)]
    corpus = [payloads[i % 4] for i in range(100)]
    ids, lengths = tokenize_many(corpus)
    lm = lm_train(packet_docs(ids, lengths), LMConfig(epochs=1, seed=0)).model
    raw = lm.pooled_features(ids, lengths)
    f = FeatureScaler.fit(raw)(raw)
    vae = vae_pretrain(f, ids, lengths, VaeConfig(epochs=50, seed=0)).model
    assert reconstruction_accuracy(vae, f, ids, lengths) > 0.95
