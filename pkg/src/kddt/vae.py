"""Variational packet autoencoder used as the distillation teacher.

The encoder maps a pooled packet feature vector to a diagonal Gaussian
(ReLU mean, sigmoid scale) and samples a latent with the reparameterisation
trick. The decoder expands the latent to a ``(channels, L_pkt)`` map,
convolves, pools with stride 1 and projects every position onto the
vocabulary. The same two blocks, at a smaller width, form the student's
packet encoder and next-packet decoder.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor, uniform_init, zeros
from .data.vocab import DEFAULT_PACKET_LEN
from .errors import ConfigurationError, DimensionError

PREFIX = "vae/"


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 32
    dec_dim: int = 32
    conv_channels: int = 6
    kernel_size: int = 3
    feature_dim: int = 64
    vocab_size: int = 260
    packet_len: int = DEFAULT_PACKET_LEN
    lr: float = 1e-3
    batch_size: int = 12
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "dec_dim", "conv_channels", "feature_dim", "vocab_size",
                     "packet_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be odd")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VaeEncoding:
    mu: Tensor
    sigma: Tensor
    epsilon: np.ndarray
    h: Tensor


@dataclass
class VaeDecoding:
    h_dec: Tensor
    x_hat: Tensor  # (..., T, |V|) rows are distributions


@dataclass
class VaeLoss:
    kl: Tensor
    mll: Tensor
    total: Tensor

    def mean(self) -> "VaeLoss":
        kl, mll = ad.mean(self.kl), ad.mean(self.mll)
        return VaeLoss(kl, mll, kl + mll)


# building blocks ---------------------------------------------------------------

class GaussianEncoder:
    """features -> (mu = relu(W_mu f + b), sigma = sigmoid(W_s f + b), h = mu + eps * sigma)."""

    def __init__(self, store: ParameterStore, prefix: str):
        self.store, self.prefix = store, prefix

    @staticmethod
    def init(store: ParameterStore, prefix: str, rng, feature_dim: int, latent_dim: int) -> None:
        for head in ("mu", "sigma"):
            store.add(f"{prefix}{head}/W", uniform_init(rng, (latent_dim, feature_dim), feature_dim))
            store.add(f"{prefix}{head}/b", zeros((latent_dim,)))

    @property
    def latent_dim(self) -> int:
        return self.store[self.prefix + "mu/W"].shape[0]

    def __call__(self, features, epsilon=None) -> VaeEncoding:
        s, p = self.store, self.prefix
        mu = ad.relu(ad.linear(features, s[p + "mu/W"], s[p + "mu/b"]))
        sigma = ad.sigmoid(ad.linear(features, s[p + "sigma/W"], s[p + "sigma/b"]))
        eps = np.zeros(mu.shape, dtype=mu.dtype) if epsilon is None else np.asarray(epsilon, dtype=mu.dtype)
        if eps.shape != mu.shape:
            raise DimensionError(f"epsilon: expected shape {mu.shape}, got {eps.shape}")
        return VaeEncoding(mu, sigma, eps, ad.reparameterize(mu, sigma, eps))


class ConvDecoder:
    """latent -> linear -> (d, L_pkt) -> conv -> maxpool(2, stride 1) -> per-position softmax over |V|."""

    def __init__(self, store: ParameterStore, prefix: str, packet_len: int):
        self.store, self.prefix, self.packet_len = store, prefix, packet_len

    @staticmethod
    def init(store: ParameterStore, prefix: str, rng, latent_dim: int, dec_dim: int, packet_len: int,
             channels: int, kernel_size: int, vocab_size: int) -> None:
        store.add(prefix + "lin/W", uniform_init(rng, (dec_dim * packet_len, latent_dim), latent_dim))
        store.add(prefix + "lin/b", zeros((dec_dim * packet_len,)))
        fan = dec_dim * kernel_size
        store.add(prefix + "conv/K", uniform_init(rng, (channels, dec_dim, kernel_size), fan))
        store.add(prefix + "conv/b", zeros((channels,)))
        store.add(prefix + "out/W", uniform_init(rng, (vocab_size, channels), channels))
        store.add(prefix + "out/b", zeros((vocab_size,)))

    def __call__(self, h, n_positions: int | None = None) -> VaeDecoding:
        """Distributions for the first ``n_positions`` token positions (all by default).

        Positions past ``n_positions + 1`` cannot influence the kept ones, so
        they are cut before the convolution.
        """
        s, p, L = self.store, self.prefix, self.packet_len
        h = ad.as_tensor(h)
        T = L if n_positions is None else int(n_positions)
        if not 1 <= T <= L:
            raise DimensionError(f"n_positions must lie in [1, {L}], got {T}")
        K = s[p + "conv/K"]
        half = K.shape[2] // 2
        lead = h.shape[:-1]
        flat = ad.reshape(h, (-1, h.shape[-1]))
        lin = ad.linear(flat, s[p + "lin/W"], s[p + "lin/b"])
        grid = ad.reshape(lin, (lin.shape[0], -1, L))
        keep = min(L, T + 1 + half)
        if keep < L:
            grid = grid[:, :, :keep]
        conv = ad.conv1d(grid, K, s[p + "conv/b"])
        pooled = ad.maxpool1d(conv, window=2, stride=1, pad_right=1)
        if keep < L or T < L:
            pooled = pooled[:, :, :T]
        rows = ad.transpose(pooled, (0, 2, 1))  # (B, T, C)
        logits = ad.linear(rows, s[p + "out/W"], s[p + "out/b"])
        if lead != (logits.shape[0],):
            logits = ad.reshape(logits, lead + logits.shape[1:])
        # softmax last, so a following cross-entropy can fuse with it
        return VaeDecoding(pooled, ad.softmax(logits))


def reconstruction_nll(x_hat: Tensor, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Sum of per-position cross-entropies over real (non-PAD) tokens, one value per packet."""
    T = x_hat.shape[-2]
    ids = np.asarray(ids)[..., :T]
    ce = ad.cross_entropy(x_hat, ids)
    mask = (np.arange(T) < np.asarray(lengths)[..., None]).astype(x_hat.dtype)
    return ad.sum_(ad.mul(ce, Tensor(mask)), axis=-1)


def vae_loss(enc: VaeEncoding, dec: VaeDecoding, ids: np.ndarray, lengths) -> VaeLoss:
    kl = ad.gaussian_kl(enc.mu, enc.sigma)
    mll = reconstruction_nll(dec.x_hat, ids, lengths)
    return VaeLoss(kl, mll, kl + mll)


# teacher ---------------------------------------------------------------------

class Vae:
    def __init__(self, cfg: VaeConfig, params: ParameterStore | None = None):
        self.cfg = cfg
        if params is None:
            params = ParameterStore()
            rng = np.random.default_rng(cfg.seed)
            GaussianEncoder.init(params, PREFIX + "enc/", rng, cfg.feature_dim, cfg.latent_dim)
            ConvDecoder.init(params, PREFIX + "dec/", rng, cfg.latent_dim, cfg.dec_dim, cfg.packet_len,
                             cfg.conv_channels, cfg.kernel_size, cfg.vocab_size)
        self.params = params
        self.encoder = GaussianEncoder(params, PREFIX + "enc/")
        self.decoder = ConvDecoder(params, PREFIX + "dec/", cfg.packet_len)

    def encode(self, features, epsilon=None) -> VaeEncoding:
        return self.encoder(features, epsilon)

    def decode(self, h, n_positions: int | None = None) -> VaeDecoding:
        return self.decoder(h, n_positions)

    def loss(self, features, ids, lengths, epsilon=None) -> tuple[VaeLoss, VaeEncoding, VaeDecoding]:
        lengths = np.asarray(lengths)
        enc = self.encode(features, epsilon)
        dec = self.decode(enc.h, int(np.max(lengths, initial=1)))
        return vae_loss(enc, dec, ids, lengths), enc, dec

    def teacher_targets(self, features) -> np.ndarray:
        """Noise-free latents (the means) used as distillation targets."""
        return self.encode(features).mu.data.copy()

    def reconstruct(self, features, n_positions: int | None = None) -> np.ndarray:
        """Greedy token ids from the noise-free latent."""
        dec = self.decode(self.encode(features).h, n_positions)
        return np.argmax(dec.x_hat.data, axis=-1)


def vae_encode(tp, lm, vae: Vae, epsilon=None) -> VaeEncoding:
    """Encode one tokenised packet through the frozen language model."""
    feats = lm.pooled_features(tp.ids[None], np.array([tp.true_len]))
    return vae.encode(feats[0], epsilon)


def vae_decode(h, vae: Vae) -> VaeDecoding:
    return vae.decode(h)


@dataclass
class VaeTrainResult:
    model: Vae
    losses: list[float]
    epoch_losses: list[float]


def vae_pretrain(features: np.ndarray, ids: np.ndarray, lengths: np.ndarray, cfg: VaeConfig,
                 max_batches: int | None = None) -> VaeTrainResult:
    """Minimise the mean of KL + reconstruction NLL over seeded shuffled batches."""
    features = np.asarray(features, dtype=np.float32)
    n = len(features)
    if n == 0:
        raise ConfigurationError("empty pretraining corpus")
    if features.shape[1] != cfg.feature_dim:
        raise DimensionError(f"features have width {features.shape[1]}, config expects {cfg.feature_dim}")
    model = Vae(cfg)
    opt = ad.AdamW(model.params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    losses, epoch_losses = [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            eps = rng.standard_normal((len(idx), cfg.latent_dim)).astype(np.float32)
            loss, _, _ = model.loss(features[idx], ids[idx], lengths[idx], eps)
            total = ad.mean(loss.total)
            total.backward()
            opt.step()
            epoch.append(float(total.data))
            if max_batches is not None and len(losses) + len(epoch) >= max_batches:
                break
        losses += epoch
        epoch_losses.append(float(np.mean(epoch)))
        if max_batches is not None and len(losses) >= max_batches:
            break
    return VaeTrainResult(model, losses, epoch_losses)


def reconstruction_accuracy(model: Vae, features, ids, lengths) -> float:
    """Fraction of real token positions whose argmax matches the input token."""
    lengths = np.asarray(lengths)
    T = int(np.max(lengths))
    pred = model.reconstruct(features, T)
    mask = np.arange(T)[None, :] < lengths[:, None]
    return float((pred == np.asarray(ids)[:, :T])[mask].mean())
