"""Packet language model: token embedding, bi-LSTM and a next-token softmax.

The model reads a window of ``context_len`` tokens, sums the two LSTM
directions position by position, mean-pools the result and projects it to a
distribution over the vocabulary. Downstream models use the per-token
bi-LSTM states of a whole packet as frozen features.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor, uniform_init, zeros
from .data.vocab import PAD, TokenizedPacket
from .errors import ConfigurationError, DimensionError

PREFIX = "lm/"


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int = 260
    embed_dim: int = 64
    hidden_dim: int = 64
    context_len: int = 32
    lr: float = 1e-3
    batch_size: int = 12
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 3
    # None: every position is a real token and only full windows are sampled
    pad_id: int | None = PAD
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "context_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _lstm_params(store, rng, prefix, d_in, H):
    store.add(prefix + "w_ih", uniform_init(rng, (4 * H, d_in), H))
    store.add(prefix + "w_hh", uniform_init(rng, (4 * H, H), H))
    store.add(prefix + "b", zeros((4 * H,)))


def init_lm_params(cfg: LMConfig, rng: np.random.Generator) -> ParameterStore:
    store = ParameterStore()
    store.add(PREFIX + "embed", rng.normal(0, 0.3, (cfg.vocab_size, cfg.embed_dim)).astype(np.float32))
    _lstm_params(store, rng, PREFIX + "fwd/", cfg.embed_dim, cfg.hidden_dim)
    _lstm_params(store, rng, PREFIX + "bwd/", cfg.embed_dim, cfg.hidden_dim)
    store.add(PREFIX + "out/W", uniform_init(rng, (cfg.vocab_size, cfg.hidden_dim), cfg.hidden_dim))
    store.add(PREFIX + "out/b", zeros((cfg.vocab_size,)))
    return store


def _trim_leading_pad(ids: np.ndarray, mask: np.ndarray | None):
    """Drop leading columns that are padding in every row.

    Masked steps leave the recurrent state untouched and emit zeros, so the
    cut changes nothing but the cost.
    """
    if mask is None:
        return ids, mask
    live = mask.any(axis=0)
    if not live.any():
        return ids, mask
    first = int(np.argmax(live))
    last = len(live) - int(np.argmax(live[::-1]))
    return ids[:, first:last], mask[:, first:last]


class LanguageModel:
    def __init__(self, cfg: LMConfig, params: ParameterStore | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_lm_params(cfg, np.random.default_rng(cfg.seed))

    def _p(self, name: str) -> Tensor:
        return self.params[PREFIX + name]

    def _directions(self):
        fwd = (self._p("fwd/w_ih"), self._p("fwd/w_hh"), self._p("fwd/b"))
        bwd = (self._p("bwd/w_ih"), self._p("bwd/w_hh"), self._p("bwd/b"))
        return fwd, bwd

    def _mask(self, ids: np.ndarray) -> np.ndarray | None:
        return None if self.cfg.pad_id is None else ids != self.cfg.pad_id

    def hidden(self, ids: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        """Summed bi-LSTM states, shape ``(B, L, hidden_dim)``."""
        x = ad.embedding(ids, self._p("embed"))
        fwd, bwd = self._directions()
        return ad.bilstm(x, fwd, bwd, mask=mask)

    def forward(self, ctx) -> Tensor:
        """Next-token distribution for each context window in ``ctx`` (``(B, L)`` or ``(L,)``)."""
        ids = np.asarray(ctx, dtype=np.int64)
        single = ids.ndim == 1
        ids = ids[None] if single else ids
        if ids.ndim != 2 or ids.shape[1] != self.cfg.context_len:
            raise DimensionError(
                f"context must have length {self.cfg.context_len}, got shape {np.shape(ctx)}")
        mask = self._mask(ids)
        ids, mask = _trim_leading_pad(ids, mask)
        h = self.hidden(ids, mask)
        pooled = ad.mean(h, axis=1) if mask is None else ad.masked_mean(h, mask, axis=-2)
        z = ad.softmax(ad.linear(pooled, self._p("out/W"), self._p("out/b")))
        return z[0] if single else z

    # frozen feature extraction ----------------------------------------------------

    def token_features(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Per-token states of whole packets, ``(N, L_pkt, hidden_dim)``; zero past ``true_len``."""
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.arange(ids.shape[1])[None, :] < np.asarray(lengths)[:, None]
        T = max(int(np.max(lengths, initial=1)), 1)
        out = np.zeros(ids.shape + (self.cfg.hidden_dim,), dtype=np.float32)
        if len(ids):
            out[:, :T] = self.hidden(ids[:, :T], mask[:, :T]).data
        return out

    def pooled_features(self, ids: np.ndarray, lengths: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Mean of the per-token states over each packet's real tokens, ``(N, hidden_dim)``."""
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths)
        out = np.zeros((len(ids), self.cfg.hidden_dim), dtype=np.float32)
        for s in range(0, len(ids), chunk):
            feats = self.token_features(ids[s:s + chunk], lengths[s:s + chunk])
            n = np.maximum(lengths[s:s + chunk], 1)[:, None]
            out[s:s + chunk] = feats.sum(axis=1) / n
        return out

    @property
    def feature_dim(self) -> int:
        return self.cfg.hidden_dim


def lm_extract_features(model: LanguageModel, tp: TokenizedPacket) -> Tensor:
    """Constant ``(L_pkt, hidden_dim)`` tensor; the language model stays frozen."""
    feats = model.token_features(tp.ids[None], np.array([tp.true_len]))
    return Tensor(feats[0])


class StaticEmbedding:
    """Frozen random per-token vectors standing in for a static word embedding."""

    def __init__(self, vocab_size: int, dim: int = 64, seed: int = 0, pad_id: int = PAD):
        rng = np.random.default_rng([seed, 0x57A7])
        self.table = rng.normal(0, 1 / np.sqrt(dim), (vocab_size, dim)).astype(np.float32)
        self.table[pad_id] = 0

    @property
    def feature_dim(self) -> int:
        return self.table.shape[1]

    def token_features(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.arange(ids.shape[1])[None, :] < np.asarray(lengths)[:, None]
        return self.table[ids] * mask[..., None]

    def pooled_features(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        n = np.maximum(np.asarray(lengths), 1)[:, None]
        return (self.token_features(ids, lengths).sum(axis=1) / n).astype(np.float32)


@dataclass
class FeatureScaler:
    """Per-dimension standardisation of pooled packet features.

    Pooled bi-LSTM states are small and strongly offset; downstream linear
    layers learn far faster on unit-scale inputs. The statistics come from
    the pretraining corpus and are frozen with the language model.
    """
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray, floor: float = 1e-6) -> "FeatureScaler":
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or len(f) == 0:
            raise DimensionError(f"need a non-empty (N, D) feature matrix, got shape {f.shape}")
        return cls(f.mean(axis=0).astype(np.float32), (f.std(axis=0) + floor).astype(np.float32))

    @classmethod
    def identity(cls, dim: int) -> "FeatureScaler":
        return cls(np.zeros(dim, dtype=np.float32), np.ones(dim, dtype=np.float32))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return ((np.asarray(features, dtype=np.float32) - self.mean) / self.scale).astype(np.float32)

    def arrays(self, prefix: str = "scaler/") -> dict[str, np.ndarray]:
        return {prefix + "mean": self.mean, prefix + "scale": self.scale}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "scaler/") -> "FeatureScaler":
        return cls(np.asarray(arrays[prefix + "mean"], np.float32), np.asarray(arrays[prefix + "scale"], np.float32))


def packet_features(extractor, ids: np.ndarray, lengths: np.ndarray, scaler: FeatureScaler | None) -> np.ndarray:
    """Pooled features of tokenised packets, standardised when a scaler is given."""
    f = extractor.pooled_features(ids, lengths)
    return f if scaler is None else scaler(f)


# samples ---------------------------------------------------------------------

def make_samples(docs: Sequence[np.ndarray], context_len: int, pad_id: int | None = PAD):
    """Sliding next-token samples ``(ctx (S, L), tgt (S,))`` confined to each document.

    With a pad id every position after the first is a target and short
    contexts are left-padded; without one only full windows are used.
    Padding tokens are never targets.
    """
    ctxs, tgts = [], []
    L = context_len
    for doc in docs:
        doc = np.asarray(doc, dtype=np.int64)
        if pad_id is not None:
            doc = doc[doc != pad_id] if (doc == pad_id).any() else doc
            if len(doc) < 2:
                continue
            padded = np.concatenate([np.full(L, pad_id, dtype=np.int64), doc])
            # target doc[t] for t >= 1; its context is padded[t : t + L]
            win = np.lib.stride_tricks.sliding_window_view(padded[:-1], L)[1:]
            ctxs.append(win)
            tgts.append(doc[1:])
        else:
            if len(doc) <= L:
                continue
            ctxs.append(np.lib.stride_tricks.sliding_window_view(doc[:-1], L))
            tgts.append(doc[L:])
    if not ctxs:
        return np.zeros((0, L), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(ctxs).copy(), np.concatenate(tgts)


def packet_docs(ids: np.ndarray, lengths: np.ndarray) -> list[np.ndarray]:
    return [row[:n] for row, n in zip(ids, lengths)]


# training and evaluation ---------------------------------------------------------

@dataclass
class LMTrainResult:
    model: LanguageModel
    losses: list[float]
    epoch_losses: list[float]


def lm_train(docs: Sequence[np.ndarray], cfg: LMConfig, max_batches: int | None = None) -> LMTrainResult:
    """Minimise mean next-token cross-entropy with AdamW over shuffled batches."""
    ctx, tgt = make_samples(docs, cfg.context_len, cfg.pad_id)
    if len(tgt) == 0:
        raise ConfigurationError("corpus yields no training samples")
    model = LanguageModel(cfg)
    opt = ad.AdamW(model.params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    losses, epoch_losses = [], []
    done = False
    for _ in range(cfg.epochs):
        order = rng.permutation(len(tgt))
        epoch = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            z = model.forward(ctx[idx])
            loss = ad.mean(ad.cross_entropy(z, tgt[idx]))
            loss.backward()
            opt.step()
            epoch.append(float(loss.data))
            if max_batches is not None and len(losses) + len(epoch) >= max_batches:
                done = True
                break
        losses += epoch
        epoch_losses.append(float(np.mean(epoch)))
        if done:
            break
    return LMTrainResult(model, losses, epoch_losses)


def target_probabilities(model: LanguageModel, docs: Sequence[np.ndarray], chunk: int = 256) -> np.ndarray:
    ctx, tgt = make_samples(docs, model.cfg.context_len, model.cfg.pad_id)
    if len(tgt) == 0:
        raise ConfigurationError("held-out stream yields no samples")
    probs = np.empty(len(tgt))
    for s in range(0, len(tgt), chunk):
        z = model.forward(ctx[s:s + chunk]).data
        probs[s:s + chunk] = z[np.arange(len(z)), tgt[s:s + chunk]]
    return probs


def perplexity_from_probs(p_target) -> float:
    """exp of the mean negative log-probability, clamping probabilities at 1e-12."""
    p = np.maximum(np.asarray(p_target, dtype=np.float64), 1e-12)
    return float(np.exp(-np.mean(np.log(p))))


def lm_perplexity(model: LanguageModel, docs: Sequence[np.ndarray]) -> float:
    return perplexity_from_probs(target_probabilities(model, docs))


def mean_cross_entropy(model: LanguageModel, docs: Sequence[np.ndarray]) -> float:
    p = np.maximum(target_probabilities(model, docs), 1e-12)
    return float(-np.mean(np.log(p)))
