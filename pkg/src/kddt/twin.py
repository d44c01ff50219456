"""Digital-twin student: a stateful next-packet model plus a packet classifier.

For each index ``i >= 1`` the model encodes packet ``i-1`` into a small
Gaussian latent, advances an LSTM by one step and decodes a distribution over
packet ``i``. The classifier looks at packet ``i`` together with the LSTM
output and predicts normal or abnormal. During training the student latent is
also pulled towards the frozen teacher's latent of packet ``i-1`` through a
learned projection and a cosine loss.

Training runs several contiguous stretches of the stream side by side, each
cut into windows of ``window`` packets; the LSTM state crosses window edges
but gradients do not.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor, uniform_init, zeros
from .data.vocab import DEFAULT_PACKET_LEN
from .errors import ConfigurationError, DimensionError, ValidationError
from .vae import ConvDecoder, GaussianEncoder, VaeEncoding, reconstruction_nll


class Variant(str, Enum):
    FULL = "full"
    NO_KD = "no_kd"
    NO_DTM = "no_dtm"
    STATIC_EMBED = "static_embed"

    @property
    def uses_dtm(self) -> bool:
        return self is not Variant.NO_DTM

    @property
    def uses_kd(self) -> bool:
        return self in (Variant.FULL, Variant.STATIC_EMBED)


@dataclass(frozen=True)
class DtmConfig:
    latent_dim: int = 16
    dec_dim: int = 16
    teacher_dim: int = 32
    window: int = 16
    conv_channels: int = 6
    kernel_size: int = 3
    feature_dim: int = 64
    vocab_size: int = 260
    packet_len: int = DEFAULT_PACKET_LEN
    lr: float = 1e-3
    batch_size: int = 12  # parallel stretches of the stream
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 25
    variant: Variant = Variant.FULL
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.latent_dim >= self.teacher_dim:
            raise ConfigurationError("student latent must be smaller than the teacher latent")
        for name in ("latent_dim", "dec_dim", "window", "conv_channels", "feature_dim", "vocab_size",
                     "packet_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class DtmStepOutput:
    encoding: VaeEncoding
    h_in: Tensor  # student latent of the previous packet
    h_out: Tensor  # LSTM output for the current index
    x_hat_next: Tensor | None
    state: tuple[np.ndarray, np.ndarray]


@dataclass
class DtcForward:
    h_dtc: Tensor
    o_dtc: Tensor
    z_dtc: Tensor

    @property
    def label(self) -> np.ndarray:
        return np.argmax(self.z_dtc.data, axis=-1)

    @property
    def score(self) -> np.ndarray:
        return self.z_dtc.data[..., 1]


@dataclass
class DtLossBreakdown:
    l_kl: Tensor
    l_mll: Tensor
    l_dtm: Tensor
    l_dtc_ce: Tensor
    l_gt: Tensor
    l_kd: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in
                ("l_kl", "l_mll", "l_dtm", "l_dtc_ce", "l_gt", "l_kd", "total")}


def _zero() -> Tensor:
    return Tensor(np.float32(0.0))


class Student:
    """DTM, DTC and the distillation projection, sharing one parameter store."""

    def __init__(self, cfg: DtmConfig, params: ParameterStore | None = None):
        self.cfg = cfg
        if params is None:
            params = init_student_params(cfg, np.random.default_rng([cfg.seed, 3]))
        self.params = params
        self.encoder = GaussianEncoder(params, "dtm/enc/")
        self.decoder = ConvDecoder(params, "dtm/dec/", cfg.packet_len)

    @property
    def variant(self) -> Variant:
        return self.cfg.variant

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # DTM ---------------------------------------------------------------------------

    def dtm(self, prev_features, epsilon, state=None, n_positions: int | None = None,
            decode: bool = True) -> DtmStepOutput:
        """Encoder -> LSTM -> decoder over a run of steps.

        ``prev_features`` is ``(B, W, F)``; returns outputs with leading ``(B, W)``.
        """
        enc = self.encoder(prev_features, epsilon)
        h0, c0 = (None, None) if state is None else state
        h_seq, h_last, c_last = ad.lstm(enc.h, self._p("dtm/lstm/w_ih"), self._p("dtm/lstm/w_hh"),
                                        self._p("dtm/lstm/b"), h0, c0)
        x_hat = self.decoder(h_seq, n_positions).x_hat if decode else None
        return DtmStepOutput(enc, enc.h, h_seq, x_hat, (h_last.data, c_last.data))

    # DTC ---------------------------------------------------------------------------

    def dtc(self, features, h_out) -> DtcForward:
        """Classify packets from their features and the matching DTM outputs (leading dims shared)."""
        features = ad.as_tensor(features)
        lead = features.shape[:-1]
        h_dtc = ad.linear(features, self._p("dtc/in/W"), self._p("dtc/in/b"))
        if h_out is None:
            h_out = Tensor(np.zeros(lead + (self.cfg.latent_dim,), dtype=h_dtc.dtype))
        h_out = ad.as_tensor(h_out)
        if h_out.shape != h_dtc.shape:
            raise DimensionError(f"h_dtmE_out: expected shape {h_dtc.shape}, got {h_out.shape}")
        joined = ad.concat([h_out, h_dtc], axis=-1)
        seq = ad.reshape(joined, (-1, 1, joined.shape[-1]))
        act = ad.sigmoid(ad.conv1d(seq, self._p("dtc/conv/K"), self._p("dtc/conv/b")))
        pooled = ad.maxpool1d(act, window=2, stride=2)
        flat = ad.reshape(pooled, (pooled.shape[0], -1))
        o = ad.linear(flat, self._p("dtc/out/W"), self._p("dtc/out/b"))
        o = ad.reshape(o, lead + (2,))
        return DtcForward(h_dtc, o, ad.softmax(o))

    def project(self, h_in: Tensor) -> Tensor:
        return ad.linear(h_in, self._p("kdproj/W"))


def init_student_params(cfg: DtmConfig, rng: np.random.Generator) -> ParameterStore:
    store = ParameterStore()
    d, H = cfg.latent_dim, cfg.latent_dim
    if cfg.variant.uses_dtm:
        GaussianEncoder.init(store, "dtm/enc/", rng, cfg.feature_dim, d)
        store.add("dtm/lstm/w_ih", uniform_init(rng, (4 * H, d), H))
        store.add("dtm/lstm/w_hh", uniform_init(rng, (4 * H, H), H))
        store.add("dtm/lstm/b", zeros((4 * H,)))
        ConvDecoder.init(store, "dtm/dec/", rng, H, cfg.dec_dim, cfg.packet_len, cfg.conv_channels,
                         cfg.kernel_size, cfg.vocab_size)
    store.add("dtc/in/W", uniform_init(rng, (H, cfg.feature_dim), cfg.feature_dim))
    store.add("dtc/in/b", zeros((H,)))
    store.add("dtc/conv/K", uniform_init(rng, (cfg.conv_channels, 1, cfg.kernel_size), cfg.kernel_size))
    store.add("dtc/conv/b", zeros((cfg.conv_channels,)))
    flat = cfg.conv_channels * ((2 * H) // 2)
    store.add("dtc/out/W", uniform_init(rng, (2, flat), flat))
    store.add("dtc/out/b", zeros((2,)))
    if cfg.variant.uses_kd:
        store.add("kdproj/W", uniform_init(rng, (cfg.teacher_dim, d), d))
    return store


# single-step views -----------------------------------------------------------------

def dtm_step(prev_features, state, student: Student, epsilon=None) -> DtmStepOutput:
    """One DTM step for one packet: previous-packet features ``(F,)`` and ``(h, c)`` state."""
    f = np.asarray(prev_features, dtype=np.float32)[None, None]
    eps = None if epsilon is None else np.asarray(epsilon, dtype=np.float32)[None, None]
    out = student.dtm(f, eps, state=None if state is None else (np.atleast_2d(state[0]), np.atleast_2d(state[1])))
    enc = out.encoding
    squeeze = lambda t: t[0, 0]
    return DtmStepOutput(VaeEncoding(squeeze(enc.mu), squeeze(enc.sigma), enc.epsilon[0, 0], squeeze(enc.h)),
                         squeeze(out.h_in), squeeze(out.h_out), squeeze(out.x_hat_next),
                         (out.state[0][0], out.state[1][0]))


def dtc_classify(features, h_out, student: Student) -> DtcForward:
    return student.dtc(features, h_out)


def kd_loss(h_in, teacher_h, proj: Tensor) -> Tensor:
    """1 - cos(proj . h_in, teacher_h); the teacher side is a constant."""
    projected = ad.linear(ad.as_tensor(h_in), proj)
    target = Tensor(np.asarray(teacher_h.data if isinstance(teacher_h, Tensor) else teacher_h,
                               dtype=projected.dtype))
    return 1.0 - ad.cosine_similarity(projected, target)


def dt_total_loss(step: DtmStepOutput | None, dtc: DtcForward, next_ids, next_lengths, labels,
                  kd: Tensor | None = None) -> DtLossBreakdown:
    """Batch means of each component, composed so that the identities hold exactly.

    ``step`` is ``None`` when the DTM is switched off; ``kd`` is ``None``
    when distillation is.
    """
    ce = ad.mean(ad.cross_entropy(dtc.z_dtc, np.asarray(labels)))
    if step is None:
        l_kl = l_mll = _zero()
    else:
        l_kl = ad.mean(ad.gaussian_kl(step.encoding.mu, step.encoding.sigma))
        l_mll = ad.mean(reconstruction_nll(step.x_hat_next, next_ids, next_lengths))
    l_kd = _zero() if kd is None else ad.mean(kd)
    l_dtm = l_kl + l_mll
    l_gt = l_dtm + ce
    return DtLossBreakdown(l_kl, l_mll, l_dtm, ce, l_gt, l_kd, l_gt + l_kd)


# data bundle -------------------------------------------------------------------------

@dataclass
class PacketArrays:
    """Per-packet model inputs precomputed from a stream."""

    features: np.ndarray  # (N, F) pooled frozen features
    ids: np.ndarray  # (N, L_pkt)
    lengths: np.ndarray  # (N,)
    labels: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    teacher: np.ndarray | None = None  # (N, teacher_dim) noise-free teacher latents

    def __len__(self) -> int:
        return len(self.features)

    def slice(self, start: int, stop: int) -> "PacketArrays":
        cut = lambda a: None if a is None else a[start:stop]
        return PacketArrays(self.features[start:stop], self.ids[start:stop], self.lengths[start:stop],
                            cut(self.labels), cut(self.timestamps), cut(self.teacher))


def window_loss(student: Student, data: PacketArrays, idx: np.ndarray, state, rng) -> tuple[DtLossBreakdown, tuple]:
    """Losses over a ``(streams, steps)`` grid of current-packet indices ``idx`` (all >= 1)."""
    cfg = student.cfg
    prev = idx - 1
    step = kd = h_out = None
    new_state = state
    if cfg.variant.uses_dtm:
        eps = rng.standard_normal(idx.shape + (cfg.latent_dim,)).astype(np.float32)
        T = int(data.lengths[idx].max())
        step = student.dtm(data.features[prev], eps, state, n_positions=T)
        new_state, h_out = step.state, step.h_out
        if cfg.variant.uses_kd:
            kd = kd_loss(step.h_in, data.teacher[prev], student.params["kdproj/W"])
    dtc = student.dtc(data.features[idx], h_out)
    loss = dt_total_loss(step, dtc, data.ids[idx], data.lengths[idx], data.labels[idx], kd)
    return loss, new_state


@dataclass
class DtTrainResult:
    student: Student
    losses: list[float]
    breakdowns: list[dict[str, float]] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def stream_grid(n: int, streams: int) -> np.ndarray:
    """Split indices ``1 .. n-1`` into ``streams`` equal contiguous stretches, ``(streams, length)``.

    Up to ``streams - 1`` trailing packets are left out so that every stretch
    has the same length.
    """
    length = (n - 1) // streams
    if length < 1:
        raise ConfigurationError(f"{n} packets cannot fill {streams} training streams")
    return 1 + np.arange(streams * length).reshape(streams, length)


def train_dt(data: PacketArrays, cfg: DtmConfig, max_batches: int | None = None) -> DtTrainResult:
    """Train the student on a labelled stream with truncated backpropagation through time."""
    if data.labels is None:
        raise ValidationError("digital-twin training needs a labelled stream")
    if cfg.variant.uses_kd and data.teacher is None:
        raise ConfigurationError(f"variant {cfg.variant.value} needs teacher latents")
    if data.features.shape[1] != cfg.feature_dim:
        raise DimensionError(f"features have width {data.features.shape[1]}, config expects {cfg.feature_dim}")
    student = Student(cfg)
    opt = ad.AdamW(student.params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 4])
    grid = stream_grid(len(data), cfg.batch_size)
    result = DtTrainResult(student, [])
    for _ in range(cfg.epochs):
        state = None
        epoch = []
        for s in range(0, grid.shape[1], cfg.window):
            loss, state = window_loss(student, data, grid[:, s:s + cfg.window], state, rng)
            loss.total.backward()
            opt.step()
            epoch.append(float(loss.total.data))
            result.breakdowns.append(loss.values())
            if max_batches is not None and len(result.losses) + len(epoch) >= max_batches:
                break
        result.losses += epoch
        result.epoch_losses.append(float(np.mean(epoch)))
        if max_batches is not None and len(result.losses) >= max_batches:
            break
    return result


# detection ---------------------------------------------------------------------------

@dataclass
class DetectionState:
    """What a detector must remember between calls: LSTM state and the last packet's features."""

    h: np.ndarray | None = None
    c: np.ndarray | None = None
    prev_features: np.ndarray | None = None


@dataclass
class DetectionResult:
    labels: np.ndarray
    scores: np.ndarray
    state: DetectionState


def detect_stream(student: Student, features: np.ndarray, state: DetectionState | None = None,
                  chunk: int = 512) -> DetectionResult:
    """Label every packet in stream order with noise-free latents.

    The first packet of a fresh stream is paired with a zero previous-packet
    latent. Passing the returned state into the next call continues the
    stream seamlessly.
    """
    features = np.asarray(features, dtype=np.float32)
    state = state or DetectionState()
    cfg = student.cfg
    n = len(features)
    labels = np.zeros(n, dtype=np.int64)
    scores = np.zeros(n, dtype=np.float64)
    h, c, prev_f = state.h, state.c, state.prev_features
    for s in range(0, n, chunk):
        cur = features[s:s + chunk]
        h_out = None
        if cfg.variant.uses_dtm:
            if prev_f is None:
                latents = np.zeros((len(cur), cfg.latent_dim), dtype=np.float32)
                if len(cur) > 1:
                    latents[1:] = student.encoder(cur[:-1]).h.data
            else:
                latents = student.encoder(np.concatenate([prev_f[None], cur[:-1]])).h.data
            h_seq, h_last, c_last = ad.lstm(latents[None], student.params["dtm/lstm/w_ih"],
                                            student.params["dtm/lstm/w_hh"], student.params["dtm/lstm/b"],
                                            None if h is None else h[None], None if c is None else c[None])
            h_out = h_seq.data[0]
            h, c = h_last.data[0], c_last.data[0]
        z = student.dtc(cur, h_out).z_dtc.data
        labels[s:s + len(cur)] = np.argmax(z, axis=-1)
        scores[s:s + len(cur)] = z[:, 1]
        prev_f = cur[-1]
    return DetectionResult(labels, scores, DetectionState(h, c, prev_f))


def write_detections(path, labels, scores, timestamps=None) -> None:
    """CSV with columns index, ts_us, label, score (six decimals)."""
    n = len(labels)
    ts = np.arange(n) if timestamps is None else np.asarray(timestamps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "ts_us", "label", "score"])
        for i in range(n):
            w.writerow([i, int(ts[i]), int(labels[i]), f"{float(scores[i]):.6f}"])


def read_detections(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(open(path, newline="")))
    ts = np.array([int(r["ts_us"]) for r in rows], dtype=np.int64)
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    scores = np.array([float(r["score"]) for r in rows])
    return ts, labels, scores
