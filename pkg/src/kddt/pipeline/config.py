"""Experiment configuration stored as a flat INI file with one section per stage."""
from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field, fields, replace, asdict

from ..errors import ConfigurationError
from ..lm import LMConfig
from ..twin import DtmConfig, Variant
from ..vae import VaeConfig


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    variant: str = "full"


@dataclass(frozen=True)
class DataSection:
    # "synthetic" generates traffic; "files" reads the three paths below
    source: str = "synthetic"
    ood_path: str = ""
    id_train_path: str = ""
    id_test_path: str = ""
    # anomaly-window sidecars, needed for labelled PCAP inputs
    id_train_windows: str = ""
    id_test_windows: str = ""
    n_packets: int = 20000
    anomaly_ratio: float = 0.05
    mean_incident_len: float = 20.0
    mean_incident_duration_us: float = 20000.0
    n_signals: int = 8
    ood_packets: int = 800
    train_ratio: float = 0.8
    packet_len: int = 64


@dataclass(frozen=True)
class OptimSection:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch_size: int = 12


@dataclass(frozen=True)
class LmSection:
    embed_dim: int = 64
    hidden_dim: int = 64
    context_len: int = 32
    epochs: int = 3


@dataclass(frozen=True)
class VaeSection:
    latent_dim: int = 32
    dec_dim: int = 32
    conv_channels: int = 6
    kernel_size: int = 3
    epochs: int = 5


@dataclass(frozen=True)
class DtSection:
    latent_dim: int = 16
    dec_dim: int = 16
    conv_channels: int = 6
    kernel_size: int = 3
    window: int = 16
    epochs: int = 25


SECTIONS = {"run": RunSection, "data": DataSection, "optim": OptimSection,
            "lm": LmSection, "vae": VaeSection, "dt": DtSection}


def _parse(kind, raw: str, where: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None
    return raw


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    optim: OptimSection = field(default_factory=OptimSection)
    lm: LmSection = field(default_factory=LmSection)
    vae: VaeSection = field(default_factory=VaeSection)
    dt: DtSection = field(default_factory=DtSection)

    def __post_init__(self):
        try:
            Variant(self.run.variant)
        except ValueError:
            raise ConfigurationError(
                f"unknown variant {self.run.variant!r}; expected one of {[v.value for v in Variant]}") from None
        if self.data.source not in ("synthetic", "files"):
            raise ConfigurationError(f"data.source must be 'synthetic' or 'files', got {self.data.source!r}")
        if self.data.source == "files":
            for name in ("ood_path", "id_train_path", "id_test_path"):
                if not getattr(self.data, name):
                    raise ConfigurationError(f"data.source = files needs data.{name}")
        if not 0 < self.data.train_ratio < 1:
            raise ConfigurationError("data.train_ratio must lie in (0, 1)")
        # builds the stage configs once so their own checks run early
        self.lm_config(), self.vae_config(), self.dtm_config()

    # serialisation ---------------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: repr(v) if isinstance(v := getattr(section, f.name), float) else str(v)
                        for f in fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigurationError(f"malformed config: {e}") from None
        parts = {}
        for name in cp.sections():
            if name not in SECTIONS:
                raise ConfigurationError(f"unknown section [{name}]")
            kind = SECTIONS[name]
            types = {f.name: f.type for f in fields(kind)}
            values = {}
            for key, raw in cp[name].items():
                if key not in types:
                    raise ConfigurationError(f"unknown key {name}.{key}")
                default = getattr(kind(), key)
                values[key] = _parse(type(default), raw.strip(), f"{name}.{key}")
            parts[name] = kind(**values)
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_ini(fh.read())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ini())

    def hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    def with_run(self, **changes) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, **changes))

    # stage views -----------------------------------------------------------------

    @property
    def variant(self) -> Variant:
        return Variant(self.run.variant)

    @property
    def seed(self) -> int:
        return self.run.seed

    def _common(self) -> dict:
        o = self.optim
        return dict(lr=o.lr, betas=(o.beta1, o.beta2), weight_decay=o.weight_decay, batch_size=o.batch_size,
                    seed=self.run.seed)

    def lm_config(self) -> LMConfig:
        s = self.lm
        return LMConfig(embed_dim=s.embed_dim, hidden_dim=s.hidden_dim, context_len=s.context_len,
                        epochs=s.epochs, **self._common())

    def vae_config(self) -> VaeConfig:
        s = self.vae
        return VaeConfig(latent_dim=s.latent_dim, dec_dim=s.dec_dim, conv_channels=s.conv_channels,
                         kernel_size=s.kernel_size, feature_dim=self.lm.hidden_dim,
                         packet_len=self.data.packet_len, epochs=s.epochs, **self._common())

    def dtm_config(self) -> DtmConfig:
        s = self.dt
        return DtmConfig(latent_dim=s.latent_dim, dec_dim=s.dec_dim, teacher_dim=self.vae.latent_dim,
                         window=s.window, conv_channels=s.conv_channels, kernel_size=s.kernel_size,
                         feature_dim=self.lm.hidden_dim, packet_len=self.data.packet_len, epochs=s.epochs,
                         variant=self.variant, **self._common())

    def stage_key(self, stage: str) -> str:
        """Short hash of everything a stage's output depends on, upstream stages included."""
        parts = {"seed": self.run.seed, "data": asdict(self.data)}
        if stage != "data":
            parts["optim"] = asdict(self.optim)
            parts["lm"] = asdict(self.lm)
        if stage in ("vae", "dt"):
            parts["vae"] = asdict(self.vae)
        if stage == "dt":
            parts["dt"] = asdict(self.dt)
            parts["variant"] = self.run.variant
            if not self.variant.uses_kd:
                parts.pop("vae")
        if stage not in ("data", "lm", "vae", "dt"):
            raise ConfigurationError(f"unknown stage {stage!r}")
        blob = json.dumps(parts, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]
