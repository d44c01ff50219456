"""The pipeline stages as functions over an output directory.

Every stage writes into ``<out>/<stage>/<key>/`` where the key hashes all
configuration the stage depends on. A stage whose output already exists is
reused unless ``force`` is set, so repeated runs only recompute what changed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field


from .. import autodiff as ad
from ..data import (DatasetKind, LabeledDataset, SyntheticConfig, chronological_split, dataset_statistics,
                    generate_ood_stream, generate_synthetic_stream, load_stream, read_jsonl, tokenize_many,
                    write_jsonl)
from ..errors import ConfigurationError, DependencyError, DimensionError, KddtError
from ..evaluation import RunResult, emit_report, evaluate_run
from ..lm import FeatureScaler, LanguageModel, StaticEmbedding, lm_train, packet_docs
from ..twin import (DetectionResult, PacketArrays, Student, Variant, detect_stream, read_detections, train_dt,
                    write_detections)
from ..vae import Vae, vae_pretrain
from .config import ExperimentConfig
from .records import RunRecord, append_record

OUT_ENV = "KDDT_OUT"
RECORDS = "runs.jsonl"
SPLITS = ("ood", "id_train", "id_test")
DT_LOSS_COLUMNS = ("batch", "total", "l_kl", "l_mll", "l_dtm", "l_dtc_ce", "l_gt", "l_kd")


def resolve_out(out) -> str:
    """The output directory; the environment variable wins over the argument."""
    return os.environ.get(OUT_ENV) or os.fspath(out)


@dataclass
class StageOutput:
    stage: str
    directory: str
    cached: bool
    seconds: float
    files: dict[str, str] = field(default_factory=dict)
    info: dict = field(default_factory=dict)


def _dir(out, stage: str, key: str) -> str:
    return os.path.join(resolve_out(out), stage, key)


def _done(path: str) -> bool:
    return os.path.exists(os.path.join(path, "DONE"))


def _finish(path: str, meta: dict) -> None:
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    open(os.path.join(path, "DONE"), "w").close()


def _begin(path: str) -> None:
    os.makedirs(path, exist_ok=True)
    marker = os.path.join(path, "DONE")
    if os.path.exists(marker):
        os.remove(marker)


def _require(path: str, stage: str) -> None:
    if not _done(path):
        raise DependencyError(f"stage '{stage}' has not been run for this configuration (expected {path})")


def _write_losses(path: str, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def _record(cfg: ExperimentConfig, out, stage: StageOutput, metrics: dict | None = None) -> None:
    rec = RunRecord.create(cfg, stage=stage.stage, checkpoints=stage.files, metrics=metrics or {},
                           wall_clock_s={stage.stage: stage.seconds})
    append_record(os.path.join(resolve_out(out), RECORDS), rec)


# prepare -------------------------------------------------------------------------

def _synthetic(cfg: ExperimentConfig) -> dict[str, LabeledDataset]:
    d = cfg.data
    scfg = SyntheticConfig(n_packets=d.n_packets, anomaly_ratio=d.anomaly_ratio,
                           mean_incident_len=d.mean_incident_len,
                           mean_incident_duration_us=d.mean_incident_duration_us,
                           n_signals=d.n_signals, seed=cfg.seed)
    train, test = chronological_split(generate_synthetic_stream(scfg), d.train_ratio)
    return {"ood": generate_ood_stream(scfg, d.ood_packets), "id_train": train, "id_test": test}


def _from_files(cfg: ExperimentConfig) -> dict[str, LabeledDataset]:
    d = cfg.data
    for path in (d.ood_path, d.id_train_path, d.id_test_path):
        if not os.path.exists(path):
            raise ConfigurationError(f"input file not found: {path}")
    return {
        "ood": load_stream(d.ood_path, DatasetKind.OOD),
        "id_train": load_stream(d.id_train_path, DatasetKind.ID_TRAIN, d.id_train_windows or None),
        "id_test": load_stream(d.id_test_path, DatasetKind.ID_TEST, d.id_test_windows or None),
    }


def cmd_prepare(cfg: ExperimentConfig, out, force: bool = False, echo: bool = False) -> StageOutput:
    """Write ood.jsonl, id_train.jsonl, id_test.jsonl and statistics.json."""
    path = _dir(out, "data", cfg.stage_key("data"))
    files = {name: os.path.join(path, f"{name}.jsonl") for name in SPLITS}
    files["statistics"] = os.path.join(path, "statistics.json")
    if _done(path) and not force:
        with open(files["statistics"]) as fh:
            stats = json.load(fh)
        return StageOutput("prepare", path, True, 0.0, files, stats)
    t0 = time.perf_counter()
    _begin(path)
    streams = _synthetic(cfg) if cfg.data.source == "synthetic" else _from_files(cfg)
    stats = {}
    for name, ds in streams.items():
        write_jsonl(ds, files[name])
        stats[name] = dataset_statistics(ds)
    with open(files["statistics"], "w") as fh:
        json.dump(stats, fh, indent=1)
    _finish(path, {"config": cfg.to_ini()})
    result = StageOutput("prepare", path, False, time.perf_counter() - t0, files, stats)
    _record(cfg, out, result)
    if echo:
        print(format_statistics(stats))
    return result


def format_statistics(stats: dict) -> str:
    cols = ("N", "N_NP", "N_AP", "N_AI", "L_AI", "T_AI")
    lines = ["split      " + " ".join(f"{c:>9}" for c in cols)]
    for name, row in stats.items():
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append(f"{'-':>9}" if v is None else f"{v:>9.2f}" if isinstance(v, float) else f"{v:>9}")
        lines.append(f"{name:<10} " + " ".join(cells))
    return "\n".join(lines)


def load_prepared(cfg: ExperimentConfig, out) -> dict[str, LabeledDataset]:
    path = _dir(out, "data", cfg.stage_key("data"))
    _require(path, "prepare")
    kinds = {"ood": DatasetKind.OOD, "id_train": DatasetKind.ID_TRAIN, "id_test": DatasetKind.ID_TEST}
    return {name: read_jsonl(os.path.join(path, f"{name}.jsonl"), kinds[name]) for name in SPLITS}


def _tokens(ds: LabeledDataset, cfg: ExperimentConfig):
    return tokenize_many(ds.payloads, cfg.data.packet_len)


# language model ---------------------------------------------------------------------

def cmd_pretrain_lm(cfg: ExperimentConfig, out, force: bool = False) -> StageOutput:
    path = _dir(out, "lm", cfg.stage_key("lm"))
    files = {"checkpoint": os.path.join(path, "lm.ckpt"), "losses": os.path.join(path, "loss.csv")}
    if _done(path) and not force:
        return StageOutput("pretrain-lm", path, True, 0.0, files)
    ood = load_prepared(cfg, out)["ood"]
    t0 = time.perf_counter()
    _begin(path)
    ids, lengths = _tokens(ood, cfg)
    res = lm_train(packet_docs(ids, lengths), cfg.lm_config())
    scaler = FeatureScaler.fit(res.model.pooled_features(ids, lengths))
    ad.write_checkpoint({**res.model.params.arrays(), **scaler.arrays()}, files["checkpoint"])
    _write_losses(files["losses"], res.losses)
    _finish(path, {"config": cfg.to_ini(), "batches": len(res.losses)})
    result = StageOutput("pretrain-lm", path, False, time.perf_counter() - t0, files,
                         {"batches": len(res.losses), "final_epoch_loss": res.epoch_losses[-1]})
    _record(cfg, out, result)
    return result


def load_lm(cfg: ExperimentConfig, out) -> tuple[LanguageModel, FeatureScaler]:
    path = _dir(out, "lm", cfg.stage_key("lm"))
    _require(path, "pretrain-lm")
    arrays = ad.read_checkpoint(os.path.join(path, "lm.ckpt"))
    params = ad.ParameterStore({k: v for k, v in arrays.items() if k.startswith("lm/")})
    return LanguageModel(cfg.lm_config(), params), FeatureScaler.from_arrays(arrays)


def lm_features(ds: LabeledDataset, cfg: ExperimentConfig, lm: LanguageModel, scaler: FeatureScaler):
    """Standardised pooled features plus the token ids they came from."""
    ids, lengths = _tokens(ds, cfg)
    return scaler(lm.pooled_features(ids, lengths)), ids, lengths


# teacher ------------------------------------------------------------------------------

def cmd_pretrain_vae(cfg: ExperimentConfig, out, force: bool = False) -> StageOutput:
    path = _dir(out, "vae", cfg.stage_key("vae"))
    files = {"checkpoint": os.path.join(path, "vae.ckpt"), "losses": os.path.join(path, "loss.csv")}
    if _done(path) and not force:
        return StageOutput("pretrain-vae", path, True, 0.0, files)
    lm, scaler = load_lm(cfg, out)
    ood = load_prepared(cfg, out)["ood"]
    t0 = time.perf_counter()
    _begin(path)
    feats, ids, lengths = lm_features(ood, cfg, lm, scaler)
    res = vae_pretrain(feats, ids, lengths, cfg.vae_config())
    ad.write_checkpoint(res.model.params, files["checkpoint"])
    _write_losses(files["losses"], res.losses)
    _finish(path, {"config": cfg.to_ini(), "batches": len(res.losses)})
    result = StageOutput("pretrain-vae", path, False, time.perf_counter() - t0, files,
                         {"batches": len(res.losses), "final_epoch_loss": res.epoch_losses[-1]})
    _record(cfg, out, result)
    return result


def load_vae(cfg: ExperimentConfig, out) -> Vae:
    path = _dir(out, "vae", cfg.stage_key("vae"))
    _require(path, "pretrain-vae")
    return Vae(cfg.vae_config(), ad.ParameterStore(ad.read_checkpoint(os.path.join(path, "vae.ckpt"))))


# student ------------------------------------------------------------------------------

class _Features:
    """Feature extraction for one configuration: the language model or, for the
    static-embedding variant, a frozen random table."""

    def __init__(self, cfg: ExperimentConfig, out):
        self.cfg = cfg
        self.lm, self.lm_scaler = load_lm(cfg, out)
        self.static = None
        if cfg.variant is Variant.STATIC_EMBED:
            self.static = StaticEmbedding(self.lm.cfg.vocab_size, cfg.lm.hidden_dim, seed=cfg.seed)
            ood = load_prepared(cfg, out)["ood"]
            ids, lengths = _tokens(ood, cfg)
            self.static_scaler = FeatureScaler.fit(self.static.pooled_features(ids, lengths))

    def student_inputs(self, ds: LabeledDataset):
        """Student features, ids, lengths and the teacher-side LM features."""
        lm_f, ids, lengths = lm_features(ds, self.cfg, self.lm, self.lm_scaler)
        if self.static is None:
            return lm_f, ids, lengths, lm_f
        return self.static_scaler(self.static.pooled_features(ids, lengths)), ids, lengths, lm_f


def _dt_paths(cfg: ExperimentConfig, out) -> tuple[str, dict]:
    path = _dir(out, "dt", cfg.stage_key("dt"))
    return path, {"checkpoint": os.path.join(path, "student.ckpt"), "losses": os.path.join(path, "loss.csv")}


def cmd_train_dt(cfg: ExperimentConfig, out, force: bool = False) -> StageOutput:
    path, files = _dt_paths(cfg, out)
    if _done(path) and not force:
        return StageOutput("train-dt", path, True, 0.0, files)
    train = load_prepared(cfg, out)["id_train"]
    feats = _Features(cfg, out)
    teacher = load_vae(cfg, out) if cfg.variant.uses_kd else None
    t0 = time.perf_counter()
    _begin(path)
    f, ids, lengths, lm_f = feats.student_inputs(train)
    targets = None if teacher is None else teacher.teacher_targets(lm_f)
    data = PacketArrays(f, ids, lengths, train.labels, train.timestamps, targets)
    res = train_dt(data, cfg.dtm_config())
    ad.write_checkpoint(res.student.params, files["checkpoint"])
    with open(files["losses"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DT_LOSS_COLUMNS)
        for i, b in enumerate(res.breakdowns):
            w.writerow([i] + [repr(float(b[c])) for c in DT_LOSS_COLUMNS[1:]])
    _finish(path, {"config": cfg.to_ini(), "batches": len(res.losses)})
    result = StageOutput("train-dt", path, False, time.perf_counter() - t0, files,
                         {"batches": len(res.losses), "first_epoch_loss": res.epoch_losses[0],
                          "final_epoch_loss": res.epoch_losses[-1]})
    _record(cfg, out, result)
    return result


def load_student(cfg: ExperimentConfig, out) -> Student:
    path, files = _dt_paths(cfg, out)
    _require(path, "train-dt")
    return Student(cfg.dtm_config(), ad.ParameterStore(ad.read_checkpoint(files["checkpoint"])))


# detection and evaluation -------------------------------------------------------------

def _stream_tag(stream) -> str:
    if stream is None:
        return "id_test"
    with open(stream, "rb") as fh:
        return "stream-" + hashlib.sha256(fh.read()).hexdigest()[:12]


def cmd_detect(cfg: ExperimentConfig, out, stream=None, force: bool = False) -> StageOutput:
    """Label a stream (the prepared test split by default) and write the detection CSV."""
    student = load_student(cfg, out)
    path = _dir(out, "detect", cfg.stage_key("dt"))
    tag = _stream_tag(stream)
    files = {"detections": os.path.join(path, f"{tag}.csv")}
    if os.path.exists(files["detections"]) and not force:
        return StageOutput("detect", path, True, 0.0, files)
    ds = load_prepared(cfg, out)["id_test"] if stream is None else load_stream(stream, DatasetKind.OOD)
    t0 = time.perf_counter()
    os.makedirs(path, exist_ok=True)
    f, _, _, _ = _Features(cfg, out).student_inputs(ds)
    det: DetectionResult = detect_stream(student, f)
    write_detections(files["detections"], det.labels, det.scores, ds.timestamps)
    result = StageOutput("detect", path, False, time.perf_counter() - t0, files, {"packets": len(ds)})
    _record(cfg, out, result)
    return result


def run_id(cfg: ExperimentConfig) -> str:
    return f"{cfg.run.variant}-seed{cfg.seed}"


def cmd_evaluate(cfg: ExperimentConfig, out, echo: bool = False) -> tuple[StageOutput, RunResult]:
    """Score the test-split detections against the labels and write the three metric CSVs."""
    det_path = os.path.join(_dir(out, "detect", cfg.stage_key("dt")), "id_test.csv")
    if not os.path.exists(det_path):
        raise DependencyError(f"stage 'detect' has not been run for this configuration (expected {det_path})")
    test = load_prepared(cfg, out)["id_test"]
    _, labels, _ = read_detections(det_path)
    if len(labels) != len(test):
        raise DimensionError(f"{len(labels)} detections for a test split of {len(test)} packets")
    t0 = time.perf_counter()
    result = evaluate_run(run_id(cfg), cfg.seed, cfg.run.variant, labels, test.labels, test.timestamps)
    path = _dir(out, "evaluate", cfg.stage_key("dt"))
    files = emit_report([result], path, echo=echo)
    stage = StageOutput("evaluate", path, False, time.perf_counter() - t0, files)
    _record(cfg, out, stage, metrics=result_metrics(result))
    return stage, result


def result_metrics(r: RunResult) -> dict:
    m = {"precision": r.packet.precision, "recall": r.packet.recall, "f1": r.packet.f1}
    if r.incidents is not None:
        m.update(C_I=r.incidents.c_i, mean_C_PI=r.incidents.mean_c_pi, mean_DTR_I=r.incidents.mean_dtr_i,
                 RMSE_L=r.incidents.rmse_l)
    return m


def run_pipeline(cfg: ExperimentConfig, out, force: bool = False) -> RunResult:
    """Every stage a configuration needs, reusing cached outputs."""
    cmd_prepare(cfg, out, force)
    cmd_pretrain_lm(cfg, out, force)
    if cfg.variant.uses_kd:
        cmd_pretrain_vae(cfg, out, force)
    cmd_train_dt(cfg, out, force)
    cmd_detect(cfg, out, force=force)
    return cmd_evaluate(cfg, out)[1]


def cmd_ablate(cfg: ExperimentConfig, out, variants=("full", "no_dtm", "no_kd"), repeats: int = 10,
               force: bool = False, echo: bool = False) -> tuple[dict[str, str], list[RunResult]]:
    """Run each variant for seeds ``seed .. seed + repeats - 1`` and compare them against full."""
    if repeats < 3:
        raise ConfigurationError(f"ablation needs at least 3 repeats, got {repeats}")
    variants = [Variant(v).value for v in variants]
    results = []
    for variant in variants:
        for k in range(repeats):
            run_cfg = cfg.with_run(seed=cfg.seed + k, variant=variant)
            try:
                results.append(run_pipeline(run_cfg, out, force))
            except Exception as e:
                raise KddtError(f"run variant={variant} seed={run_cfg.seed} failed: {e}") from e
    tag = hashlib.sha256(f"{cfg.hash()}|{','.join(variants)}|{repeats}".encode()).hexdigest()[:16]
    files = emit_report(results, _dir(out, "ablate", tag), echo=echo)
    return files, results
