"""Configuration, staged execution with caching, run records and the command dispatcher."""
from .config import ExperimentConfig
from .records import RunRecord, append_record, read_records
from .stages import (cmd_prepare, cmd_pretrain_lm, cmd_pretrain_vae, cmd_train_dt, cmd_detect, cmd_evaluate,
                     cmd_ablate, run_pipeline, load_lm, load_vae, load_student, load_prepared, resolve_out)
