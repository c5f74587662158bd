"""Configuration for the laboratory: constants, env overrides and run-config loading."""

from __future__ import annotations

import dataclasses
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from rpq_lab.config_models import (
    MaskPolicy,
    PredictorConfig,
    ProbeConfig,
    QuantizerConfig,
    TrainConfig,
)
from rpq_lab.errors import ConfigError

logger = logging.getLogger(__name__)

# Audio front end
SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
N_MELS = 80
MEL_FMAX = 8000.0
LOG_FLOOR = 1e-10
MEL_DUMP_MAGIC = b"MEL80\0\0\0"

# PRNG lane bank width; changing it changes every stream
PRNG_LANES = 4096

# Checkpoints
CHECKPOINT_MAGIC = b"BRQ1"
CHECKPOINT_DIR_NAME = "checkpoints"
QUANTIZER_FILE_NAME = "quantizer.brq"

# Output files under --out
OUTPUT_DIR = Path(os.environ.get("RPQ_OUTPUT_DIR", "./runs"))
METRICS_FILE = "metrics.csv"
SWEEP_FILE = "sweep.csv"
PROBE_FILE = "probe.csv"
TARGETS_FILE = "targets.txt"
MASK_STATS_FILE = "mask_stats.csv"
GRAD_CHECK_FILE = "grad_check.json"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.jsonl"
LABELS_FILE = "labels.csv"

# Fixed CSV schemas (column order is part of the contract)
METRICS_HEADER = [
    "step", "lr", "loss", "masked_acc", "util_entropy", "ms_per_step", "skipped_batches",
]
MASK_STATS_HEADER = [
    "start_prob", "span", "analytic_coverage", "empirical_coverage", "n_frames",
]
PROBE_HEADER = ["checkpoint", "seed", "train_acc", "test_acc", "w_h1", "w_h2"]
SWEEP_HEADER = [
    "start_prob", "codebook_size", "status",
    "masked_acc_mean", "masked_acc_std",
    "loss_mean", "loss_std",
    "probe_acc_mean", "probe_acc_std",
    "util_entropy_mean", "util_entropy_std",
    "n_seeds", "error",
]

# Ablation defaults
REPORT_START_PROBS = [0.01, 0.05, 0.10, 0.12]
REPORT_CODEBOOK_SIZES = [1024, 8192]
TREND_START_PROBS = [0.01, 0.10]
TREND_CODEBOOK_SIZES = [64]
ABLATION_SEEDS = 3
ABLATION_STEPS = int(os.environ.get("RPQ_ABLATION_STEPS", "60"))

# Synthetic corpus defaults
CORPUS_UTTERANCES = 200
CORPUS_CLASSES = 4
CORPUS_DURATION_RANGE = (2.0, 4.0)

_TRUTHY = ("true", "1", "yes")

_SECTIONS = {
    "mask": MaskPolicy,
    "quantizer": QuantizerConfig,
    "predictor": PredictorConfig,
    "probe": ProbeConfig,
}


def _build_section(cls, raw: Dict[str, Any], name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"Unknown keys in '{name}': {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(f"Invalid '{name}' section: {e}")


def config_from_dict(raw: Dict[str, Any]) -> TrainConfig:
    """Build a TrainConfig from a parsed document (snake_case field names)."""
    if not isinstance(raw, dict):
        raise ConfigError("Config document must be a mapping")

    top = dict(raw)
    kwargs: Dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        if section in top:
            value = top.pop(section)
            if not isinstance(value, dict):
                raise ConfigError(f"Section '{section}' must be a mapping")
            kwargs[section] = _build_section(cls, value, section)

    known = {f.name for f in dataclasses.fields(TrainConfig)} - set(_SECTIONS)
    unknown = set(top) - known
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
    kwargs.update(top)
    try:
        return TrainConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid config: {e}")


def config_to_dict(config: TrainConfig) -> Dict[str, Any]:
    return dataclasses.asdict(config)


def load_train_config(path: Optional[str] = None, seed: Optional[int] = None) -> TrainConfig:
    """Load a run configuration with env-var overrides.

    The document is parsed with ``yaml.safe_load`` so both JSON and YAML are
    accepted. Precedence (highest first): the explicit *seed* argument,
    environment variables (``RPQ_SEED``, ``RPQ_STEPS``, ``RPQ_DETERMINISTIC``,
    ``RPQ_PEAK_LR``), the file, dataclass defaults.
    """
    raw: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as handle:
                raw = yaml.safe_load(handle) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Could not parse config {path}: {e}")

    config = config_from_dict(raw)

    overrides: Dict[str, Any] = {}
    try:
        if "RPQ_SEED" in os.environ:
            overrides["seed"] = int(os.environ["RPQ_SEED"])
        if "RPQ_STEPS" in os.environ:
            overrides["steps"] = int(os.environ["RPQ_STEPS"])
        if "RPQ_PEAK_LR" in os.environ:
            overrides["peak_lr"] = float(os.environ["RPQ_PEAK_LR"])
    except ValueError as e:
        raise ConfigError(f"Invalid environment override: {e}")
    if "RPQ_DETERMINISTIC" in os.environ:
        overrides["deterministic"] = os.environ["RPQ_DETERMINISTIC"].lower() in _TRUTHY
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        logger.debug("Config overrides: %s", overrides)
        config = dataclasses.replace(config, **overrides)

    config.validate()
    return config
