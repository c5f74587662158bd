"""BRQ1 checkpoint files for the predictor and the frozen quantizer.

Layout: magic ``BRQ1``, uint32 LE header length, UTF-8 JSON header (kind,
config, meta, and name/shape/offset for each tensor), then little-endian
float32 tensors in header order. Writes are atomic.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from rpq_lab.config import CHECKPOINT_MAGIC, config_from_dict, config_to_dict
from rpq_lab.config_models import QuantizerConfig, TrainConfig
from rpq_lab.core.audio_frontend import FeatureNormalizer
from rpq_lab.core.predictor import TENSOR_NAMES, PredictorParams
from rpq_lab.core.quantizer import Quantizer, from_tensors
from rpq_lab.errors import CorruptFile
from rpq_lab.utils import atomic_write_bytes

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    kind: str
    config: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PredictorCheckpoint:
    params: PredictorParams
    config: TrainConfig
    normalizer: FeatureNormalizer
    step: int


def save_checkpoint(
    path,
    kind: str,
    config: Dict[str, Any],
    tensors: Dict[str, np.ndarray],
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in tensors.items():
        data = np.ascontiguousarray(tensor, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)

    header = {"kind": kind, "config": config, "meta": meta or {}, "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = CHECKPOINT_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + b"".join(blobs)
    logger.debug("Writing %s checkpoint %s (%d bytes)", kind, path, len(payload))
    return atomic_write_bytes(Path(path), payload)


def load_checkpoint(path) -> Checkpoint:
    """Parse a BRQ1 file.

    Raises:
        CorruptFile: bad magic, malformed header or truncated tensor data
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"{path}: missing BRQ1 magic")
    (header_len,) = struct.unpack("<I", data[4:8])
    body_start = 8 + header_len
    if body_start > len(data):
        raise CorruptFile(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(data[8:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"{path}: unreadable header: {e}")

    tensors: Dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = body_start + entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise CorruptFile(f"{path}: tensor '{entry['name']}' is truncated")
        tensors[entry["name"]] = (
            np.frombuffer(data[start:end], dtype="<f4").reshape(shape).astype(np.float64)
        )
    return Checkpoint(
        kind=header.get("kind", ""),
        config=header.get("config", {}),
        tensors=tensors,
        meta=header.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# Predictor / quantizer helpers
# ---------------------------------------------------------------------------

def save_predictor(
    path, params: PredictorParams, config: TrainConfig, normalizer: FeatureNormalizer, step: int
) -> Path:
    tensors = params.as_dict()
    tensors["norm_mean"] = normalizer.mean
    tensors["norm_std"] = normalizer.std
    return save_checkpoint(path, "predictor", config_to_dict(config), tensors, {"step": step})


def load_predictor(path) -> PredictorCheckpoint:
    checkpoint = load_checkpoint(path)
    if checkpoint.kind != "predictor":
        raise CorruptFile(f"{path}: expected a predictor checkpoint, got '{checkpoint.kind}'")
    params = PredictorParams.from_dict(
        {n: checkpoint.tensors[n] for n in TENSOR_NAMES if n in checkpoint.tensors}
    )
    if "norm_mean" in checkpoint.tensors:
        normalizer = FeatureNormalizer(
            mean=checkpoint.tensors["norm_mean"], std=checkpoint.tensors["norm_std"]
        )
    else:
        normalizer = FeatureNormalizer.identity()
    return PredictorCheckpoint(
        params=params,
        config=config_from_dict(checkpoint.config),
        normalizer=normalizer,
        step=int(checkpoint.meta.get("step", 0)),
    )


def save_quantizer(path, quantizer: Quantizer) -> Path:
    config = {
        "seed": quantizer.config.seed,
        "input_dim": quantizer.config.input_dim,
        "code_dim": quantizer.config.code_dim,
        "codebook_size": quantizer.config.codebook_size,
        "normalization": quantizer.config.normalization,
    }
    return save_checkpoint(path, "quantizer", config, quantizer.tensors())


def load_quantizer(path) -> Quantizer:
    checkpoint = load_checkpoint(path)
    if checkpoint.kind != "quantizer":
        raise CorruptFile(f"{path}: expected a quantizer checkpoint, got '{checkpoint.kind}'")
    config = QuantizerConfig(**checkpoint.config)
    return from_tensors(config, checkpoint.tensors["projection"], checkpoint.tensors["codebook"])
