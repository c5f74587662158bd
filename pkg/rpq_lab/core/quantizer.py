"""Frozen random-projection quantizer.

A Xavier-uniform projection (D×code_dim) and a standard-normal codebook
(K×code_dim) are drawn once from a seeded stream and never updated. The
target for a frame x is the index of the codebook row nearest to p = xᵀA
under normalized (unit-length) distance, which is the row with the largest
cosine similarity. Ties go to the lowest index; a zero projection is left
unnormalized.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from rpq_lab.config_models import QuantizerConfig
from rpq_lab.core.audio_frontend import StackedFeatures
from rpq_lab.core.prng import PrngStream
from rpq_lab.errors import CorruptFile, DimensionMismatch, IndexOutOfRange
from rpq_lab.utils import atomic_write_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Quantizer:
    projection: np.ndarray  # (D, code_dim), read-only
    codebook: np.ndarray  # (K, code_dim), read-only
    config: QuantizerConfig

    @property
    def codebook_size(self) -> int:
        return self.codebook.shape[0]

    @property
    def trainable_parameter_count(self) -> int:
        """Always zero: nothing in the target path receives gradients."""
        return 0

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"projection": self.projection, "codebook": self.codebook}


@dataclass(frozen=True)
class TargetSequence:
    indices: np.ndarray  # (T',) int64

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class UtilizationStats:
    histogram: np.ndarray
    normalized_entropy: float
    distinct_codes: int

    @property
    def total(self) -> int:
        return int(self.histogram.sum())


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_quantizer(config: QuantizerConfig) -> Quantizer:
    """Draw the frozen projection (first) and codebook (second) from one stream."""
    config.validate()
    rng = PrngStream(config.seed)
    d, c, k = config.input_dim, config.code_dim, config.codebook_size
    projection = rng.uniform_symmetric(xavier_bound(d, c), d * c).reshape(d, c)
    codebook = rng.normal(k * c).reshape(k, c)
    logger.debug("Initialized quantizer D=%d code_dim=%d K=%d seed=%d", d, c, k, config.seed)
    return Quantizer(projection=_frozen(projection), codebook=_frozen(codebook), config=config)


def from_tensors(config: QuantizerConfig, projection: np.ndarray, codebook: np.ndarray) -> Quantizer:
    if projection.shape != (config.input_dim, config.code_dim):
        raise DimensionMismatch(f"projection shape {projection.shape} does not match config")
    if codebook.shape != (config.codebook_size, config.code_dim):
        raise DimensionMismatch(f"codebook shape {codebook.shape} does not match config")
    return Quantizer(projection=_frozen(projection), codebook=_frozen(codebook), config=config)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    safe = np.where(norms > 0.0, norms, 1.0)
    return matrix / safe[:, None]


def _as_matrix(feats: Union[StackedFeatures, np.ndarray]) -> np.ndarray:
    frames = feats.frames if isinstance(feats, StackedFeatures) else feats
    return np.asarray(frames, dtype=np.float64)


def quantize(q: Quantizer, feats: Union[StackedFeatures, np.ndarray]) -> TargetSequence:
    """Nearest normalized codebook row for each frame (lowest index on ties)."""
    frames = _as_matrix(feats)
    if frames.ndim != 2 or frames.shape[1] != q.projection.shape[0]:
        raise DimensionMismatch(
            f"Feature dim {frames.shape[-1]} does not match quantizer input_dim "
            f"{q.projection.shape[0]}"
        )
    projected = frames @ q.projection
    mode = q.config.normalization
    codes = q.codebook if mode == "none" else _unit_rows(q.codebook)
    if mode == "both":
        projected = _unit_rows(projected)
    # ‖p − c‖² = ‖p‖² + ‖c‖² − 2 p·c
    p_sq = np.einsum("ij,ij->i", projected, projected)
    c_sq = np.einsum("ij,ij->i", codes, codes)
    distances = p_sq[:, None] + c_sq[None, :] - 2.0 * (projected @ codes.T)
    indices = np.argmin(distances, axis=1).astype(np.int64)
    if mode != "none":
        # A zero projection is equidistant from every unit codeword
        indices[p_sq == 0.0] = 0
    return TargetSequence(indices=indices)


def cosine_argmax(q: Quantizer, feats: Union[StackedFeatures, np.ndarray]) -> TargetSequence:
    """Same targets as :func:`quantize` via argmax of cosine similarity."""
    frames = _as_matrix(feats)
    similarity = _unit_rows(frames @ q.projection) @ _unit_rows(q.codebook).T
    return TargetSequence(indices=np.argmax(similarity, axis=1).astype(np.int64))


def codebook_utilization(
    targets: Union[TargetSequence, Sequence[TargetSequence], np.ndarray], codebook_size: int
) -> UtilizationStats:
    """Histogram and entropy normalized by ln K (0·ln 0 := 0; K = 1 gives 1)."""
    if isinstance(targets, TargetSequence):
        indices = targets.indices
    elif isinstance(targets, np.ndarray):
        indices = targets
    else:
        parts = [t.indices for t in targets]
        indices = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= codebook_size):
        raise IndexOutOfRange(
            f"Target indices must lie in [0, {codebook_size}), got "
            f"[{indices.min()}, {indices.max()}]"
        )
    histogram = np.bincount(indices, minlength=codebook_size)
    total = histogram.sum()
    if codebook_size == 1:
        entropy = 1.0
    elif total == 0:
        entropy = 0.0
    else:
        probs = histogram[histogram > 0] / total
        entropy = float(-np.sum(probs * np.log(probs)) / math.log(codebook_size))
        entropy = min(max(entropy, 0.0), 1.0)
    return UtilizationStats(
        histogram=histogram,
        normalized_entropy=entropy,
        distinct_codes=int(np.count_nonzero(histogram)),
    )


# ---------------------------------------------------------------------------
# Target dump: "utt_id idx idx ...", LF-terminated, UTF-8
# ---------------------------------------------------------------------------

def write_targets(path, rows: Iterable[Tuple[str, TargetSequence]]) -> Path:
    lines: List[str] = []
    for utt_id, targets in rows:
        if any(ch.isspace() for ch in utt_id):
            raise ValueError(f"Utterance id must not contain whitespace: {utt_id!r}")
        lines.append(" ".join([utt_id] + [str(int(i)) for i in targets.indices]) + "\n")
    return atomic_write_text(Path(path), "".join(lines))


def read_targets(path) -> List[Tuple[str, TargetSequence]]:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                indices = np.array([int(p) for p in parts[1:]], dtype=np.int64)
            except ValueError:
                raise CorruptFile(f"{path}:{line_no}: non-integer target index")
            rows.append((parts[0], TargetSequence(indices=indices)))
    return rows
