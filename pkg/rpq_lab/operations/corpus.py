"""Synthetic corpus generation, manifests and duration-capped batching."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from rpq_lab.config import (
    CORPUS_CLASSES,
    CORPUS_DURATION_RANGE,
    CORPUS_UTTERANCES,
    LABELS_FILE,
    MANIFEST_FILE,
    SAMPLE_RATE,
)
from rpq_lab.core.audio_frontend import pcm16_from_float, write_wav
from rpq_lab.core.prng import PrngStream, derive_seed
from rpq_lab.errors import CorruptFile, EmptyManifest, InvalidRange
from rpq_lab.utils import atomic_write_text, write_csv

logger = logging.getLogger(__name__)

BAND_BASE_HZ = 300.0
BAND_STEP_HZ = 400.0
BAND_WIDTH_HZ = 300.0
HARMONIC_AMPLITUDES = (1.0, 0.5, 0.25)
HARMONIC_CUTOFF_HZ = 7900.0
PEAK_AMPLITUDE = 0.5
NOISE_STD = 0.01

# Highest class whose whole base band stays under the harmonic cutoff
MAX_CLASSES = int((HARMONIC_CUTOFF_HZ - BAND_BASE_HZ - BAND_WIDTH_HZ) // BAND_STEP_HZ) + 1


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    duration_s: float


@dataclass
class CorpusResult:
    """Result of a corpus generation run."""

    success: bool
    manifest_path: Path
    labels_path: Path
    entries: List[ManifestEntry] = field(default_factory=list)
    labels: Dict[str, int] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


@dataclass
class BatchPlan:
    batches: List[List[ManifestEntry]]
    warnings: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.batches)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def class_band(label: int) -> Tuple[float, float]:
    low = BAND_BASE_HZ + BAND_STEP_HZ * label
    return low, low + BAND_WIDTH_HZ


def synth_utterance(label: int, duration_s: float, rng: PrngStream) -> np.ndarray:
    """Harmonic tone in the class band, peak 0.5, plus white noise (float samples)."""
    low, high = class_band(label)
    f0 = low + rng.uniform() * (high - low)
    phases = 2.0 * math.pi * rng.uniform(len(HARMONIC_AMPLITUDES))
    n_samples = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n_samples) / SAMPLE_RATE

    signal = np.zeros(n_samples)
    for harmonic, (amplitude, phase) in enumerate(zip(HARMONIC_AMPLITUDES, phases), start=1):
        freq = harmonic * f0
        if freq >= HARMONIC_CUTOFF_HZ:
            continue
        signal += amplitude * np.sin(2.0 * math.pi * freq * t + phase)

    peak = np.max(np.abs(signal)) if n_samples else 0.0
    if peak > 0.0:
        signal *= PEAK_AMPLITUDE / peak
    signal += rng.normal(n_samples, std=NOISE_STD)
    return np.clip(signal, -1.0, 1.0)


def gen_synthetic_corpus(
    out_dir,
    n_utts: int = CORPUS_UTTERANCES,
    class_count: int = CORPUS_CLASSES,
    duration_range: Tuple[float, float] = CORPUS_DURATION_RANGE,
    seed: int = 0,
) -> CorpusResult:
    """Write WAV files, ``manifest.jsonl`` and ``labels.csv`` under *out_dir*.

    Labels cycle through the classes (utterance i has class i mod class_count);
    each utterance draws its duration, base frequency, phases and noise from its
    own sub-stream, so the corpus is byte-identical for a given seed.

    Raises:
        InvalidRange: n_utts < 1, class_count outside [2, MAX_CLASSES], or a bad
            duration range
    """
    if n_utts < 1:
        raise InvalidRange(f"n_utts must be >= 1, got {n_utts}")
    if not 2 <= class_count <= MAX_CLASSES:
        raise InvalidRange(f"class_count must be in [2, {MAX_CLASSES}], got {class_count}")
    low, high = duration_range
    if not 0.0 < low <= high:
        raise InvalidRange(f"Invalid duration range ({low}, {high})")

    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    entries: List[ManifestEntry] = []
    labels: Dict[str, int] = {}
    for i in range(n_utts):
        rng = PrngStream(derive_seed(seed, "corpus", i))
        label = i % class_count
        duration = low + rng.uniform() * (high - low)
        samples = pcm16_from_float(synth_utterance(label, duration, rng))
        utt_id = f"utt{i:05d}"
        rel_path = f"wav/{utt_id}.wav"
        write_wav(out_dir / rel_path, samples)
        entries.append(
            ManifestEntry(id=utt_id, path=rel_path, duration_s=len(samples) / SAMPLE_RATE)
        )
        labels[utt_id] = label

    manifest_path = out_dir / MANIFEST_FILE
    atomic_write_text(
        manifest_path,
        "".join(
            json.dumps({"id": e.id, "path": e.path, "duration_s": e.duration_s}) + "\n"
            for e in entries
        ),
    )
    labels_path = write_csv(
        out_dir / LABELS_FILE, ["id", "label"], [(e.id, labels[e.id]) for e in entries]
    )
    logger.info("Generated %d utterances in %d classes under %s", n_utts, class_count, out_dir)
    return CorpusResult(
        success=True,
        manifest_path=manifest_path,
        labels_path=labels_path,
        entries=entries,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Manifest / labels I/O
# ---------------------------------------------------------------------------

def read_manifest(path) -> List[ManifestEntry]:
    """Parse a JSONL manifest; relative audio paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    entries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                utt_id, audio, duration = str(row["id"]), str(row["path"]), float(row["duration_s"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorruptFile(f"{path}:{line_no}: invalid manifest row ({e})")
            if duration <= 0.0:
                raise InvalidRange(f"{path}:{line_no}: duration must be positive, got {duration}")
            audio_path = Path(audio)
            if not audio_path.is_absolute():
                audio_path = path.parent / audio_path
            entries.append(ManifestEntry(id=utt_id, path=str(audio_path), duration_s=duration))
    return entries


def read_labels(path) -> Dict[str, int]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Labels file not found: {path}")
    labels = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            try:
                labels[row["id"]] = int(row["label"])
            except (KeyError, TypeError, ValueError) as e:
                raise CorruptFile(f"{path}: invalid label row {row} ({e})")
    return labels


# ---------------------------------------------------------------------------
# Batching and splits
# ---------------------------------------------------------------------------

def dynamic_batches(
    manifest: Sequence[ManifestEntry],
    max_batch_seconds: float,
    rng: Optional[PrngStream] = None,
) -> BatchPlan:
    """Greedy duration-capped batches over a shuffled order.

    An utterance is appended unless the batch total would exceed the cap; an
    utterance longer than the cap on its own becomes a singleton batch with a
    warning. ``rng=None`` keeps manifest order.
    """
    if not manifest:
        raise EmptyManifest("Manifest has no utterances")
    order = rng.permutation(len(manifest)) if rng is not None else np.arange(len(manifest))

    batches: List[List[ManifestEntry]] = []
    warnings: List[str] = []
    current: List[ManifestEntry] = []
    total = 0.0
    for idx in order:
        entry = manifest[int(idx)]
        if entry.duration_s > max_batch_seconds:
            if current:
                batches.append(current)
                current, total = [], 0.0
            batches.append([entry])
            message = (
                f"Utterance {entry.id} ({entry.duration_s:.2f} s) exceeds the "
                f"{max_batch_seconds:.2f} s batch cap; placed in its own batch"
            )
            logger.warning(message)
            warnings.append(message)
            continue
        if current and total + entry.duration_s > max_batch_seconds:
            batches.append(current)
            current, total = [], 0.0
        current.append(entry)
        total += entry.duration_s
    if current:
        batches.append(current)
    return BatchPlan(batches=batches, warnings=warnings)


def split_corpus(
    manifest: Sequence[ManifestEntry],
    labels: Dict[str, int],
    test_fraction: float,
    seed: int,
) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """Per-class shuffled train/test split; both keep manifest order.

    Each class with at least two utterances puts round(n·test_fraction) of
    them (at least one, never all) into the test side.
    """
    by_class: Dict[int, List[int]] = {}
    for i, entry in enumerate(manifest):
        if entry.id not in labels:
            raise CorruptFile(f"No label for utterance {entry.id}")
        by_class.setdefault(labels[entry.id], []).append(i)

    test_idx = set()
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            continue
        rng = PrngStream(derive_seed(seed, "split", label), lanes=1)
        shuffled = [members[int(j)] for j in rng.permutation(len(members))]
        n_test = min(max(1, int(round(len(members) * test_fraction))), len(members) - 1)
        test_idx.update(shuffled[:n_test])

    train = [e for i, e in enumerate(manifest) if i not in test_idx]
    test = [e for i, e in enumerate(manifest) if i in test_idx]
    return train, test


def labelled_subset(
    entries: Sequence[ManifestEntry],
    labels: Dict[str, int],
    per_class: int,
    seed: int,
) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """Keep *per_class* seeded picks of each class; return (kept, rest) in input order.

    A class with no more than *per_class* utterances is kept whole.
    """
    by_class: Dict[int, List[int]] = {}
    for i, entry in enumerate(entries):
        by_class.setdefault(labels[entry.id], []).append(i)

    kept_idx = set()
    for label in sorted(by_class):
        members = by_class[label]
        rng = PrngStream(derive_seed(seed, "labelled", label), lanes=1)
        kept_idx.update(members[int(j)] for j in rng.permutation(len(members))[:per_class])

    kept = [e for i, e in enumerate(entries) if i in kept_idx]
    rest = [e for i, e in enumerate(entries) if i not in kept_idx]
    return kept, rest
