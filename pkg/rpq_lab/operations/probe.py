"""Frozen-representation probe on utterance class labels.

The predictor stays frozen. Each utterance is run unmasked through it, the
two hidden states are mean-pooled over frames, and a linear classifier is
trained on their softmax-weighted sum, with the two layer weights learned
jointly with it.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from rpq_lab.config import PROBE_FILE, PROBE_HEADER
from rpq_lab.config_models import ProbeConfig
from rpq_lab.core.audio_frontend import AudioBuffer, MelSpectrogram, log_mel_spectrogram, stack_frames
from rpq_lab.core.checkpoint import PredictorCheckpoint, load_predictor
from rpq_lab.core.predictor import PredictorParams, forward, softmax
from rpq_lab.core.prng import PrngStream, derive_seed
from rpq_lab.errors import DegenerateLabels, EmptyEval, ShapeMismatch
from rpq_lab.operations.corpus import (
    ManifestEntry,
    labelled_subset,
    read_labels,
    read_manifest,
    split_corpus,
)
from rpq_lab.operations.trainer import extract_mels
from rpq_lab.utils import fmt_float, mean_std, write_csv

logger = logging.getLogger(__name__)


@dataclass
class LayerWeights:
    logits: np.ndarray  # (2,) for h1, h2

    @property
    def weights(self) -> np.ndarray:
        return softmax(self.logits)

    @classmethod
    def equal(cls) -> "LayerWeights":
        return cls(logits=np.zeros(2))


@dataclass
class ProbeParams:
    weight: np.ndarray  # (H, C)
    bias: np.ndarray  # (C,)
    layers: LayerWeights

    @property
    def class_count(self) -> int:
        return self.bias.shape[0]


@dataclass
class LayerMeans:
    """Per-utterance frame means of h1 and h2, one row per utterance."""

    h1: np.ndarray  # (N, H)
    h2: np.ndarray  # (N, H)
    ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.h1.shape[0]

    def pooled(self, layers: LayerWeights) -> np.ndarray:
        w = layers.weights
        return w[0] * self.h1 + w[1] * self.h2

    def subset(self, ids: Sequence[str]) -> "LayerMeans":
        index = {utt_id: i for i, utt_id in enumerate(self.ids)}
        rows = [index[utt_id] for utt_id in ids]
        return LayerMeans(h1=self.h1[rows], h2=self.h2[rows], ids=list(ids))


@dataclass
class ProbeRow:
    checkpoint: str
    seed: int
    train_acc: float
    test_acc: float
    w_h1: float
    w_h2: float


@dataclass
class ProbeReport:
    """Result of probing one or more checkpoints."""

    success: bool
    path: Optional[Path]
    rows: List[ProbeRow] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def mean_test_acc(self, checkpoint: str) -> float:
        return mean_std([r.test_acc for r in self.rows if r.checkpoint == checkpoint])[0]


@dataclass
class ProbeComparison:
    pretrained_acc: float
    random_acc: float
    report: ProbeReport

    @property
    def margin(self) -> float:
        return self.pretrained_acc - self.random_acc


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def layer_means(params: PredictorParams, mel: MelSpectrogram, stack: int, radius: int) -> Tuple[np.ndarray, np.ndarray]:
    """Frame means of h1 and h2 for one unmasked, already normalized utterance."""
    activations = forward(params, stack_frames(mel, stack), radius)
    return activations.h1.mean(axis=0), activations.h2.mean(axis=0)


def extract_features(
    checkpoint: PredictorCheckpoint, layers: LayerWeights, audio: AudioBuffer
) -> np.ndarray:
    """Mean over frames of w1·h1 + w2·h2 for one utterance (length H)."""
    mel = checkpoint.normalizer.apply(log_mel_spectrogram(audio))
    cfg = checkpoint.config
    m1, m2 = layer_means(checkpoint.params, mel, cfg.stack, cfg.predictor.context_radius)
    w = layers.weights
    return w[0] * m1 + w[1] * m2


def extract_layer_means(
    checkpoint: PredictorCheckpoint, mels: Dict[str, MelSpectrogram], ids: Sequence[str]
) -> LayerMeans:
    cfg = checkpoint.config
    h1_rows, h2_rows = [], []
    for utt_id in ids:
        mel = checkpoint.normalizer.apply(mels[utt_id])
        m1, m2 = layer_means(checkpoint.params, mel, cfg.stack, cfg.predictor.context_radius)
        h1_rows.append(m1)
        h2_rows.append(m2)
    return LayerMeans(h1=np.vstack(h1_rows), h2=np.vstack(h2_rows), ids=list(ids))


# ---------------------------------------------------------------------------
# Probe training
# ---------------------------------------------------------------------------

def _check_inputs(features: LayerMeans, labels: np.ndarray) -> None:
    if len(features) != len(labels):
        raise ShapeMismatch(f"{len(features)} feature rows but {len(labels)} labels")


def train_probe(
    features: LayerMeans,
    labels: Sequence[int],
    config: ProbeConfig,
    class_count: Optional[int] = None,
) -> ProbeParams:
    """Full-batch gradient descent on softmax cross-entropy.

    The classifier and the two layer-weight logits are updated together; the
    layer weights pass through a softmax so they stay positive and sum to 1.

    Raises:
        DegenerateLabels: fewer than two distinct classes
    """
    labels = np.asarray(labels, dtype=np.int64)
    _check_inputs(features, labels)
    if len(np.unique(labels)) < 2:
        raise DegenerateLabels("Probe training needs at least two classes")
    n_classes = class_count if class_count is not None else int(labels.max()) + 1
    n, hidden = features.h1.shape

    rng = PrngStream(config.seed)
    weight = rng.normal(hidden * n_classes, std=0.01).reshape(hidden, n_classes)
    bias = np.zeros(n_classes)
    layer_logits = np.zeros(2)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0

    for _ in range(config.steps):
        w = softmax(layer_logits)
        pooled = w[0] * features.h1 + w[1] * features.h2
        probs = softmax(pooled @ weight + bias)
        d_logits = (probs - onehot) / n
        d_weight = pooled.T @ d_logits
        d_bias = d_logits.sum(axis=0)
        d_pooled = d_logits @ weight.T
        d_w = np.array([np.sum(d_pooled * features.h1), np.sum(d_pooled * features.h2)])
        # softmax Jacobian: dL/dz_k = w_k (dL/dw_k − Σ_j w_j dL/dw_j)
        d_layer = w * (d_w - np.dot(w, d_w))

        weight -= config.lr * d_weight
        bias -= config.lr * d_bias
        layer_logits -= config.lr * d_layer

    return ProbeParams(weight=weight, bias=bias, layers=LayerWeights(logits=layer_logits))


def predict(probe: ProbeParams, features: LayerMeans) -> np.ndarray:
    scores = features.pooled(probe.layers) @ probe.weight + probe.bias
    return np.argmax(scores, axis=1)


def evaluate_probe(probe: ProbeParams, features: LayerMeans, labels: Sequence[int]) -> float:
    """Fraction of utterances whose argmax class (lowest index on ties) is correct."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyEval("Evaluation set is empty")
    _check_inputs(features, labels)
    return float(np.mean(predict(probe, features) == labels))


# ---------------------------------------------------------------------------
# Checkpoint comparison
# ---------------------------------------------------------------------------

def probe_report(
    checkpoint_paths: Sequence,
    manifest_path,
    labels_path,
    seeds: Sequence[int],
    config: ProbeConfig,
    out_dir=None,
) -> ProbeReport:
    """Probe every checkpoint under every seed; optionally write ``probe.csv``.

    Each seed draws its own stratified train/test split and probe init, shared
    across checkpoints so rows for the same seed are directly comparable. With
    ``labels_per_class`` set, only that many training utterances per class keep
    their labels and the rest are evaluated too.
    """
    entries: List[ManifestEntry] = read_manifest(manifest_path)
    labels = read_labels(labels_path)
    mels = extract_mels(entries)
    class_count = max(labels[e.id] for e in entries) + 1

    report = ProbeReport(success=False, path=None)
    for ckpt_path in checkpoint_paths:
        checkpoint = load_predictor(ckpt_path)
        features = extract_layer_means(checkpoint, mels, [e.id for e in entries])
        for seed in seeds:
            train, test = split_corpus(
                entries, labels, config.test_fraction, derive_seed(seed, "split")
            )
            if config.labels_per_class:
                # Unlabelled leftovers join the evaluation side
                train, unlabelled = labelled_subset(
                    train, labels, config.labels_per_class, derive_seed(seed, "labelled")
                )
                test = test + unlabelled
            train_ids = [e.id for e in train]
            test_ids = [e.id for e in test]
            seed_config = dataclasses.replace(config, seed=derive_seed(seed, "probe"))
            probe = train_probe(
                features.subset(train_ids), [labels[i] for i in train_ids], seed_config, class_count
            )
            weights = probe.layers.weights
            row = ProbeRow(
                checkpoint=str(ckpt_path),
                seed=seed,
                train_acc=evaluate_probe(probe, features.subset(train_ids), [labels[i] for i in train_ids]),
                test_acc=evaluate_probe(probe, features.subset(test_ids), [labels[i] for i in test_ids]),
                w_h1=float(weights[0]),
                w_h2=float(weights[1]),
            )
            report.rows.append(row)
            logger.info(
                "probe %s seed=%d train=%.4f test=%.4f w=(%.3f, %.3f)",
                row.checkpoint, seed, row.train_acc, row.test_acc, row.w_h1, row.w_h2,
            )

    if out_dir is not None:
        report.path = write_csv(
            Path(out_dir) / PROBE_FILE,
            PROBE_HEADER,
            [
                [r.checkpoint, r.seed, fmt_float(r.train_acc), fmt_float(r.test_acc),
                 fmt_float(r.w_h1), fmt_float(r.w_h2)]
                for r in report.rows
            ],
        )
    report.success = True
    return report


def compare_checkpoints(
    pretrained_path,
    random_path,
    manifest_path,
    labels_path,
    seeds: Sequence[int],
    config: ProbeConfig,
    out_dir=None,
) -> ProbeComparison:
    report = probe_report(
        [pretrained_path, random_path], manifest_path, labels_path, seeds, config, out_dir
    )
    comparison = ProbeComparison(
        pretrained_acc=report.mean_test_acc(str(pretrained_path)),
        random_acc=report.mean_test_acc(str(random_path)),
        report=report,
    )
    logger.info(
        "Probe margin %.4f (pretrained %.4f vs random init %.4f)",
        comparison.margin, comparison.pretrained_acc, comparison.random_acc,
    )
    return comparison
