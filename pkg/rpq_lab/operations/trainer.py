"""Deterministic masked-prediction pre-training loop.

Per step: take the next duration-capped batch, quantize the clean stacked
features into targets, sample a span mask per utterance and fill covered
Mel rows with noise, run the predictor on the masked features, then take one
Adam step on the masked cross-entropy. Randomness comes from per-purpose
streams (shuffle per epoch, mask and noise per step), so a given seed always
produces the same run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from rpq_lab.config import (
    CHECKPOINT_DIR_NAME,
    METRICS_FILE,
    METRICS_HEADER,
    QUANTIZER_FILE_NAME,
    SUMMARY_FILE,
)
from rpq_lab.config_models import TrainConfig
from rpq_lab.core.audio_frontend import (
    FeatureNormalizer,
    MelSpectrogram,
    fit_normalizer,
    load_wav,
    log_mel_spectrogram,
    stack_frames,
)
from rpq_lab.core.checkpoint import save_predictor, save_quantizer
from rpq_lab.core.masking import apply_masks, reduce_mask, sample_masks
from rpq_lab.core.predictor import (
    PredictorParams,
    backward_context,
    build_context,
    forward_context,
    init_predictor,
    masked_ce_loss,
)
from rpq_lab.core.prng import PrngStream
from rpq_lab.core.quantizer import Quantizer, codebook_utilization, init_quantizer, quantize
from rpq_lab.errors import EmptyMask, EmptyManifest, LabError
from rpq_lab.operations.corpus import ManifestEntry, dynamic_batches, read_manifest
from rpq_lab.operations.optim import AdamState, adam_step, lr_at
from rpq_lab.utils import fmt_float, write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass
class StepResult:
    step: int
    lr: float
    loss: float
    masked_acc: float
    util_entropy: float
    n_masked: int
    ms_quantize_mask: float
    ms_forward_backward: float
    per_utterance_loss: Dict[str, float] = field(default_factory=dict)
    targets: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ms_per_step(self) -> float:
        return self.ms_quantize_mask + self.ms_forward_backward


@dataclass
class RunArtifacts:
    """Result of a pre-training run."""

    success: bool
    out_dir: Path
    metrics_path: Path
    summary_path: Path
    quantizer_path: Path
    checkpoints: Dict[int, Path] = field(default_factory=dict)
    history: List[StepResult] = field(default_factory=list)
    steps: int = 0
    skipped_batches: int = 0
    epochs: int = 0
    final_masked_acc: float = float("nan")
    final_loss: float = float("nan")
    util_entropy: float = float("nan")
    distinct_codes: int = 0
    timing_ms: Dict[str, float] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def midpoint_checkpoint(self) -> Optional[Path]:
        return self.checkpoints.get(self.steps // 2)

    @property
    def final_checkpoint(self) -> Optional[Path]:
        return self.checkpoints.get(self.steps)


def masked_accuracy(logits: np.ndarray, targets, loss_mask: np.ndarray) -> float:
    """Fraction of masked positions whose argmax (lowest index on ties) hits the target."""
    indices = targets.indices if hasattr(targets, "indices") else np.asarray(targets)
    rows = np.flatnonzero(np.asarray(loss_mask, dtype=bool))
    if len(rows) == 0:
        raise EmptyMask("No masked positions")
    predicted = np.argmax(logits[rows], axis=1)
    return float(np.mean(predicted == indices[rows]))


def extract_mels(entries: Sequence[ManifestEntry]) -> Dict[str, MelSpectrogram]:
    """Log-Mel features for every manifest entry, keyed by utterance id."""
    return {entry.id: log_mel_spectrogram(load_wav(entry.path)) for entry in entries}


def checkpoint_steps(config: TrainConfig) -> List[int]:
    steps = {0, config.steps // 2, config.steps}
    if config.checkpoint_every > 0:
        steps.update(range(config.checkpoint_every, config.steps + 1, config.checkpoint_every))
    return sorted(steps)


class Trainer:
    """Runs one pre-training job and writes its artifacts under *out_dir*."""

    def __init__(self, config: TrainConfig, out_dir):
        config.validate()
        self.config = config.resolved()
        self.out_dir = Path(out_dir)
        self._progress_callback: Optional[Callable[[int, int, Optional[StepResult]], None]] = None

        self.quantizer: Optional[Quantizer] = None
        self.params: Optional[PredictorParams] = None
        self.normalizer: Optional[FeatureNormalizer] = None
        self._mels: Dict[str, MelSpectrogram] = {}

    def set_progress_callback(self, callback: Callable[[int, int, Optional[StepResult]], None]) -> None:
        """Set callback for progress updates: callback(step, total_steps, result_or_None)."""
        self._progress_callback = callback

    def _report_progress(self, step: int, result: Optional[StepResult]) -> None:
        if self._progress_callback:
            self._progress_callback(step, self.config.steps, result)

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def _prepare(self, entries: Sequence[ManifestEntry]) -> None:
        raw = extract_mels(entries)
        if self.config.normalize_features:
            self.normalizer = fit_normalizer(raw.values())
        else:
            self.normalizer = FeatureNormalizer.identity()
        self._mels = {utt_id: self.normalizer.apply(mel) for utt_id, mel in raw.items()}
        self.quantizer = init_quantizer(self.config.quantizer)
        self.params = init_predictor(self.config.predictor)
        logger.info(
            "Prepared %d utterances, K=%d, H=%d, %d predictor parameters",
            len(entries), self.config.quantizer.codebook_size, self.config.predictor.hidden_dim,
            self.params.parameter_count,
        )

    # ------------------------------------------------------------------
    # One step
    # ------------------------------------------------------------------

    def train_step(self, batch: Sequence[ManifestEntry], step: int, adam: AdamState) -> StepResult:
        """Run one update on *batch*; raises EmptyMask when nothing in it is masked."""
        cfg = self.config
        mask_rng = PrngStream.for_purpose(cfg.seed, "mask", step)
        noise_rng = PrngStream.for_purpose(cfg.seed, "noise", step)

        started = time.perf_counter()
        mels = [self._mels[entry.id] for entry in batch]
        # Targets always come from the clean features
        clean = np.vstack([stack_frames(mel, cfg.stack).frames for mel in mels])
        all_targets = quantize(self.quantizer, clean).indices
        masks = sample_masks([mel.n_frames for mel in mels], cfg.mask, mask_rng)
        masked_frames = [
            stack_frames(masked, cfg.stack).frames
            for masked in apply_masks(mels, masks, cfg.mask, noise_rng)
        ]
        loss_masks = [reduce_mask(mask, cfg.stack) for mask in masks]
        after_mask = time.perf_counter()

        all_mask = np.concatenate(loss_masks)
        if not all_mask.any():
            raise EmptyMask(f"Batch at step {step} has no masked positions")

        # Context windows never cross utterance boundaries
        context = np.vstack([build_context(f, cfg.predictor.context_radius) for f in masked_frames])
        activations = forward_context(self.params, context)
        loss = masked_ce_loss(activations.logits, all_targets, all_mask)
        grads = backward_context(self.params, activations, all_targets, all_mask)
        after_backward = time.perf_counter()

        accuracy = masked_accuracy(activations.logits, all_targets, all_mask)
        lr = lr_at(step, cfg)
        self.params = adam_step(self.params, grads, adam, lr)

        per_utterance: Dict[str, float] = {}
        offset = 0
        for entry, utt_mask in zip(batch, loss_masks):
            segment = slice(offset, offset + len(utt_mask))
            if utt_mask.any():
                per_utterance[entry.id] = float(loss.per_position[segment][utt_mask].mean())
            offset += len(utt_mask)

        return StepResult(
            step=step,
            lr=lr,
            loss=loss.loss,
            masked_acc=accuracy,
            util_entropy=codebook_utilization(all_targets, self.quantizer.codebook_size).normalized_entropy,
            n_masked=loss.n_masked,
            ms_quantize_mask=(after_mask - started) * 1000.0,
            ms_forward_backward=(after_backward - after_mask) * 1000.0,
            per_utterance_loss=per_utterance,
            targets=all_targets,
        )

    # ------------------------------------------------------------------
    # Full run
    # ------------------------------------------------------------------

    def _save_checkpoint(self, step: int, artifacts: RunArtifacts) -> None:
        path = self.out_dir / CHECKPOINT_DIR_NAME / f"step_{step}.brq"
        save_predictor(path, self.params, self.config, self.normalizer, step)
        artifacts.checkpoints[step] = path

    def _metrics_row(self, result: StepResult, skipped: int) -> List[str]:
        ms = 0.0 if self.config.deterministic else result.ms_per_step
        return [
            str(result.step),
            fmt_float(result.lr, 10),
            fmt_float(result.loss),
            fmt_float(result.masked_acc),
            fmt_float(result.util_entropy),
            fmt_float(ms, 3),
            str(skipped),
        ]

    def pretrain(self, manifest_path) -> RunArtifacts:
        """Train for ``config.steps`` steps and write metrics, checkpoints and summary.

        Raises:
            EmptyManifest: manifest has no utterances
            NonFiniteGradient: a gradient turned NaN/Inf; the run stops there
        """
        cfg = self.config
        entries = read_manifest(manifest_path)
        if not entries:
            raise EmptyManifest(f"Manifest {manifest_path} has no utterances")
        self._prepare(entries)

        self.out_dir.mkdir(parents=True, exist_ok=True)
        artifacts = RunArtifacts(
            success=False,
            out_dir=self.out_dir,
            metrics_path=self.out_dir / METRICS_FILE,
            summary_path=self.out_dir / SUMMARY_FILE,
            quantizer_path=self.out_dir / CHECKPOINT_DIR_NAME / QUANTIZER_FILE_NAME,
            steps=cfg.steps,
        )
        save_quantizer(artifacts.quantizer_path, self.quantizer)
        save_points = set(checkpoint_steps(cfg))
        self._save_checkpoint(0, artifacts)

        rows: List[List[str]] = []
        try:
            self._run_steps(entries, artifacts, save_points, rows)
        except LabError as e:
            artifacts.errors.append(f"{type(e).__name__}: {e}")
            logger.error("Run stopped after %d updates: %s", len(artifacts.history), e)
            raise
        finally:
            # Rows logged before an abort are kept
            write_csv(artifacts.metrics_path, METRICS_HEADER, rows)
            self._finish(artifacts)
        return artifacts

    def _run_steps(
        self,
        entries: Sequence[ManifestEntry],
        artifacts: RunArtifacts,
        save_points: set,
        rows: List[List[str]],
    ) -> None:
        cfg = self.config
        adam = AdamState.zeros_like(self.params)
        step = 0
        epoch = 0
        seen_warnings = set()
        while step < cfg.steps:
            plan = dynamic_batches(
                entries, cfg.max_batch_seconds, PrngStream.for_purpose(cfg.seed, "shuffle", epoch)
            )
            for message in plan.warnings:
                if message not in seen_warnings:
                    seen_warnings.add(message)
                    artifacts.warnings.append(message)
            for batch in plan.batches:
                if step >= cfg.steps:
                    break
                step += 1
                try:
                    result = self.train_step(batch, step, adam)
                except EmptyMask:
                    artifacts.skipped_batches += 1
                    logger.warning("Step %d: batch has no masked positions, skipped", step)
                    result = None
                if result is not None:
                    artifacts.history.append(result)
                    rows.append(self._metrics_row(result, artifacts.skipped_batches))
                    logger.debug(
                        "step %d lr=%.6g loss=%.4f acc=%.4f", step, result.lr, result.loss,
                        result.masked_acc,
                    )
                if step in save_points:
                    self._save_checkpoint(step, artifacts)
                self._report_progress(step, result)
            epoch += 1
            artifacts.epochs = epoch

    def _finish(self, artifacts: RunArtifacts) -> None:
        cfg = self.config
        window = artifacts.history[-cfg.final_window:]
        if window:
            artifacts.final_masked_acc = float(np.mean([r.masked_acc for r in window]))
            artifacts.final_loss = float(np.mean([r.loss for r in window]))

        corpus_targets = [
            quantize(self.quantizer, stack_frames(mel, cfg.stack)).indices
            for mel in self._mels.values()
        ]
        utilization = codebook_utilization(np.concatenate(corpus_targets), self.quantizer.codebook_size)
        artifacts.util_entropy = utilization.normalized_entropy
        artifacts.distinct_codes = utilization.distinct_codes

        if artifacts.history:
            qm = float(np.mean([r.ms_quantize_mask for r in artifacts.history]))
            fb = float(np.mean([r.ms_forward_backward for r in artifacts.history]))
            artifacts.timing_ms = {
                "quantize_mask_per_batch": qm,
                "forward_backward_per_batch": fb,
                "ratio": qm / fb if fb > 0 else float("nan"),
            }

        artifacts.success = not artifacts.errors
        write_json(
            artifacts.summary_path,
            {
                "success": artifacts.success,
                "steps": cfg.steps,
                "updates": len(artifacts.history),
                "skipped_batches": artifacts.skipped_batches,
                "epochs": artifacts.epochs,
                "final_window": cfg.final_window,
                "final_masked_acc": artifacts.final_masked_acc,
                "final_loss": artifacts.final_loss,
                "utilization": {
                    "normalized_entropy": utilization.normalized_entropy,
                    "distinct_codes": utilization.distinct_codes,
                    "codebook_size": self.quantizer.codebook_size,
                },
                "quantizer_trainable_parameters": self.quantizer.trainable_parameter_count,
                "timing_ms": artifacts.timing_ms,
                "checkpoints": {str(s): str(p) for s, p in sorted(artifacts.checkpoints.items())},
                "warnings": artifacts.warnings,
                "errors": artifacts.errors,
            },
        )
        logger.info(
            "Finished %d steps (%d skipped): final acc=%.4f loss=%.4f util=%.3f",
            cfg.steps, artifacts.skipped_batches, artifacts.final_masked_acc,
            artifacts.final_loss, artifacts.util_entropy,
        )


def pretrain(manifest_path, config: TrainConfig, out_dir) -> RunArtifacts:
    return Trainer(config, out_dir).pretrain(manifest_path)
