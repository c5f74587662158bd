"""Span masking over Mel frames with noise infill."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from rpq_lab.config_models import MaskPolicy
from rpq_lab.core.audio_frontend import MelSpectrogram
from rpq_lab.core.prng import PrngStream
from rpq_lab.errors import InvalidConfig, LengthMismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskSpec:
    covered: np.ndarray  # (T,) bool
    starts: np.ndarray  # sorted start indices
    span: int

    @property
    def n_frames(self) -> int:
        return len(self.covered)

    @property
    def coverage(self) -> float:
        return float(self.covered.mean()) if len(self.covered) else 0.0


@dataclass(frozen=True)
class MaskStatsRow:
    start_prob: float
    span: int
    analytic_coverage: float
    empirical_coverage: float
    n_frames: int

    @property
    def nominal_ratio(self) -> float:
        """No-overlap upper bound p·span, the nominal masking ratio."""
        return min(1.0, self.start_prob * self.span)


def covered_from_starts(starts_indicator: np.ndarray, span: int) -> np.ndarray:
    """covered[t] iff some start s satisfies s <= t < s + span (clipped at T)."""
    n = len(starts_indicator)
    if n == 0:
        return np.zeros(0, dtype=bool)
    counts = np.convolve(starts_indicator.astype(np.int64), np.ones(span, dtype=np.int64))
    return counts[:n] > 0


def _mask_from_draws(draws: np.ndarray, policy: MaskPolicy) -> MaskSpec:
    is_start = draws < policy.start_prob
    return MaskSpec(
        covered=covered_from_starts(is_start, policy.span),
        starts=np.flatnonzero(is_start),
        span=policy.span,
    )


def sample_mask(n_frames: int, policy: MaskPolicy, rng: PrngStream) -> MaskSpec:
    """Each frame independently starts a span with probability ``start_prob``."""
    if n_frames < 1:
        raise LengthMismatch(f"Need at least one frame to mask, got {n_frames}")
    return _mask_from_draws(rng.uniform(n_frames), policy)


def sample_masks(lengths: Sequence[int], policy: MaskPolicy, rng: PrngStream) -> List[MaskSpec]:
    """Masks for several utterances from a single draw.

    Identical to calling :func:`sample_mask` once per length, in order.
    """
    for n_frames in lengths:
        if n_frames < 1:
            raise LengthMismatch(f"Need at least one frame to mask, got {n_frames}")
    draws = rng.uniform(int(sum(lengths)))
    bounds = np.cumsum([0, *lengths])
    return [_mask_from_draws(draws[a:b], policy) for a, b in zip(bounds[:-1], bounds[1:])]


def expected_coverage(policy: MaskPolicy) -> float:
    """Interior-frame probability of being covered: 1 − (1 − p)^span."""
    policy.validate()
    if policy.span == 1:
        return float(policy.start_prob)
    return 1.0 - (1.0 - policy.start_prob) ** policy.span


def apply_mask(
    mel: MelSpectrogram, mask: MaskSpec, policy: MaskPolicy, rng: PrngStream
) -> MelSpectrogram:
    """Replace covered rows with i.i.d. normal(noise_mean, noise_std) draws."""
    if mask.n_frames != mel.n_frames:
        raise LengthMismatch(f"Mask covers {mask.n_frames} frames, Mel has {mel.n_frames}")
    frames = np.array(mel.frames, dtype=np.float64, copy=True)
    rows = np.flatnonzero(mask.covered)
    if len(rows):
        width = frames.shape[1]
        noise = rng.normal(len(rows) * width, mean=policy.noise_mean, std=policy.noise_std)
        frames[rows] = noise.reshape(len(rows), width)
    return MelSpectrogram(frames=frames, hop_ms=mel.hop_ms, win_ms=mel.win_ms)


def apply_masks(
    mels: Sequence[MelSpectrogram], masks: Sequence[MaskSpec], policy: MaskPolicy, rng: PrngStream
) -> List[MelSpectrogram]:
    """Noise infill for several utterances from a single normal draw.

    Identical to calling :func:`apply_mask` on each pair in order: every
    utterance's share is rounded up to whole Box–Muller pairs, the way a
    separate call would consume them.
    """
    if len(mels) != len(masks):
        raise LengthMismatch(f"{len(masks)} masks for {len(mels)} spectrograms")
    counts = []
    for mel, mask in zip(mels, masks):
        if mask.n_frames != mel.n_frames:
            raise LengthMismatch(f"Mask covers {mask.n_frames} frames, Mel has {mel.n_frames}")
        counts.append(int(mask.covered.sum()) * mel.frames.shape[1])
    noise = rng.normal(sum(c + c % 2 for c in counts), mean=policy.noise_mean, std=policy.noise_std)

    out: List[MelSpectrogram] = []
    offset = 0
    for mel, mask, count in zip(mels, masks, counts):
        frames = np.array(mel.frames, dtype=np.float64, copy=True)
        rows = np.flatnonzero(mask.covered)
        if len(rows):
            frames[rows] = noise[offset:offset + count].reshape(len(rows), frames.shape[1])
        offset += count + count % 2
        out.append(MelSpectrogram(frames=frames, hop_ms=mel.hop_ms, win_ms=mel.win_ms))
    return out


def reduce_mask(mask: MaskSpec, stack: int) -> np.ndarray:
    """Stacked position t′ is masked iff ANY of its Mel frames is covered."""
    if stack < 1:
        raise InvalidConfig(f"stack must be >= 1, got {stack}")
    n_groups = mask.n_frames // stack
    return mask.covered[: n_groups * stack].reshape(n_groups, stack).any(axis=1)


def mask_stats(policy: MaskPolicy, n_frames: int, rng: PrngStream) -> MaskStatsRow:
    """Analytic vs empirical coverage on one long sampled mask.

    Empirical coverage is measured on interior frames t >= span − 1, the
    frames every possible span start can reach.
    """
    policy.validate()
    mask = sample_mask(n_frames, policy, rng)
    interior = mask.covered[policy.span - 1:]
    empirical = float(interior.mean()) if len(interior) else float("nan")
    row = MaskStatsRow(
        start_prob=policy.start_prob,
        span=policy.span,
        analytic_coverage=expected_coverage(policy),
        empirical_coverage=empirical,
        n_frames=n_frames,
    )
    logger.debug(
        "mask p=%.3f span=%d analytic=%.5f empirical=%.5f nominal=%.3f",
        row.start_prob, row.span, row.analytic_coverage, row.empirical_coverage,
        row.nominal_ratio,
    )
    return row
