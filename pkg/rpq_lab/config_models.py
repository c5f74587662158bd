from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Tuple

from rpq_lab.errors import InvalidConfig, InvalidGrid


@dataclass(frozen=True)
class QuantizerConfig:
    seed: int = 0
    input_dim: int = 320
    code_dim: int = 16
    codebook_size: int = 8192
    # "both": unit projection and codebook rows; "codebook": codebook rows only
    # (same argmin as "both"); "none": plain Euclidean nearest neighbour
    normalization: str = "both"

    def validate(self) -> None:
        if self.input_dim < 1 or self.code_dim < 1 or self.codebook_size < 1:
            raise InvalidConfig(
                f"Quantizer dimensions must be >= 1 (input_dim={self.input_dim}, "
                f"code_dim={self.code_dim}, codebook_size={self.codebook_size})"
            )
        if self.normalization not in ("both", "codebook", "none"):
            raise InvalidConfig(f"Unknown normalization: {self.normalization!r}")


@dataclass(frozen=True)
class PredictorConfig:
    input_dim: int = 320
    hidden_dim: int = 256
    context_radius: int = 1
    codebook_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise InvalidConfig(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_dim < 1:
            raise InvalidConfig(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.context_radius < 0:
            raise InvalidConfig(f"context_radius must be >= 0, got {self.context_radius}")
        if self.codebook_size < 1:
            raise InvalidConfig(f"codebook_size must be >= 1, got {self.codebook_size}")

    @property
    def context_dim(self) -> int:
        return (2 * self.context_radius + 1) * self.input_dim


@dataclass(frozen=True)
class MaskPolicy:
    start_prob: float = 0.15
    span: int = 4
    noise_std: float = 0.1
    noise_mean: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.start_prob <= 1.0:
            raise InvalidConfig(f"start_prob must be in [0, 1], got {self.start_prob}")
        if self.span < 1:
            raise InvalidConfig(f"span must be >= 1, got {self.span}")
        if self.noise_std < 0.0:
            raise InvalidConfig(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.5
    steps: int = 500
    seed: int = 0
    test_fraction: float = 0.25
    # Labelled training utterances per class; 0 uses the whole training split
    labels_per_class: int = 0

    def validate(self) -> None:
        if self.lr <= 0.0:
            raise InvalidConfig(f"probe lr must be > 0, got {self.lr}")
        if self.steps < 0:
            raise InvalidConfig(f"probe steps must be >= 0, got {self.steps}")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidConfig(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.labels_per_class < 0:
            raise InvalidConfig(f"labels_per_class must be >= 0, got {self.labels_per_class}")


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 0.0008
    warmup_steps: int = 1000
    max_batch_seconds: float = 100.0
    steps: int = 300
    checkpoint_every: int = 0
    stack: int = 4
    seed: int = 0
    deterministic: bool = True
    normalize_features: bool = True
    final_window: int = 10
    mask: MaskPolicy = field(default_factory=MaskPolicy)
    quantizer: QuantizerConfig = field(
        default_factory=lambda: QuantizerConfig(codebook_size=64)
    )
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def validate(self) -> None:
        if self.peak_lr <= 0.0:
            raise InvalidConfig(f"peak_lr must be > 0, got {self.peak_lr}")
        if self.max_batch_seconds <= 0.0:
            raise InvalidConfig(
                f"max_batch_seconds must be > 0, got {self.max_batch_seconds}"
            )
        if self.warmup_steps < 0 or self.steps < 0 or self.checkpoint_every < 0:
            raise InvalidConfig("warmup_steps, steps and checkpoint_every must be >= 0")
        if self.stack < 1:
            raise InvalidConfig(f"stack must be >= 1, got {self.stack}")
        if self.final_window < 1:
            raise InvalidConfig(f"final_window must be >= 1, got {self.final_window}")
        self.mask.validate()
        self.quantizer.validate()
        self.predictor.validate()
        self.probe.validate()
        if self.quantizer.codebook_size < 2:
            raise InvalidConfig("Training needs codebook_size >= 2")

    def resolved(self) -> "TrainConfig":
        """Return a copy whose sub-configs agree on dimensions and sub-seeds.

        Feature width follows ``stack``, the predictor's output size follows
        the quantizer's codebook, and both seeds derive from ``seed``.
        """
        from rpq_lab.core.prng import derive_seed

        input_dim = 80 * self.stack
        return replace(
            self,
            quantizer=replace(
                self.quantizer,
                input_dim=input_dim,
                seed=derive_seed(self.seed, "quantizer"),
            ),
            predictor=replace(
                self.predictor,
                input_dim=input_dim,
                codebook_size=self.quantizer.codebook_size,
                seed=derive_seed(self.seed, "predictor"),
            ),
            probe=replace(self.probe, seed=derive_seed(self.seed, "probe")),
        )


@dataclass(frozen=True)
class AblationGrid:
    cells: Tuple[Tuple[float, int], ...]

    def validate(self) -> None:
        if not self.cells:
            raise InvalidGrid("Ablation grid is empty")
        for start_prob, codebook_size in self.cells:
            if not 0.0 <= start_prob <= 1.0:
                raise InvalidGrid(f"start_prob out of [0, 1]: {start_prob}")
            if codebook_size < 2:
                raise InvalidGrid(f"codebook_size must be >= 2: {codebook_size}")

    @classmethod
    def product(cls, start_probs: List[float], codebook_sizes: List[int]) -> "AblationGrid":
        return cls(tuple((p, k) for p in start_probs for k in codebook_sizes))
