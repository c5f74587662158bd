"""Small trainable predictor: context window -> tanh -> tanh -> codebook logits.

Per stacked frame t the input is the concatenation of frames t−r … t+r
(zero rows past either edge); h1 = tanh(x W1 + b1), h2 = tanh(h1 W2 + b2),
logits = h2 W_out + b_out. Gradients of the masked cross-entropy are derived
by hand; rows outside the loss mask never contribute.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Tuple, Union

import numpy as np

from rpq_lab.config_models import PredictorConfig
from rpq_lab.core.audio_frontend import StackedFeatures
from rpq_lab.core.prng import PrngStream, derive_seed
from rpq_lab.core.quantizer import TargetSequence, xavier_bound
from rpq_lab.errors import (
    DimensionMismatch,
    EmptyMask,
    InvalidConfig,
    InvalidEpsilon,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

# Checkpoint header order; also the optimizer's update order
TENSOR_NAMES = ("w1", "b1", "w2", "b2", "w_out", "b_out")


@dataclass
class PredictorParams:
    w1: np.ndarray  # ((2r+1)·D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, H)
    b2: np.ndarray  # (H,)
    w_out: np.ndarray  # (H, K)
    b_out: np.ndarray  # (K,)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in TENSOR_NAMES:
            yield name, getattr(self, name)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(self.items())

    @classmethod
    def from_dict(cls, tensors: Dict[str, np.ndarray]) -> "PredictorParams":
        missing = [n for n in TENSOR_NAMES if n not in tensors]
        if missing:
            raise ShapeMismatch(f"Missing tensors: {', '.join(missing)}")
        return cls(**{n: np.asarray(tensors[n], dtype=np.float64) for n in TENSOR_NAMES})

    def copy(self) -> "PredictorParams":
        return PredictorParams(**{n: t.copy() for n, t in self.items()})

    def zeros_like(self) -> "PredictorParams":
        return PredictorParams(**{n: np.zeros_like(t) for n, t in self.items()})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "PredictorParams":
        return PredictorParams(**{n: fn(t) for n, t in self.items()})

    @property
    def input_width(self) -> int:
        return self.w1.shape[0]

    @property
    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.items())


# Gradients share the parameter layout
Gradients = PredictorParams


@dataclass
class Activations:
    context: np.ndarray  # (T', (2r+1)·D)
    h1: np.ndarray
    h2: np.ndarray
    logits: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.logits.shape[0]


@dataclass
class LossResult:
    loss: float
    per_position: np.ndarray  # (T',), zero at unmasked positions
    probs: np.ndarray  # (M, K) softmax of the masked rows
    masked_rows: np.ndarray  # indices of masked positions

    @property
    def n_masked(self) -> int:
        return len(self.masked_rows)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_predictor(config: PredictorConfig) -> PredictorParams:
    """Xavier-uniform weights drawn in order W1, W2, W_out; zero biases."""
    config.validate()
    rng = PrngStream(config.seed)
    d_in, h, k = config.context_dim, config.hidden_dim, config.codebook_size

    def xavier(fan_in: int, fan_out: int) -> np.ndarray:
        bound = xavier_bound(fan_in, fan_out)
        return rng.uniform_symmetric(bound, fan_in * fan_out).reshape(fan_in, fan_out)

    w1 = xavier(d_in, h)
    w2 = xavier(h, h)
    w_out = xavier(h, k)
    return PredictorParams(
        w1=w1, b1=np.zeros(h), w2=w2, b2=np.zeros(h), w_out=w_out, b_out=np.zeros(k),
    )


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def build_context(frames: np.ndarray, radius: int) -> np.ndarray:
    """Rows [t−r … t+r] concatenated, zero-padded at both edges."""
    frames = np.asarray(frames, dtype=np.float64)
    if radius == 0:
        return frames
    n, dim = frames.shape
    padded = np.vstack([np.zeros((radius, dim)), frames, np.zeros((radius, dim))])
    return np.hstack([padded[j: j + n] for j in range(2 * radius + 1)])


def forward_context(params: PredictorParams, context: np.ndarray) -> Activations:
    if context.ndim != 2 or context.shape[1] != params.input_width:
        raise DimensionMismatch(
            f"Context width {context.shape[-1]} does not match W1 rows {params.input_width}"
        )
    h1 = np.tanh(context @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    logits = h2 @ params.w_out + params.b_out
    return Activations(context=context, h1=h1, h2=h2, logits=logits)


def forward(
    params: PredictorParams, feats: Union[StackedFeatures, np.ndarray], radius: int
) -> Activations:
    """Per-frame logits over the codebook; params and feats are not modified."""
    frames = feats.frames if isinstance(feats, StackedFeatures) else np.asarray(feats)
    if radius < 0:
        raise InvalidConfig(f"context_radius must be >= 0, got {radius}")
    if frames.ndim != 2 or (2 * radius + 1) * frames.shape[1] != params.input_width:
        raise DimensionMismatch(
            f"Feature dim {frames.shape[-1]} with radius {radius} does not match "
            f"W1 rows {params.input_width}"
        )
    return forward_context(params, build_context(frames, radius))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _target_array(targets: Union[TargetSequence, np.ndarray]) -> np.ndarray:
    indices = targets.indices if isinstance(targets, TargetSequence) else targets
    return np.asarray(indices, dtype=np.int64)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def masked_ce_loss(
    logits: np.ndarray,
    targets: Union[TargetSequence, np.ndarray],
    loss_mask: np.ndarray,
) -> LossResult:
    """Mean of −ln softmax(logits)[target] over masked positions only."""
    indices = _target_array(targets)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    if not (logits.shape[0] == len(indices) == len(loss_mask)):
        raise ShapeMismatch(
            f"logits rows {logits.shape[0]}, targets {len(indices)}, mask {len(loss_mask)}"
        )
    rows = np.flatnonzero(loss_mask)
    if len(rows) == 0:
        raise EmptyMask("No masked positions")

    z = logits[rows]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    losses = log_norm - shifted[np.arange(len(rows)), indices[rows]]
    per_position = np.zeros(len(loss_mask))
    per_position[rows] = losses
    probs = np.exp(shifted - log_norm[:, None])
    return LossResult(
        loss=float(losses.mean()), per_position=per_position, probs=probs, masked_rows=rows,
    )


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def logit_gradient(
    logits: np.ndarray, targets: Union[TargetSequence, np.ndarray], loss_mask: np.ndarray
) -> np.ndarray:
    """dL/dlogits: (softmax − onehot)/M on masked rows, zero elsewhere."""
    result = masked_ce_loss(logits, targets, loss_mask)
    indices = _target_array(targets)
    dlogits = np.zeros_like(logits)
    grad_rows = result.probs.copy()
    grad_rows[np.arange(result.n_masked), indices[result.masked_rows]] -= 1.0
    dlogits[result.masked_rows] = grad_rows / result.n_masked
    return dlogits


def backward_context(
    params: PredictorParams,
    activations: Activations,
    targets: Union[TargetSequence, np.ndarray],
    loss_mask: np.ndarray,
) -> Gradients:
    """Exact gradients; only masked rows enter the products, in ascending order."""
    indices = _target_array(targets)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    if activations.n_frames != len(indices) or activations.n_frames != len(loss_mask):
        raise ShapeMismatch(
            f"Activations cover {activations.n_frames} frames, targets {len(indices)}, "
            f"mask {len(loss_mask)}"
        )
    dlogits_full = logit_gradient(activations.logits, indices, loss_mask)
    rows = np.flatnonzero(loss_mask)

    dlogits = dlogits_full[rows]
    h1 = activations.h1[rows]
    h2 = activations.h2[rows]
    x = activations.context[rows]

    d_w_out = h2.T @ dlogits
    d_b_out = dlogits.sum(axis=0)
    dz2 = (dlogits @ params.w_out.T) * (1.0 - h2 * h2)
    d_w2 = h1.T @ dz2
    d_b2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.w2.T) * (1.0 - h1 * h1)
    d_w1 = x.T @ dz1
    d_b1 = dz1.sum(axis=0)
    return PredictorParams(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2, w_out=d_w_out, b_out=d_b_out)


def backward(
    params: PredictorParams,
    feats: Union[StackedFeatures, np.ndarray],
    activations: Activations,
    targets: Union[TargetSequence, np.ndarray],
    loss_mask: np.ndarray,
) -> Gradients:
    frames = feats.frames if isinstance(feats, StackedFeatures) else np.asarray(feats)
    if frames.shape[0] != activations.n_frames:
        raise ShapeMismatch(
            f"Features have {frames.shape[0]} frames, activations {activations.n_frames}"
        )
    return backward_context(params, activations, targets, loss_mask)


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    per_tensor: Dict[str, float]
    trials: int
    epsilon: float
    coordinates: int
    trial_errors: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < 1e-4

    def as_dict(self) -> Dict[str, object]:
        return {
            "max_relative_error": self.max_relative_error,
            "per_tensor": dict(self.per_tensor),
            "trials": self.trials,
            "epsilon": self.epsilon,
            "coordinates": self.coordinates,
            "trial_errors": list(self.trial_errors),
            "passed": self.passed,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def _loss_at(params: PredictorParams, context: np.ndarray, targets, loss_mask) -> float:
    return masked_ce_loss(forward_context(params, context).logits, targets, loss_mask).loss


def grad_check(
    config: PredictorConfig,
    n_trials: int = 10,
    epsilon: float = 1e-5,
    seed: int = 0,
    n_frames: int = 3,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on random instances.

    Every parameter coordinate is perturbed by ±epsilon; the relative error is
    |a − f| / max(|a|, |f|, 1e-8).
    """
    if not epsilon > 0.0:
        raise InvalidEpsilon(f"epsilon must be > 0, got {epsilon}")
    config.validate()
    total = (
        config.context_dim * config.hidden_dim + config.hidden_dim
        + config.hidden_dim * config.hidden_dim + config.hidden_dim
        + config.hidden_dim * config.codebook_size + config.codebook_size
    )
    if total > 10_000:
        raise InvalidConfig(f"Gradient check limited to 10^4 parameters, config has {total}")

    per_tensor = {name: 0.0 for name in TENSOR_NAMES}
    trial_errors: List[float] = []
    coordinates = 0
    for trial in range(n_trials):
        rng = PrngStream(derive_seed(seed, "grad_check", trial))
        params = init_predictor(config).map(lambda t: rng.normal(t.size, std=0.3).reshape(t.shape))
        feats = rng.normal(n_frames * config.input_dim).reshape(n_frames, config.input_dim)
        targets = (rng.uniform(n_frames) * config.codebook_size).astype(np.int64)
        loss_mask = rng.uniform(n_frames) < 0.5
        if not loss_mask.any():
            loss_mask[int(rng.uniform() * n_frames)] = True

        context = build_context(feats, config.context_radius)
        grads = backward_context(params, forward_context(params, context), targets, loss_mask)

        worst = 0.0
        for name, tensor in params.items():
            analytic = getattr(grads, name)
            numeric = np.zeros_like(tensor)
            flat = tensor.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + epsilon
                plus = _loss_at(params, context, targets, loss_mask)
                flat[i] = original - epsilon
                minus = _loss_at(params, context, targets, loss_mask)
                flat[i] = original
                numeric.reshape(-1)[i] = (plus - minus) / (2.0 * epsilon)
            err = float(relative_error(analytic, numeric).max())
            per_tensor[name] = max(per_tensor[name], err)
            worst = max(worst, err)
            coordinates += flat.size
        trial_errors.append(worst)
        logger.debug("grad check trial %d: max relative error %.3e", trial, worst)

    return GradCheckReport(
        max_relative_error=max(trial_errors) if trial_errors else 0.0,
        per_tensor=per_tensor,
        trials=n_trials,
        epsilon=epsilon,
        coordinates=coordinates,
        trial_errors=trial_errors,
    )
