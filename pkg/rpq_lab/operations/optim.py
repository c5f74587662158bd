"""Learning-rate schedule and Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rpq_lab.config_models import TrainConfig
from rpq_lab.core.predictor import Gradients, PredictorParams
from rpq_lab.errors import NonFiniteGradient, ShapeMismatch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-8


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` over ``warmup_steps``, constant afterwards."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if config.warmup_steps == 0:
        return config.peak_lr
    return config.peak_lr * min(1.0, step / config.warmup_steps)


@dataclass
class AdamState:
    m: PredictorParams
    v: PredictorParams
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros_like(cls, params: PredictorParams) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_step(
    params: PredictorParams, grads: Gradients, state: AdamState, lr: float
) -> PredictorParams:
    """Return updated params; *state* moments and counter advance in place.

    Tensors update in checkpoint order. Any non-finite gradient aborts the
    step before anything changes.

    Raises:
        NonFiniteGradient: NaN or Inf anywhere in *grads*
        ShapeMismatch: a gradient shape differs from its parameter
    """
    for name, grad in grads.items():
        if grad.shape != getattr(params, name).shape:
            raise ShapeMismatch(
                f"Gradient '{name}' has shape {grad.shape}, expected {getattr(params, name).shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"Non-finite gradient in '{name}' at update {state.step + 1}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    updated = {}
    for name, param in params.items():
        grad = getattr(grads, name)
        m = state.beta1 * getattr(state.m, name) + (1.0 - state.beta1) * grad
        v = state.beta2 * getattr(state.v, name) + (1.0 - state.beta2) * grad * grad
        setattr(state.m, name, m)
        setattr(state.v, name, v)
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return PredictorParams(**updated)
