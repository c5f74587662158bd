"""Desk-scale laboratory for random-projection-quantizer speech pre-training.

This package provides:
- A log-Mel front end with frame stacking
- A frozen random-projection quantizer producing discrete targets
- Span masking with noise infill
- A small predictor network with hand-derived gradients
- A deterministic pre-training loop, frozen-feature probe and ablation sweep
"""

__version__ = "1.0.0"
