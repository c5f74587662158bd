"""Core numerics: PRNG, front end, quantizer, masking, predictor and checkpoints."""

from rpq_lab.core.prng import PrngStream, derive_seed
from rpq_lab.core.audio_frontend import load_wav, log_mel_spectrogram, stack_frames
from rpq_lab.core.quantizer import init_quantizer, quantize, codebook_utilization
from rpq_lab.core.masking import sample_mask, apply_mask, reduce_mask
from rpq_lab.core.predictor import init_predictor, forward, masked_ce_loss, backward, grad_check
from rpq_lab.core.checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "PrngStream", "derive_seed",
    "load_wav", "log_mel_spectrogram", "stack_frames",
    "init_quantizer", "quantize", "codebook_utilization",
    "sample_mask", "apply_mask", "reduce_mask",
    "init_predictor", "forward", "masked_ce_loss", "backward", "grad_check",
    "save_checkpoint", "load_checkpoint",
]
