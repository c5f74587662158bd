"""Pipeline operations built on the core numerics."""

from rpq_lab.operations.corpus import gen_synthetic_corpus, dynamic_batches
from rpq_lab.operations.trainer import Trainer, pretrain
from rpq_lab.operations.probe import train_probe, evaluate_probe, probe_report
from rpq_lab.operations.ablation import ablate

__all__ = [
    "gen_synthetic_corpus", "dynamic_batches",
    "Trainer", "pretrain",
    "train_probe", "evaluate_probe", "probe_report",
    "ablate",
]
