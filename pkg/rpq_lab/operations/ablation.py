"""Masking-probability × codebook-size sweep."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

from rpq_lab.config import ABLATION_SEEDS, SWEEP_FILE, SWEEP_HEADER
from rpq_lab.config_models import AblationGrid, TrainConfig
from rpq_lab.core.prng import derive_seed
from rpq_lab.errors import LabError
from rpq_lab.operations.probe import probe_report
from rpq_lab.operations.trainer import Trainer
from rpq_lab.utils import fmt_float, mean_std, write_csv

logger = logging.getLogger(__name__)


@dataclass
class CellResult:
    start_prob: float
    codebook_size: int
    masked_acc: List[float] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    probe_acc: List[float] = field(default_factory=list)
    util_entropy: List[float] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "failed" if self.errors else "ok"

    @property
    def n_seeds(self) -> int:
        return len(self.masked_acc)

    def csv_row(self) -> List[str]:
        row = [repr(self.start_prob), str(self.codebook_size), self.status]
        for values in (self.masked_acc, self.loss, self.probe_acc, self.util_entropy):
            mean, std = mean_std(values)
            row += [fmt_float(mean), fmt_float(std)]
        row += [str(self.n_seeds), "; ".join(self.errors)]
        return row


@dataclass
class SweepResult:
    """Result of an ablation sweep."""

    success: bool
    path: Optional[Path]
    cells: List[CellResult] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def cell(self, start_prob: float, codebook_size: int) -> CellResult:
        for cell in self.cells:
            if cell.start_prob == start_prob and cell.codebook_size == codebook_size:
                return cell
        raise KeyError((start_prob, codebook_size))


def cell_seed(base_seed: int, start_prob: float, codebook_size: int, repeat: int) -> int:
    """Sub-seed that depends only on the cell, never on its position in the grid."""
    return derive_seed(base_seed, "cell", float(start_prob), int(codebook_size), int(repeat))


def cell_config(base: TrainConfig, start_prob: float, codebook_size: int, repeat: int, steps: int) -> TrainConfig:
    return dataclasses.replace(
        base,
        seed=cell_seed(base.seed, start_prob, codebook_size, repeat),
        steps=steps,
        checkpoint_every=0,
        mask=dataclasses.replace(base.mask, start_prob=start_prob),
        quantizer=dataclasses.replace(base.quantizer, codebook_size=codebook_size),
    )


def _cell_dir(out_dir: Path, start_prob: float, codebook_size: int, repeat: int) -> Path:
    return out_dir / "cells" / f"p{start_prob:g}_k{codebook_size}" / f"seed{repeat}"


def ablate(
    grid: AblationGrid,
    base_config: TrainConfig,
    manifest_path,
    labels_path,
    out_dir,
    steps: int,
    n_seeds: int = ABLATION_SEEDS,
    with_probe: bool = True,
    progress: Optional[Callable[[CellResult], None]] = None,
) -> SweepResult:
    """Train every grid cell under *n_seeds* seeds and write ``sweep.csv``.

    A cell whose run raises a lab error is marked failed; the sweep goes on.

    Raises:
        InvalidGrid: empty grid or out-of-range cell values
    """
    grid.validate()
    out_dir = Path(out_dir)
    result = SweepResult(success=False, path=None)

    for start_prob, codebook_size in grid.cells:
        cell = CellResult(start_prob=start_prob, codebook_size=codebook_size)
        for repeat in range(n_seeds):
            config = cell_config(base_config, start_prob, codebook_size, repeat, steps)
            run_dir = _cell_dir(out_dir, start_prob, codebook_size, repeat)
            try:
                artifacts = Trainer(config, run_dir).pretrain(manifest_path)
                probe_acc = float("nan")
                if with_probe and labels_path is not None:
                    report = probe_report(
                        [artifacts.final_checkpoint], manifest_path, labels_path,
                        [config.seed], config.probe,
                    )
                    probe_acc = report.rows[0].test_acc
            except LabError as e:
                message = f"seed {repeat}: {type(e).__name__}: {e}"
                logger.warning("Cell p=%g K=%d failed (%s)", start_prob, codebook_size, message)
                cell.errors.append(message)
                continue
            cell.masked_acc.append(artifacts.final_masked_acc)
            cell.loss.append(artifacts.final_loss)
            cell.probe_acc.append(probe_acc)
            cell.util_entropy.append(artifacts.util_entropy)
        result.cells.append(cell)
        if cell.errors:
            result.warnings.extend(f"p={start_prob:g} K={codebook_size} {e}" for e in cell.errors)
        logger.info(
            "Cell p=%g K=%d: acc=%s util=%s (%s)",
            start_prob, codebook_size, fmt_float(mean_std(cell.masked_acc)[0], 4),
            fmt_float(mean_std(cell.util_entropy)[0], 4), cell.status,
        )
        if progress:
            progress(cell)

    result.path = write_csv(out_dir / SWEEP_FILE, SWEEP_HEADER, [c.csv_row() for c in result.cells])
    result.success = True
    return result
