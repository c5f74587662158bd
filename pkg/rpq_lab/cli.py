"""CLI commands for the laboratory.

Every command takes ``--config``, ``--seed`` and ``--out``; artifacts are
written under ``--out`` with fixed file names. ``run`` maps failures to exit
codes: 1 usage, 2 data or config, 3 numeric.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import click
from dotenv import load_dotenv
from tabulate import tabulate

from rpq_lab.config import (
    ABLATION_SEEDS,
    ABLATION_STEPS,
    CORPUS_CLASSES,
    CORPUS_DURATION_RANGE,
    CORPUS_UTTERANCES,
    GRAD_CHECK_FILE,
    MASK_STATS_FILE,
    MASK_STATS_HEADER,
    OUTPUT_DIR,
    REPORT_CODEBOOK_SIZES,
    REPORT_START_PROBS,
    TARGETS_FILE,
    TREND_CODEBOOK_SIZES,
    TREND_START_PROBS,
    load_train_config,
)
from rpq_lab.errors import ConfigError, DataError, NumericError
from rpq_lab.utils import fmt_float, parse_float_list, parse_int_list, write_csv, write_json

logger = logging.getLogger(__name__)

SEED_TYPE = click.IntRange(min=0, max=2 ** 64 - 1)


def common_options(func):
    """Attach the shared --config/--seed/--out flags."""
    func = click.option(
        "--out", "-o", "out", type=click.Path(file_okay=False), default=str(OUTPUT_DIR),
        show_default=True, help="Output directory",
    )(func)
    func = click.option("--seed", type=SEED_TYPE, default=None, help="Run seed (u64)")(func)
    func = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
        help="JSON/YAML run configuration",
    )(func)
    return func


def _list_option(parse):
    """Click callback turning a comma-separated option into a non-empty list."""

    def callback(ctx, param, value):
        if value is None:
            return None
        try:
            values = parse(value)
        except ValueError as e:
            raise click.BadParameter(str(e), ctx=ctx, param=param)
        if not values:
            raise click.BadParameter("expected at least one value", ctx=ctx, param=param)
        return values

    return callback


# ---------------------------------------------------------------------------
# Click CLI Group
# ---------------------------------------------------------------------------

@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
def cli(verbose: bool):
    """Random-projection quantizer pre-training laboratory."""
    load_dotenv()
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

@cli.command("gen-corpus")
@common_options
@click.option("--n-utts", type=int, default=CORPUS_UTTERANCES, show_default=True)
@click.option("--classes", "class_count", type=int, default=CORPUS_CLASSES, show_default=True)
@click.option("--min-duration", type=float, default=CORPUS_DURATION_RANGE[0], show_default=True)
@click.option("--max-duration", type=float, default=CORPUS_DURATION_RANGE[1], show_default=True)
def gen_corpus(config_path, seed, out, n_utts, class_count, min_duration, max_duration):
    """Generate the synthetic tone corpus (WAV + manifest.jsonl + labels.csv)."""
    from rpq_lab.operations.corpus import gen_synthetic_corpus

    config = load_train_config(config_path, seed)
    result = gen_synthetic_corpus(
        out, n_utts, class_count, (min_duration, max_duration), seed=config.seed
    )
    click.echo(f"Corpus written: {len(result.entries)} utterances")
    click.echo(f"  Manifest: {result.manifest_path}")
    click.echo(f"  Labels:   {result.labels_path}")


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------

@cli.command()
@common_options
@click.option("--manifest", "-m", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", type=int, default=None, help="Override the configured step count")
def pretrain(config_path, seed, out, manifest, steps):
    """Run masked-prediction pre-training."""
    from rpq_lab.operations.trainer import Trainer

    config = load_train_config(config_path, seed)
    if steps is not None:
        config = dataclasses.replace(config, steps=steps)
        config.validate()

    trainer = Trainer(config, out)

    def progress(step, total, result):
        if result is not None and (step % 50 == 0 or step == total):
            click.echo(f"  step {step}/{total}  loss {result.loss:.4f}  acc {result.masked_acc:.4f}")

    trainer.set_progress_callback(progress)
    artifacts = trainer.pretrain(manifest)

    click.echo("\nPre-training complete:")
    rows = [
        ["steps", artifacts.steps],
        ["skipped batches", artifacts.skipped_batches],
        ["final masked acc", fmt_float(artifacts.final_masked_acc, 4)],
        ["final loss", fmt_float(artifacts.final_loss, 4)],
        ["utilization entropy", fmt_float(artifacts.util_entropy, 4)],
        ["distinct codes", artifacts.distinct_codes],
    ]
    if artifacts.timing_ms:
        rows.append(["quantize+mask / fwd+bwd", fmt_float(artifacts.timing_ms["ratio"], 3)])
    click.echo(tabulate(rows, tablefmt="simple"))
    click.echo(f"Metrics: {artifacts.metrics_path}")
    for message in artifacts.warnings:
        click.echo(f"Warning: {message}", err=True)


# ---------------------------------------------------------------------------
# Targets and masks
# ---------------------------------------------------------------------------

@cli.command()
@common_options
@click.option("--manifest", "-m", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dump-features", is_flag=True, help="Also write MEL80 dumps per utterance")
def quantize(config_path, seed, out, manifest, dump_features):
    """Write quantizer targets for every utterance to targets.txt."""
    from rpq_lab.core.audio_frontend import FeatureNormalizer, fit_normalizer, stack_frames, write_mel_dump
    from rpq_lab.core.checkpoint import save_quantizer
    from rpq_lab.core.quantizer import codebook_utilization, init_quantizer
    from rpq_lab.core.quantizer import quantize as quantize_features
    from rpq_lab.core.quantizer import write_targets
    from rpq_lab.operations.corpus import read_manifest
    from rpq_lab.operations.trainer import extract_mels

    config = load_train_config(config_path, seed).resolved()
    entries = read_manifest(manifest)
    raw = extract_mels(entries)
    normalizer = fit_normalizer(raw.values()) if config.normalize_features else FeatureNormalizer.identity()
    quantizer = init_quantizer(config.quantizer)

    out_dir = Path(out)
    rows = []
    for entry in entries:
        targets = quantize_features(quantizer, stack_frames(normalizer.apply(raw[entry.id]), config.stack))
        rows.append((entry.id, targets))
        if dump_features:
            write_mel_dump(out_dir / "features" / f"{entry.id}.mel", raw[entry.id])
    path = write_targets(out_dir / TARGETS_FILE, rows)
    save_quantizer(out_dir / "quantizer.brq", quantizer)

    stats = codebook_utilization([t for _, t in rows], quantizer.codebook_size)
    click.echo(tabulate(
        [
            ["utterances", len(rows)],
            ["frames", stats.total],
            ["codebook size", quantizer.codebook_size],
            ["distinct codes", stats.distinct_codes],
            ["normalized entropy", fmt_float(stats.normalized_entropy, 4)],
        ],
        tablefmt="simple",
    ))
    click.echo(f"Targets: {path}")


@cli.command("mask-stats")
@common_options
@click.option("--start-probs", default="0.01,0.05,0.10,0.12,0.15", show_default=True,
              callback=_list_option(parse_float_list))
@click.option("--span", type=int, default=None, help="Span length (default from config)")
@click.option("--n-frames", type=int, default=100_000, show_default=True)
def mask_stats_cmd(config_path, seed, out, start_probs, span, n_frames):
    """Compare analytic and empirical mask coverage."""
    from rpq_lab.core.masking import mask_stats
    from rpq_lab.core.prng import PrngStream

    config = load_train_config(config_path, seed)
    span = span if span is not None else config.mask.span
    rows = []
    for p in start_probs:
        policy = dataclasses.replace(config.mask, start_prob=p, span=span)
        rows.append(mask_stats(policy, n_frames, PrngStream.for_purpose(config.seed, "mask-stats", p)))

    path = write_csv(
        Path(out) / MASK_STATS_FILE,
        MASK_STATS_HEADER,
        [[repr(r.start_prob), r.span, fmt_float(r.analytic_coverage), fmt_float(r.empirical_coverage),
          r.n_frames] for r in rows],
    )
    click.echo(tabulate(
        [[r.start_prob, r.span, fmt_float(r.analytic_coverage, 4), fmt_float(r.empirical_coverage, 4),
          fmt_float(r.nominal_ratio, 4)] for r in rows],
        headers=["start_prob", "span", "analytic", "empirical", "nominal p*span"],
        tablefmt="simple",
    ))
    click.echo(f"Mask stats: {path}")


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

@cli.command("grad-check")
@common_options
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--epsilon", type=float, default=1e-5, show_default=True)
@click.option("--input-dim", type=int, default=6, show_default=True)
@click.option("--hidden-dim", type=int, default=4, show_default=True)
@click.option("--codebook-size", type=int, default=5, show_default=True)
@click.option("--frames", type=int, default=3, show_default=True)
@click.option("--radius", type=int, default=1, show_default=True)
def grad_check_cmd(config_path, seed, out, trials, epsilon, input_dim, hidden_dim, codebook_size,
                   frames, radius):
    """Compare analytic gradients against central finite differences."""
    from rpq_lab.config_models import PredictorConfig
    from rpq_lab.core.predictor import grad_check

    config = load_train_config(config_path, seed)
    predictor = PredictorConfig(
        input_dim=input_dim, hidden_dim=hidden_dim, context_radius=radius,
        codebook_size=codebook_size, seed=config.seed,
    )
    report = grad_check(predictor, n_trials=trials, epsilon=epsilon, seed=config.seed, n_frames=frames)
    path = write_json(Path(out) / GRAD_CHECK_FILE, report.as_dict())

    click.echo(tabulate(
        [[name, f"{err:.3e}"] for name, err in report.per_tensor.items()],
        headers=["tensor", "max rel. error"],
        tablefmt="simple",
    ))
    click.echo(f"Max relative error: {report.max_relative_error:.3e} over {report.coordinates} coordinates")
    click.echo(f"Report: {path}")
    if not report.passed:
        raise NumericError(f"Gradient check failed: max relative error {report.max_relative_error:.3e}")


# ---------------------------------------------------------------------------
# Probe and ablation
# ---------------------------------------------------------------------------

@cli.command()
@common_options
@click.option("--manifest", "-m", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "-l", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "-c", "checkpoints", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False), help="Checkpoint(s) to probe")
@click.option("--seeds", default="0,1,2", show_default=True, callback=_list_option(parse_int_list),
              help="Comma-separated probe seeds")
@click.option("--labels-per-class", type=click.IntRange(min=0), default=None,
              help="Labelled training utterances per class (0 = whole training split)")
def probe(config_path, seed, out, manifest, labels, checkpoints, seeds, labels_per_class):
    """Train a frozen linear probe on one or more checkpoints."""
    from rpq_lab.operations.probe import probe_report

    config = load_train_config(config_path, seed)
    probe_config = config.probe
    if labels_per_class is not None:
        probe_config = dataclasses.replace(probe_config, labels_per_class=labels_per_class)
    report = probe_report(list(checkpoints), manifest, labels, seeds, probe_config, out_dir=out)

    click.echo(tabulate(
        [[r.checkpoint, r.seed, fmt_float(r.train_acc, 4), fmt_float(r.test_acc, 4),
          fmt_float(r.w_h1, 3), fmt_float(r.w_h2, 3)] for r in report.rows],
        headers=["checkpoint", "seed", "train", "test", "w_h1", "w_h2"],
        tablefmt="simple",
    ))
    if len(checkpoints) > 1:
        click.echo("\nMean test accuracy:")
        for ckpt in checkpoints:
            click.echo(f"  {ckpt}: {fmt_float(report.mean_test_acc(str(ckpt)), 4)}")
    click.echo(f"Report: {report.path}")


@cli.command()
@common_options
@click.option("--manifest", "-m", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "-l", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Labels for the per-cell probe (omit to skip probing)")
@click.option("--start-probs", default=None, callback=_list_option(parse_float_list),
              help="Comma-separated start probabilities")
@click.option("--codebook-sizes", default=None, callback=_list_option(parse_int_list),
              help="Comma-separated codebook sizes")
@click.option("--trend", is_flag=True, help="Use the small trend grid instead of the report grid")
@click.option("--steps", type=int, default=ABLATION_STEPS, show_default=True)
@click.option("--n-seeds", type=int, default=ABLATION_SEEDS, show_default=True)
def ablate(config_path, seed, out, manifest, labels, start_probs, codebook_sizes, trend, steps, n_seeds):
    """Sweep masking probability × codebook size."""
    from rpq_lab.config_models import AblationGrid
    from rpq_lab.operations.ablation import ablate as run_ablation

    config = load_train_config(config_path, seed)
    probs, sizes = _grid_axes(start_probs, codebook_sizes, trend)
    grid = AblationGrid.product(probs, sizes)

    def progress(cell):
        click.echo(f"  cell p={cell.start_prob:g} K={cell.codebook_size}: {cell.status}")

    result = run_ablation(
        grid, config, manifest, labels, out, steps=steps, n_seeds=n_seeds,
        with_probe=labels is not None, progress=progress,
    )
    click.echo(tabulate(
        [row[:3] + [row[3], row[9], row[7]] for row in (c.csv_row() for c in result.cells)],
        headers=["start_prob", "K", "status", "masked_acc", "util_entropy", "probe_acc"],
        tablefmt="simple",
    ))
    click.echo(f"Sweep: {result.path}")
    for message in result.warnings:
        click.echo(f"Warning: {message}", err=True)


def _grid_axes(
    start_probs: Optional[List[float]], codebook_sizes: Optional[List[int]], trend: bool
) -> Tuple[List[float], List[int]]:
    probs = start_probs or (TREND_START_PROBS if trend else REPORT_START_PROBS)
    sizes = codebook_sizes or (TREND_CODEBOOK_SIZES if trend else REPORT_CODEBOOK_SIZES)
    return list(probs), list(sizes)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="rpq-lab",
                          standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("Aborted.", err=True)
        return 1
    except (DataError, ConfigError, FileNotFoundError) as e:
        click.echo(f"Error: {e}", err=True)
        return 2
    except NumericError as e:
        click.echo(f"Numeric error: {e}", err=True)
        return 3
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run())
