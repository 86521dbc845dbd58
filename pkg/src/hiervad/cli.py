"""Command-line surface: gen-data, train, eval, and score.

Every failure exits nonzero with a one-line JSON reason on stderr. Missing
input files exit with code 2 and name the path.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import torch

from . import checkpoint as ckpt
from . import scoring
from .data import load_dataset, load_video, save_dataset
from .hierarchy import VideoAnomalyModel
from .presets import PRESET_NAMES, load_spec, preset
from .synthetic import GeneratorConfig, generate_synthetic
from .training import (
    LossConfig,
    Phase,
    build_training_samples,
    default_schedule,
    train,
    train_progressive,
)

log = logging.getLogger(__name__)


def fail(message: str, code: int = 1, **extra) -> None:
    print(json.dumps({"error": message, **extra}), file=sys.stderr)
    sys.exit(code)


def reporting_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SystemExit, click.ClickException, click.Abort):
            raise
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            fail(str(exc), kind=type(exc).__name__)

    return wrapper


def require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        fail(f"{what} not found: {p}", code=2, path=str(p))
    return p


@click.group()
@click.option("--verbose", is_flag=True, help="log at DEBUG level")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("gen-data")
@click.option("--config", "config_path", required=True, help="generator config JSON")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="output directory")
@click.option("--seed", type=int, default=None, help="override the config seed")
@reporting_errors
def cmd_gen_data(config_path: str, out_dir: str, seed: int | None) -> None:
    """Generate a synthetic labeled dataset on disk."""
    path = require_file(config_path, "generator config")
    config = GeneratorConfig.from_dict(json.loads(path.read_text()))
    dataset = generate_synthetic(config, seed=seed)
    save_dataset(dataset, Path(out_dir))
    counts = {f"degree_{d}": len(v) for d, v in dataset.train.items()}
    click.echo(
        json.dumps(
            {"out": str(out_dir), "train": counts, "test": len(dataset.test),
             "degrees": dataset.degrees}
        )
    )


@main.command("train")
@click.option("--preset", "preset_name", type=click.Choice(PRESET_NAMES), default=None)
@click.option("--config", "config_path", default=None, help="architecture config JSON")
@click.option("--data", "data_dir", required=True, help="dataset directory")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="output directory")
@click.option("--seed", type=int, default=0)
@click.option("--epochs", type=int, default=10)
@click.option("--batch-size", type=int, default=8)
@click.option("--lr", type=float, default=1e-4)
@click.option("--lambda-diversity", type=float, default=0.13)
@click.option("--lambda-siamese", type=float, default=0.28)
@click.option("--diversity-margin", type=float, default=1.0)
@click.option("--diversity-mode", type=click.Choice(["hinge_negative", "literal"]),
              default="hinge_negative")
@click.option("--degrees", default=None,
              help="comma-separated degrees for progressive training, e.g. 1,2,3")
@click.option("--train-degree", type=int, default=1,
              help="training split degree for a plain (non-progressive) run")
@click.option("--kernel", type=click.Choice(["student_t_distance", "literal_dot"]),
              default=None, help="override the attention kernel")
@click.option("--no-memory", is_flag=True, help="ablation: disable pattern banks")
@click.option("--no-siamese", is_flag=True, help="ablation: disable the siamese head")
@reporting_errors
def cmd_train(
    preset_name, config_path, data_dir, out_dir, seed, epochs, batch_size, lr,
    lambda_diversity, lambda_siamese, diversity_margin, diversity_mode, degrees,
    train_degree, kernel, no_memory, no_siamese,
) -> None:
    """Train a model (plain or progressive) and write checkpoint plus metrics."""
    if (preset_name is None) == (config_path is None):
        fail("pass exactly one of --preset or --config", code=2)
    if config_path is not None:
        spec = load_spec(require_file(config_path, "architecture config"))
    else:
        spec = preset(preset_name)
    if kernel is not None:
        spec.memory_kernel = kernel
    if no_memory:
        spec.use_memory = False
    if no_siamese:
        spec.use_siamese = False
        lambda_siamese = 0.0
    if no_memory:
        lambda_diversity = 0.0

    dataset = load_dataset(require_file(data_dir, "dataset directory"))
    cfg = LossConfig(
        lambda_diversity=lambda_diversity,
        lambda_siamese=lambda_siamese,
        diversity_margin=diversity_margin,
        diversity_mode=diversity_mode,
        learning_rate=lr,
        batch_size=batch_size,
        epochs=epochs,
    )
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(seed)
    model = VideoAnomalyModel(spec)
    history = []

    def periodic(_epoch: int) -> None:
        ckpt.save_checkpoint(model, out / "last.pt", loss_config=cfg,
                             phase_history=history, seed=seed)

    if degrees:
        wanted = [int(d) for d in degrees.split(",")]
        schedule = [p for p in default_schedule(spec) if p.degree in wanted]
        missing = set(wanted) - {p.degree for p in schedule}
        if missing:
            fail(f"degrees {sorted(missing)} not in the architecture tolerance map", code=2)
        datasets = {}
        for phase in schedule:
            if phase.degree not in dataset.train:
                fail(f"dataset has no training split for degree {phase.degree}", code=2)
            datasets[phase.degree] = build_training_samples(dataset.train[phase.degree], spec)
        history = train_progressive(
            model, datasets, schedule, cfg, seed=seed, metrics_dir=out,
            epoch_callback=lambda _p, _e: periodic(_e),
        )
    else:
        if train_degree not in dataset.train:
            fail(f"dataset has no training split for degree {train_degree}", code=2)
        samples = build_training_samples(dataset.train[train_degree], spec)
        train(
            model, samples, cfg, seed=seed, metrics_path=out / "metrics.csv",
            diagnostics_dir=out, epoch_callback=periodic,
        )
    ckpt.save_checkpoint(model, out / "checkpoint.pt", loss_config=cfg,
                         phase_history=history, seed=seed)
    click.echo(json.dumps({"checkpoint": str(out / "checkpoint.pt")}))


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True)
@click.option("--data", "data_dir", required=True)
@click.option("--tolerance", type=int, default=None, help="tolerance degree to evaluate at")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--psnr", "psnr_formula", type=click.Choice(["paper", "conventional"]),
              default="paper")
@reporting_errors
def cmd_eval(checkpoint_path, data_dir, tolerance, out_dir, psnr_formula) -> None:
    """Score the test split, write per-video CSVs, plots, and a summary JSON."""
    model, _payload = ckpt.load_checkpoint(require_file(checkpoint_path, "checkpoint"))
    dataset = load_dataset(require_file(data_dir, "dataset directory"))
    degree = tolerance
    if degree is not None:
        model.apply_tolerance(degree)
    else:
        degree = min(model.spec.tolerance_map)
        model.apply_tolerance(degree)
    out = Path(out_dir)
    series, summary = scoring.evaluate(model, dataset.test, degree=degree,
                                       formula=psnr_formula)
    for s in series:
        scoring.export_csv(s, out / "scores" / f"{s.video_id}.csv")
        scoring.plot_series(s, out / "plots" / f"{s.video_id}.png")
    scoring.write_summary(summary, out / "summary.json")
    click.echo(json.dumps({"auc": summary.get("auc"), "summary": str(out / "summary.json")}))


@main.command("score")
@click.option("--checkpoint", "checkpoint_path", required=True)
@click.option("--video", "video_dir", required=True, help="one video directory")
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--tolerance", type=int, default=None)
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@reporting_errors
def cmd_score(checkpoint_path, video_dir, out_csv, tolerance, plot_path) -> None:
    """Score a single video and write its per-frame CSV (and optional plot)."""
    model, _payload = ckpt.load_checkpoint(require_file(checkpoint_path, "checkpoint"))
    video = load_video(require_file(video_dir, "video directory"))
    if tolerance is not None:
        model.apply_tolerance(tolerance)
    series = scoring.score_video(model, video, degree=tolerance)
    scoring.export_csv(series, out_csv)
    if plot_path:
        scoring.plot_series(series, plot_path)
    click.echo(json.dumps({"csv": str(out_csv), "frames": int(series.scores.size)}))


if __name__ == "__main__":
    main()
