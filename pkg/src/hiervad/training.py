"""Losses and the training loops.

The batch loss is prediction + lambda_d * diversity + lambda_s * siamese.
Prediction is the summed per-sample L2 distance between the integrated
stream prediction and its target. Diversity acts on pattern banks of
different blocks; the default hinge form pushes inter-block patterns apart
up to a margin (the printed positive-sign form is kept behind the
``literal`` mode flag). The siamese term is the negated cosine similarity.

Pattern banks take one attention write per batch, after the read. The
progressive protocol trains stacks phase by phase: earlier stacks keep
running in the forward pass but their parameters are frozen and their banks
are no longer written.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor

from .config import ArchitectureSpec
from .data import Video, rgb_difference
from .hierarchy import StreamOutput, VideoAnomalyModel

log = logging.getLogger(__name__)

DIVERSITY_MODES = ("hinge_negative", "literal")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossConfig:
    lambda_diversity: float = 0.13
    lambda_siamese: float = 0.28
    diversity_margin: float = 1.0
    diversity_mode: str = "hinge_negative"
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 10

    def validate(self) -> None:
        if self.lambda_diversity < 0 or self.lambda_siamese < 0:
            raise ValueError("loss weights must be >= 0")
        if self.diversity_mode not in DIVERSITY_MODES:
            raise ValueError(f"diversity_mode must be one of {DIVERSITY_MODES}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class LossBreakdown:
    total: float
    prediction: float
    diversity: float
    siamese: float


def prediction_loss(predictions: Tensor, targets: Tensor) -> Tensor:
    """Sum over the batch of per-sample Euclidean norms of the difference."""
    if predictions.shape != targets.shape:
        raise ValueError(
            f"prediction shape {tuple(predictions.shape)} != target shape {tuple(targets.shape)}"
        )
    return (predictions - targets).flatten(1).norm(dim=1).sum()


def diversity_loss(
    banks: Sequence[Tensor],
    mode: str = "hinge_negative",
    margin: float = 1.0,
) -> Tensor:
    """Mean over ordered inter-block pattern pairs.

    hinge_negative: mean(max(0, margin - ||k - k'||)), so minimizing spreads
    the banks apart. literal: mean(||k - k'||) exactly as the positive-sign
    formula reads.
    """
    if mode not in DIVERSITY_MODES:
        raise ValueError(f"diversity_mode must be one of {DIVERSITY_MODES}")
    if len(banks) < 2:
        log.warning("diversity loss needs patterns from >= 2 blocks; returning 0")
        dtype = banks[0].dtype if banks else torch.get_default_dtype()
        return torch.zeros((), dtype=dtype)
    stacked = torch.cat(list(banks), dim=0)
    block_of = torch.cat(
        [torch.full((b.shape[0],), i, dtype=torch.long) for i, b in enumerate(banks)]
    )
    diff = stacked.unsqueeze(1) - stacked.unsqueeze(0)
    dist = torch.sqrt(diff.pow(2).sum(-1) + 1e-12)
    inter = block_of.unsqueeze(1) != block_of.unsqueeze(0)
    dists = dist[inter]
    if mode == "hinge_negative":
        return torch.clamp(margin - dists, min=0).mean()
    return dists.mean()


def siamese_loss(similarity: Tensor | float) -> Tensor | float:
    """Negated cosine similarity."""
    return -similarity


def batch_losses(
    model: VideoAnomalyModel,
    inputs: dict[str, Tensor],
    targets: dict[str, Tensor],
    cfg: LossConfig,
    masks: dict[str, list[bool]] | None = None,
) -> tuple[Tensor, LossBreakdown, dict[str, StreamOutput]]:
    """Total loss for one batch plus its parts and the stream outputs."""
    outputs = model.forward(inputs, masks=masks)
    pred = None
    similarities = []
    banks = []
    for name, out in outputs.items():
        term = prediction_loss(out.prediction, targets[name])
        pred = term if pred is None else pred + term
        for _, _, block_out in out.block_outputs:
            if block_out.similarity is not None:
                similarities.append(block_out.similarity.mean())
    masks = masks or {name: model.masks_for(name) for name in outputs}
    for name in outputs:
        stream = model.streams[name]
        for stack_idx, stack in enumerate(stream.stacks):
            if masks[name][stack_idx]:
                continue
            for block in stack.blocks:
                if block.bank is not None:
                    banks.append(block.bank.patterns)

    total = pred
    div_value = 0.0
    if cfg.lambda_diversity > 0 and len(banks) >= 2:
        div = diversity_loss(banks, cfg.diversity_mode, cfg.diversity_margin)
        total = total + cfg.lambda_diversity * div
        div_value = float(div.detach())
    siam_value = 0.0
    if cfg.lambda_siamese > 0 and similarities:
        siam = siamese_loss(torch.stack(similarities).mean())
        total = total + cfg.lambda_siamese * siam
        siam_value = float(siam.detach())
    breakdown = LossBreakdown(float(total.detach()), float(pred.detach()), div_value, siam_value)
    return total, breakdown, outputs


@dataclass
class TrainSamples:
    """Aligned per-stream window/target arrays; row s of every array is one sample."""

    inputs: dict[str, np.ndarray]  # stream -> (S, K, H, W) float32
    targets: dict[str, np.ndarray]  # stream -> (S, 1, H, W)

    @property
    def count(self) -> int:
        return next(iter(self.inputs.values())).shape[0]


def build_training_samples(videos: Sequence[Video], spec: ArchitectureSpec) -> TrainSamples:
    """Sliding windows for every active stream, aligned on the target frame.

    The motion stream works on frame differences, so its usable range starts
    one frame later; the joint range keeps both streams pointed at the same
    target frame index.
    """
    names = list(spec.streams)
    inputs: dict[str, list[np.ndarray]] = {n: [] for n in names}
    targets: dict[str, list[np.ndarray]] = {n: [] for n in names}
    for video in videos:
        frames = video.frames
        diffs = rgb_difference(frames) if "motion" in names else None
        start, stop = scoreable_range(spec, frames.shape[0])
        for f in range(start, stop):
            if "appearance" in names:
                k = spec.window
                inputs["appearance"].append(frames[f - k : f])
                targets["appearance"].append(frames[f : f + 1])
            if "motion" in names:
                k = spec.motion_window
                inputs["motion"].append(diffs[f - 1 - k : f - 1])
                targets["motion"].append(diffs[f - 1 : f])
    if not any(len(v) for v in inputs.values()):
        raise ValueError("no training samples; videos shorter than the window requirement")
    return TrainSamples(
        inputs={n: np.stack(v).astype(np.float32) for n, v in inputs.items()},
        targets={n: np.stack(v).astype(np.float32) for n, v in targets.items()},
    )


def scoreable_range(spec: ArchitectureSpec, n_frames: int) -> tuple[int, int]:
    """Target-frame index range [start, stop) jointly reachable by all streams."""
    start = 0
    if "appearance" in spec.streams:
        start = max(start, spec.window)
    if "motion" in spec.streams:
        start = max(start, spec.motion_window + 1)
    if n_frames <= start:
        raise ValueError(f"video of {n_frames} frames too short; need > {start}")
    return start, n_frames


def train(
    model: VideoAnomalyModel,
    samples: TrainSamples,
    cfg: LossConfig,
    seed: int = 0,
    metrics_path: str | Path | None = None,
    diagnostics_dir: str | Path | None = None,
    masks: dict[str, list[bool]] | None = None,
    train_stacks: dict[str, set[int]] | None = None,
    epoch_callback: Callable[[int], None] | None = None,
) -> list[LossBreakdown]:
    """Minibatch optimization of the composite loss; one bank write per batch.

    ``masks`` restricts the forward pass; ``train_stacks`` restricts which
    stacks' banks get attention writes (parameter freezing is expressed via
    requires_grad before calling). Deterministic for a fixed seed.
    """
    cfg.validate()
    if samples.count == 0:
        raise ValueError("empty training set")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValueError("no trainable parameters")
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    model.zero_grad(set_to_none=True)  # frozen stacks keep no stale gradients
    dtype = next(model.parameters()).dtype

    writer = None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        metrics_file = metrics_path.open("w", newline="")
        writer = csv.writer(metrics_file)
        writer.writerow(["epoch", "total", "prediction", "diversity", "siamese"])

    history: list[LossBreakdown] = []
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(samples.count)
            sums = np.zeros(4)
            n_batches = 0
            for lo in range(0, samples.count, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                inputs = {
                    n: torch.from_numpy(v[idx]).to(dtype) for n, v in samples.inputs.items()
                }
                targets = {
                    n: torch.from_numpy(v[idx]).to(dtype) for n, v in samples.targets.items()
                }
                total, parts, outputs = batch_losses(model, inputs, targets, cfg, masks)
                if not torch.isfinite(total):
                    path = _dump_diagnostics(diagnostics_dir, epoch, n_batches, parts)
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} batch {n_batches}; diagnostics: {path}"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                _write_banks(model, outputs, masks, train_stacks)
                sums += [parts.total, parts.prediction, parts.diversity, parts.siamese]
                n_batches += 1
            breakdown = LossBreakdown(*(float(v) for v in sums / n_batches))
            history.append(breakdown)
            log.info(
                "epoch %d: total=%.4f pred=%.4f div=%.4f siam=%.4f",
                epoch, breakdown.total, breakdown.prediction, breakdown.diversity,
                breakdown.siamese,
            )
            if writer is not None:
                writer.writerow(
                    [epoch, breakdown.total, breakdown.prediction, breakdown.diversity,
                     breakdown.siamese]
                )
                metrics_file.flush()
            if epoch_callback is not None:
                epoch_callback(epoch)
    finally:
        if writer is not None:
            metrics_file.close()
    return history


def _write_banks(model, outputs, masks, train_stacks):
    """One attention write per trainable block, using this batch's queries."""
    for name, out in outputs.items():
        allowed = None if train_stacks is None else train_stacks.get(name, set())
        stream = model.streams[name]
        for stack_idx, block_idx, block_out in out.block_outputs:
            if allowed is not None and stack_idx not in allowed:
                continue
            block = stream.stacks[stack_idx].blocks[block_idx]
            if block.bank is not None:
                block.bank.write(block_out.queries.detach())


def _dump_diagnostics(diagnostics_dir, epoch, batch, parts: LossBreakdown) -> Path:
    directory = Path(diagnostics_dir) if diagnostics_dir else Path.cwd()
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "divergence_diagnostics.json"
    path.write_text(
        json.dumps(
            {
                "epoch": epoch,
                "batch": batch,
                "total": parts.total,
                "prediction": parts.prediction,
                "diversity": parts.diversity,
                "siamese": parts.siamese,
            },
            indent=1,
        )
    )
    return path


@dataclass
class Phase:
    degree: int
    train_stacks: tuple[int, ...]


@dataclass
class PhaseRecord:
    degree: int
    train_stacks: list[int]
    active_stacks: list[int]
    epochs: int
    final_loss: float


def default_schedule(spec: ArchitectureSpec) -> list[Phase]:
    """One phase per tolerance degree; each trains the stacks that degree adds."""
    phases = []
    seen: set[int] = set()
    for degree in sorted(spec.tolerance_map):
        active = set(spec.tolerance_map[degree])
        new = tuple(sorted(active - seen))
        if new:
            phases.append(Phase(degree=degree, train_stacks=new))
        seen |= active
    return phases


def train_progressive(
    model: VideoAnomalyModel,
    datasets: dict[int, TrainSamples],
    schedule: Sequence[Phase],
    cfg: LossConfig,
    seed: int = 0,
    metrics_dir: str | Path | None = None,
    epoch_callback: Callable[[int, int], None] | None = None,
) -> list[PhaseRecord]:
    """Phase-by-phase training: new stacks learn on their degree's normal data
    while previously trained stacks stay forward-active but frozen.

    Masked (not yet trained) downstream stacks are bypassed entirely. A fresh
    optimizer is created per phase; frozen banks take no writes.
    """
    spec = model.spec
    records: list[PhaseRecord] = []
    for phase_idx, phase in enumerate(schedule):
        if phase.degree not in spec.tolerance_map:
            raise ValueError(f"schedule references unknown degree {phase.degree}")
        if phase.degree not in datasets:
            raise ValueError(f"no training samples tagged for degree {phase.degree}")
        active = set(spec.tolerance_map[phase.degree])
        if not set(phase.train_stacks) <= active:
            raise ValueError(
                f"phase trains stacks {phase.train_stacks} outside degree "
                f"{phase.degree}'s activation set {sorted(active)}"
            )
        masks = {
            name: [i not in active for i in range(len(stream.stacks))]
            for name, stream in spec.streams.items()
        }
        train_stacks = {name: set(phase.train_stacks) for name in spec.streams}
        for name, stream in model.streams.items():
            for stack_idx, stack in enumerate(stream.stacks):
                requires = stack_idx in train_stacks[name]
                for p in stack.parameters():
                    p.requires_grad_(requires)
        metrics_path = (
            Path(metrics_dir) / f"metrics_phase{phase_idx + 1}_degree{phase.degree}.csv"
            if metrics_dir
            else None
        )
        callback = (
            (lambda epoch, pi=phase_idx: epoch_callback(pi, epoch)) if epoch_callback else None
        )
        history = train(
            model,
            datasets[phase.degree],
            cfg,
            seed=seed + phase_idx,
            metrics_path=metrics_path,
            diagnostics_dir=metrics_dir,
            masks=masks,
            train_stacks=train_stacks,
            epoch_callback=callback,
        )
        records.append(
            PhaseRecord(
                degree=phase.degree,
                train_stacks=sorted(phase.train_stacks),
                active_stacks=sorted(active),
                epochs=cfg.epochs,
                final_loss=history[-1].total,
            )
        )
    for p in model.parameters():
        p.requires_grad_(True)
    return records
