"""Frame-level anomaly scoring and evaluation.

The raw score of a frame is the PSNR-style quantity
10*log10(P * max(prediction) / ||prediction - target||^2), evaluated exactly
in that form by default (P is the pixel count); a ``conventional`` flag
squares the peak term instead. PSNR is min-max normalized per video and the
anomaly score is its complement, so higher means more anomalous. Frame-level
AUC uses average ranks for ties (Mann-Whitney).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import Video
from .hierarchy import VideoAnomalyModel, fuse_streams
from .training import scoreable_range

log = logging.getLogger(__name__)

PSNR_FORMULAS = ("paper", "conventional")


def psnr_score(prediction: np.ndarray, target: np.ndarray, formula: str = "paper") -> float:
    """Raw PSNR of one predicted frame against its ground truth."""
    if formula not in PSNR_FORMULAS:
        raise ValueError(f"formula must be one of {PSNR_FORMULAS}")
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(
            f"prediction shape {prediction.shape} != target shape {target.shape}"
        )
    peak = float(prediction.max())
    if peak <= 0.0:
        log.warning("non-positive prediction peak; flooring at 1e-8 for the score")
        peak = 1e-8
    if formula == "conventional":
        peak = peak**2
    err = float(np.sum((prediction - target) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(prediction.size * peak / err)


def normalize_scores(raw: Sequence[float]) -> np.ndarray:
    """Per-video min-max normalization of PSNR, flipped into anomaly scores.

    Infinite PSNR values (perfect predictions) are clamped to the video's
    finite maximum first. A constant series normalizes to all 0.5.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size < 2:
        raise ValueError("need at least 2 scores to normalize a video")
    finite = raw[np.isfinite(raw)]
    if finite.size == 0:
        raise ValueError("no finite scores in the series")
    clamped = np.where(np.isinf(raw), finite.max(), raw)
    lo, hi = clamped.min(), clamped.max()
    if hi == lo:
        log.warning("constant score series; emitting 0.5 everywhere")
        return np.full_like(clamped, 0.5)
    return 1.0 - (clamped - lo) / (hi - lo)


@dataclass
class ScoreSeries:
    """Per-frame scores of one video over its scoreable range."""

    video_id: str
    frame_indices: np.ndarray  # target frame index of each entry
    raw_psnr: dict[str, np.ndarray]  # per stream
    scores: np.ndarray  # fused anomaly scores in [0, 1]
    labels: np.ndarray | None = None

    def primary_psnr(self) -> np.ndarray:
        if "appearance" in self.raw_psnr:
            return self.raw_psnr["appearance"]
        return next(iter(self.raw_psnr.values()))


def frame_auc(series: Sequence[ScoreSeries] | tuple[np.ndarray, np.ndarray]) -> float:
    """ROC AUC of concatenated per-video scores against labels.

    Accepts a list of ScoreSeries or a raw (scores, labels) pair. Ties get
    the rank-average treatment.
    """
    if isinstance(series, tuple):
        scores, labels = series
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
    else:
        for s in series:
            if s.labels is None:
                raise ValueError(f"series {s.video_id} has no labels")
        scores = np.concatenate([s.scores for s in series])
        labels = np.concatenate([s.labels for s in series]).astype(np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"degenerate split: {n_pos} positive / {n_neg} negative frames; "
            "AUC needs both classes"
        )
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def score_video(
    model: VideoAnomalyModel,
    video: Video,
    degree: int | None = None,
    formula: str = "paper",
    batch_size: int = 64,
) -> ScoreSeries:
    """Score every jointly reachable frame of one video.

    The model's current stack masks apply; no bank writes happen. If a
    tolerance degree is given, its labels are attached.
    """
    from .training import build_training_samples

    spec = model.spec
    start, stop = scoreable_range(spec, video.n_frames)
    samples = build_training_samples([video], spec)
    dtype = next(model.parameters()).dtype

    raw: dict[str, list[float]] = {name: [] for name in spec.streams}
    model.eval()
    with torch.no_grad():
        for lo in range(0, samples.count, batch_size):
            inputs = {
                n: torch.from_numpy(v[lo : lo + batch_size]).to(dtype)
                for n, v in samples.inputs.items()
            }
            outputs = model.forward(inputs)
            for name, out in outputs.items():
                preds = out.prediction.cpu().numpy()
                targets = samples.targets[name][lo : lo + batch_size]
                for i in range(preds.shape[0]):
                    raw[name].append(psnr_score(preds[i], targets[i], formula))

    per_stream = {name: np.asarray(vals) for name, vals in raw.items()}
    normalized = {name: normalize_scores(vals) for name, vals in per_stream.items()}
    if len(normalized) == 2:
        scores = fuse_streams(
            normalized["appearance"], normalized["motion"], spec.fusion_weights
        )
    else:
        scores = next(iter(normalized.values()))
    labels = video.labels(degree)[start:stop] if degree is not None else None
    return ScoreSeries(
        video_id=video.video_id,
        frame_indices=np.arange(start, stop),
        raw_psnr=per_stream,
        scores=scores,
        labels=labels,
    )


def evaluate(
    model: VideoAnomalyModel,
    videos: Sequence[Video],
    degree: int | None = None,
    formula: str = "paper",
) -> tuple[list[ScoreSeries], dict]:
    """Score a collection of videos and summarize frame-level AUC.

    The summary carries the AUC under the requested degree's labeling plus,
    when degree tags exist, the AUC of the same scores under every other
    available degree labeling (degenerate labelings are reported as null).
    """
    series = [score_video(model, v, degree=degree, formula=formula) for v in videos]
    summary: dict = {
        "tolerance": degree,
        "active_stacks": {
            name: [i for i, m in enumerate(model.masks_for(name)) if not m]
            for name in model.streams
        },
        "config_hash": model.spec.config_hash(),
        "psnr_formula": formula,
        "n_videos": len(videos),
        "n_frames": int(sum(s.scores.size for s in series)),
    }
    if degree is not None:
        try:
            summary["auc"] = frame_auc(series)
        except ValueError as exc:
            summary["auc"] = None
            summary["auc_note"] = str(exc)
        per_degree = {}
        for d in sorted(model.spec.tolerance_map):
            try:
                labeled = [
                    ScoreSeries(s.video_id, s.frame_indices, s.raw_psnr, s.scores,
                                v.labels(d)[s.frame_indices[0] : s.frame_indices[-1] + 1])
                    for s, v in zip(series, videos)
                ]
                per_degree[str(d)] = frame_auc(labeled)
            except ValueError as exc:
                per_degree[str(d)] = None
                log.info("per-degree AUC %s skipped: %s", d, exc)
        summary["per_degree_auc"] = per_degree
    return series, summary


def export_csv(series: ScoreSeries, path: str | Path) -> None:
    """frame_index, raw_psnr, anomaly_score, label rows for one video."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    psnr = series.primary_psnr()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "raw_psnr", "anomaly_score", "label"])
        for i, frame in enumerate(series.frame_indices):
            label = "" if series.labels is None else int(series.labels[i])
            writer.writerow([int(frame), f"{psnr[i]:.6f}", f"{series.scores[i]:.6f}", label])


def plot_series(series: ScoreSeries, path: str | Path) -> None:
    """Anomaly-score curve with ground-truth anomaly spans shaded."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(series.frame_indices, series.scores, lw=1.2, label="anomaly score")
    if series.labels is not None:
        for lo, hi in _runs(series.labels):
            ax.axvspan(series.frame_indices[lo], series.frame_indices[hi], color="red",
                       alpha=0.2, lw=0)
    ax.set_xlabel("frame")
    ax.set_ylabel("anomaly score")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(series.video_id)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _runs(labels: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, v in enumerate(labels):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(labels) - 1))
    return runs


def write_summary(summary: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=1, sort_keys=True))
