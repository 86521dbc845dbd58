"""Checkpoint persistence: architecture spec, all parameters (pattern banks
included), training phase history, and a format version checked on load."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .config import ArchitectureSpec
from .hierarchy import VideoAnomalyModel
from .training import LossConfig, PhaseRecord

FORMAT_VERSION = 1


def save_checkpoint(
    model: VideoAnomalyModel,
    path: str | Path,
    loss_config: LossConfig | None = None,
    phase_history: list[PhaseRecord] | None = None,
    seed: int | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "arch": model.spec.to_dict(),
        "state": model.state_dict(),
        "loss_config": loss_config.to_dict() if loss_config else None,
        "phase_history": [asdict(r) for r in (phase_history or [])],
        "seed": seed,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[VideoAnomalyModel, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    spec = ArchitectureSpec.from_dict(payload["arch"])
    model = VideoAnomalyModel(spec)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload
