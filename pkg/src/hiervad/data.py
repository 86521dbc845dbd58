"""Sliding-window sample construction, the RGB-difference motion signal,
and the on-disk dataset layout (one directory of numbered PNG frames per
video plus a JSON sidecar).

Frames are grayscale float arrays in [0, 1]. A video of T frames yields
T - K prediction samples for window length K: sample t covers frames
[t, t+K) and its target is frame t+K.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# event classes allowed as normal at each tolerance degree; degree 2 tolerates
# the second class, degree 3 tolerates the third but not the second
DEFAULT_ALLOWED_CLASSES = {1: frozenset({1}), 2: frozenset({1, 2}), 3: frozenset({1, 3})}


@dataclass
class VideoSample:
    """One prediction sample: an input window and the ground-truth next frame."""

    window: np.ndarray  # (K, H, W) float32 in [0, 1]
    target: np.ndarray  # (H, W)
    stream_tag: str  # "appearance" | "motion"
    video_id: str
    frame_index: int  # sample index t; target frame index is t + K


@dataclass
class Video:
    """A single video: frames plus per-frame object-class annotations."""

    video_id: str
    frames: np.ndarray  # (T, H, W) float32 in [0, 1]
    classes_per_frame: list[list[int]] = field(default_factory=list)
    split: str = "test"  # "train" | "test"
    degree_tag: int = 1

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def labels(self, degree: int, allowed=None) -> np.ndarray:
        """Per-frame binary anomaly labels under a tolerance degree.

        A frame is anomalous iff it contains an object class that the
        degree does not tolerate.
        """
        allowed = allowed or DEFAULT_ALLOWED_CLASSES
        if degree not in allowed:
            raise ValueError(f"unknown tolerance degree {degree}; available: {sorted(allowed)}")
        ok = allowed[degree]
        return np.array(
            [any(c not in ok for c in classes) for classes in self.classes_per_frame],
            dtype=np.int64,
        )


@dataclass
class Dataset:
    """Train videos grouped by tolerance degree, plus a labeled test split."""

    train: dict[int, list[Video]]
    test: list[Video]
    degrees: list[int]
    config: dict = field(default_factory=dict)

    def all_videos(self) -> list[Video]:
        out = [v for vids in self.train.values() for v in vids]
        return out + list(self.test)


def make_windows(video: np.ndarray, window: int, stream_tag: str = "appearance",
                 video_id: str = "") -> list[VideoSample]:
    """Slide a window of length ``window`` over a (T, H, W) video.

    Returns T - window samples; each needs one extra frame as target, so the
    video must have at least window + 1 frames.
    """
    if window < 1:
        raise ValueError("window length must be >= 1")
    n = video.shape[0]
    if n < window + 1:
        raise ValueError(
            f"video has {n} frames but window={window} needs at least {window + 1} "
            "(window plus prediction target)"
        )
    return [
        VideoSample(
            window=video[t : t + window],
            target=video[t + window],
            stream_tag=stream_tag,
            video_id=video_id,
            frame_index=t,
        )
        for t in range(n - window)
    ]


def rgb_difference(video: np.ndarray) -> np.ndarray:
    """Adjacent-frame difference rescaled into [0, 1]; output has T-1 frames.

    diff[n] = (clip(frame[n+1] - frame[n], -1, 1) + 1) / 2, so a static video
    maps to a constant 0.5.
    """
    if video.shape[0] < 2:
        raise ValueError("need at least 2 frames to compute a frame difference")
    diff = np.clip(video[1:] - video[:-1], -1.0, 1.0)
    return ((diff + 1.0) / 2.0).astype(video.dtype)


def save_video(video: Video, directory: Path) -> None:
    """Write numbered 8-bit PNG frames plus the JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        img = Image.fromarray(np.round(frame * 255.0).astype(np.uint8), mode="L")
        img.save(directory / f"{i:04d}.png")
    meta = {
        "video_id": video.video_id,
        "split": video.split,
        "degree_tag": video.degree_tag,
        "n_frames": video.n_frames,
        "classes_per_frame": video.classes_per_frame,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_video(directory: Path) -> Video:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    frames = []
    for i in range(meta["n_frames"]):
        img = Image.open(directory / f"{i:04d}.png")
        frames.append(np.asarray(img, dtype=np.float32) / 255.0)
    return Video(
        video_id=meta["video_id"],
        frames=np.stack(frames),
        classes_per_frame=[list(c) for c in meta["classes_per_frame"]],
        split=meta["split"],
        degree_tag=meta["degree_tag"],
    )


def save_dataset(dataset: Dataset, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    listing: dict = {"train": {}, "test": []}
    for degree, videos in sorted(dataset.train.items()):
        ids = []
        for video in videos:
            save_video(video, out_dir / "train" / f"degree_{degree}" / video.video_id)
            ids.append(video.video_id)
        listing["train"][str(degree)] = ids
    for video in dataset.test:
        save_video(video, out_dir / "test" / video.video_id)
        listing["test"].append(video.video_id)
    top = {
        "degrees": dataset.degrees,
        "config": dataset.config,
        "videos": listing,
    }
    (out_dir / "dataset.json").write_text(json.dumps(top, indent=1, sort_keys=True))


def load_dataset(root: Path) -> Dataset:
    root = Path(root)
    top_path = root / "dataset.json"
    if not top_path.exists():
        raise FileNotFoundError(f"no dataset.json under {root}")
    top = json.loads(top_path.read_text())
    train: dict[int, list[Video]] = {}
    for degree_str, ids in top["videos"]["train"].items():
        degree = int(degree_str)
        train[degree] = [
            load_video(root / "train" / f"degree_{degree}" / vid) for vid in ids
        ]
    test = [load_video(root / "test" / vid) for vid in top["videos"]["test"]]
    return Dataset(train=train, test=test, degrees=list(top["degrees"]), config=top.get("config", {}))
