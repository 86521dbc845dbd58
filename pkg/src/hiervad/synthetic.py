"""Synthetic labeled videos: moving shapes on a static background.

Object classes map to tolerance degrees: class 1 squares are always normal,
class 2 circles play the role of the first tolerated event type, class 3
triangles the second. Training videos for degree d contain squares plus
class-d objects for the whole clip; test videos contain squares throughout
plus one timed event per configured event class. Faster classes get faster
motion so both the appearance and the motion stream see a signal.

Everything is driven by one numpy Generator, so a given seed reproduces the
dataset bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import Dataset, Video

CLASS_SQUARE, CLASS_CIRCLE, CLASS_TRIANGLE = 1, 2, 3
CLASS_SPEED = {CLASS_SQUARE: 0.8, CLASS_CIRCLE: 1.6, CLASS_TRIANGLE: 2.2}
CLASS_SIZE = {CLASS_SQUARE: 5, CLASS_CIRCLE: 6, CLASS_TRIANGLE: 7}


@dataclass
class GeneratorConfig:
    canvas: tuple[int, int] = (64, 64)
    frames_per_video: int = 100
    train_videos: dict[int, int] = field(default_factory=lambda: {1: 20, 2: 10, 3: 10})
    test_videos: int = 10
    degrees: int = 3
    squares_per_video: tuple[int, int] = (1, 2)  # inclusive range
    event_classes: tuple[int, ...] = (CLASS_CIRCLE, CLASS_TRIANGLE)
    event_frames: int = 30
    noise: float = 0.02
    seed: int = 7

    def validate(self) -> None:
        if self.degrees < 1:
            raise ValueError("need at least one object class (degrees >= 1)")
        if self.frames_per_video < 2:
            raise ValueError("frames_per_video must be >= 2")
        if min(self.canvas) < 4 * max(CLASS_SIZE.values()):
            raise ValueError(f"canvas {self.canvas} too small for the object sizes")
        for cls in self.event_classes:
            if cls > self.degrees:
                raise ValueError(f"event class {cls} exceeds degrees={self.degrees}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_videos"] = {str(k): v for k, v in self.train_videos.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "canvas" in d:
            d["canvas"] = tuple(d["canvas"])
        if "train_videos" in d:
            d["train_videos"] = {int(k): int(v) for k, v in d["train_videos"].items()}
        if "event_classes" in d:
            d["event_classes"] = tuple(d["event_classes"])
        if "squares_per_video" in d:
            d["squares_per_video"] = tuple(d["squares_per_video"])
        return cls(**d)


@dataclass
class MovingObject:
    cls: int
    x: float
    y: float
    vx: float
    vy: float
    intensity: float
    start: int  # first frame the object exists
    stop: int  # one past the last frame


def generate_synthetic(config: GeneratorConfig, seed: int | None = None) -> Dataset:
    """Deterministically generate the train (per degree) and test splits."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    background = _background(config.canvas)

    train: dict[int, list[Video]] = {}
    for degree in range(1, config.degrees + 1):
        count = config.train_videos.get(degree, 0)
        videos = []
        for i in range(count):
            videos.append(
                _train_video(config, rng, background, degree, f"train_d{degree}_{i:03d}")
            )
        if videos:
            train[degree] = videos

    test = [
        _test_video(config, rng, background, f"test_{i:03d}")
        for i in range(config.test_videos)
    ]
    return Dataset(
        train=train,
        test=test,
        degrees=list(range(1, config.degrees + 1)),
        config=config.to_dict(),
    )


def _train_video(config, rng, background, degree, video_id) -> Video:
    t = config.frames_per_video
    objects = _spawn_squares(config, rng, t)
    if degree > 1:
        for _ in range(int(rng.integers(1, 3))):
            objects.append(_spawn(config, rng, degree, 0, t))
    frames, classes = _render(config, rng, background, objects)
    return Video(video_id, frames, classes, split="train", degree_tag=degree)


def _test_video(config, rng, background, video_id) -> Video:
    t = config.frames_per_video
    objects = _spawn_squares(config, rng, t)
    n_events = len(config.event_classes)
    for slot, cls in enumerate(config.event_classes):
        lo, hi = _event_slot(t, n_events, slot, config.event_frames)
        start = int(rng.integers(lo, hi + 1))
        objects.append(_spawn(config, rng, cls, start, start + config.event_frames))
    frames, classes = _render(config, rng, background, objects)
    degree_tag = max((o.cls for o in objects), default=1)
    return Video(video_id, frames, classes, split="test", degree_tag=degree_tag)


def _event_slot(total, n_events, slot, length):
    """Start-frame range for event ``slot`` so the event windows stay disjoint."""
    pad = 3
    span = total // n_events
    lo = slot * span + pad
    hi = (slot + 1) * span - length - pad
    if hi < lo:
        raise ValueError(
            f"frames_per_video={total} too short for {n_events} events of {length} frames"
        )
    return lo, hi


def _spawn_squares(config, rng, t) -> list[MovingObject]:
    lo, hi = config.squares_per_video
    return [_spawn(config, rng, CLASS_SQUARE, 0, t) for _ in range(int(rng.integers(lo, hi + 1)))]


def _spawn(config, rng, cls, start, stop) -> MovingObject:
    h, w = config.canvas
    size = CLASS_SIZE[cls]
    x = float(rng.uniform(size + 1, w - size - 2))
    y = float(rng.uniform(size + 1, h - size - 2))
    angle = float(rng.uniform(0, 2 * math.pi))
    speed = CLASS_SPEED[cls]
    return MovingObject(
        cls=cls,
        x=x,
        y=y,
        vx=speed * math.cos(angle),
        vy=speed * math.sin(angle),
        intensity=float(rng.uniform(0.55, 0.95)),
        start=start,
        stop=stop,
    )


def _render(config, rng, background, objects):
    h, w = config.canvas
    t = config.frames_per_video
    frames = np.empty((t, h, w), dtype=np.float32)
    classes_per_frame: list[list[int]] = []
    for frame_idx in range(t):
        frame = background.copy()
        present: set[int] = set()
        for obj in objects:
            if obj.start <= frame_idx < obj.stop:
                _draw(frame, obj)
                present.add(obj.cls)
            _advance(obj, h, w)
        if config.noise > 0:
            frame = frame + rng.normal(0.0, config.noise, size=frame.shape)
        frames[frame_idx] = np.clip(frame, 0.0, 1.0)
        classes_per_frame.append(sorted(present))
    return frames, classes_per_frame


def _advance(obj: MovingObject, h: int, w: int) -> None:
    size = CLASS_SIZE[obj.cls]
    obj.x += obj.vx
    obj.y += obj.vy
    if obj.x < size or obj.x > w - 1 - size:
        obj.vx = -obj.vx
        obj.x = float(np.clip(obj.x, size, w - 1 - size))
    if obj.y < size or obj.y > h - 1 - size:
        obj.vy = -obj.vy
        obj.y = float(np.clip(obj.y, size, h - 1 - size))


def _background(canvas) -> np.ndarray:
    h, w = canvas
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    return (0.08 + 0.10 * (0.5 * xx + 0.5 * yy)).astype(np.float32)


def _draw(frame: np.ndarray, obj: MovingObject) -> None:
    h, w = frame.shape
    cx, cy, size = int(round(obj.x)), int(round(obj.y)), CLASS_SIZE[obj.cls]
    y0, y1 = max(0, cy - size), min(h - 1, cy + size)
    x0, x1 = max(0, cx - size), min(w - 1, cx + size)
    yy, xx = np.meshgrid(np.arange(y0, y1 + 1), np.arange(x0, x1 + 1), indexing="ij")
    if obj.cls == CLASS_SQUARE:
        mask = (np.abs(yy - cy) <= size - 1) & (np.abs(xx - cx) <= size - 1)
    elif obj.cls == CLASS_CIRCLE:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= size**2
    elif obj.cls == CLASS_TRIANGLE:
        # upward triangle: apex at the top, width growing linearly to the base
        rel = (yy - (cy - size)) / (2 * size)  # 0 at apex, 1 at base
        mask = (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= rel * size)
    else:
        raise ValueError(f"unknown object class {obj.cls}")
    region = frame[y0 : y1 + 1, x0 : x1 + 1]
    region[mask] = np.maximum(region[mask], obj.intensity)
