"""Declarative architecture description: streams -> stacks -> blocks.

Block size classes fix the (hidden layer count, pattern count) pair:
s -> (6, 50), m -> (12, 50), l -> (18, 100). Hidden layers are split evenly
between the encoder and each decoder. Stacks carry a tolerance-degree tag and
a mask bit; the tolerance map says which stack indices are active at each
evaluation degree.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

SIZE_CLASSES = {"s": (6, 50), "m": (12, 50), "l": (18, 100)}
STREAM_NAMES = ("appearance", "motion")


@dataclass(frozen=True)
class BlockSpec:
    size_class: str | None = "s"
    hidden_layers: int | None = None  # overrides the class default
    pattern_count: int | None = None

    def resolve(self) -> tuple[int, int]:
        """Return (hidden_layers, pattern_count) with class defaults applied."""
        if self.size_class is not None:
            if self.size_class not in SIZE_CLASSES:
                raise ValueError(f"unknown size class {self.size_class!r}")
            default_layers, default_patterns = SIZE_CLASSES[self.size_class]
        else:
            default_layers = default_patterns = None
        layers = self.hidden_layers if self.hidden_layers is not None else default_layers
        patterns = self.pattern_count if self.pattern_count is not None else default_patterns
        if layers is None or patterns is None:
            raise ValueError("block needs a size_class or explicit hidden_layers and pattern_count")
        return layers, patterns


@dataclass(frozen=True)
class StackSpec:
    blocks: tuple[BlockSpec, ...]
    degree: int = 1
    masked: bool = False


@dataclass(frozen=True)
class StreamSpec:
    stacks: tuple[StackSpec, ...]


@dataclass
class ArchitectureSpec:
    streams: dict[str, StreamSpec]
    frame_size: tuple[int, int] = (64, 64)
    window: int = 4  # appearance window length
    motion_window: int = 4
    base_channels: int = 32
    n_scales: int = 3
    siamese_hidden: int = 256
    siamese_dim: int = 128
    memory_kernel: str = "student_t_distance"
    use_memory: bool = True
    use_siamese: bool = True
    fusion_weights: dict[str, float] = field(
        default_factory=lambda: {"appearance": 0.5, "motion": 0.5}
    )
    tolerance_map: dict[int, tuple[int, ...]] = field(default_factory=lambda: {1: (0,)})

    def validate(self) -> None:
        if not self.streams:
            raise ValueError("no streams configured")
        for name, stream in self.streams.items():
            if name not in STREAM_NAMES:
                raise ValueError(f"unknown stream {name!r}; expected one of {STREAM_NAMES}")
            if not stream.stacks:
                raise ValueError(f"stream {name!r} has no stacks")
            if all(stack.masked for stack in stream.stacks):
                raise ValueError(f"stream {name!r} has every stack masked")
            for stack in stream.stacks:
                if not stack.blocks:
                    raise ValueError("stack with no blocks")
                for block in stack.blocks:
                    layers, _ = block.resolve()
                    if layers % 2 != 0:
                        raise ValueError(f"hidden_layers={layers} must split evenly across encoder/decoder")
                    if (layers // 2) % self.n_scales != 0:
                        raise ValueError(
                            f"hidden_layers={layers} not compatible with n_scales={self.n_scales}"
                        )
        h, w = self.frame_size
        if h % (2**self.n_scales) or w % (2**self.n_scales):
            raise ValueError(f"frame_size {self.frame_size} not divisible by 2^{self.n_scales}")
        active = [n for n in self.streams]
        weight_sum = sum(self.fusion_weights.get(n, 0.0) for n in active)
        if len(active) > 1 and abs(weight_sum - 1.0) > 1e-6:
            raise ValueError(f"fusion weights over active streams must sum to 1, got {weight_sum}")
        for degree, stacks in self.tolerance_map.items():
            for name, stream in self.streams.items():
                for idx in stacks:
                    if idx < 0 or idx >= len(stream.stacks):
                        raise ValueError(
                            f"tolerance degree {degree} references stack {idx} missing from stream {name!r}"
                        )

    def window_for(self, stream: str) -> int:
        return self.window if stream == "appearance" else self.motion_window

    def total_patterns(self, stream: str = "appearance") -> int:
        return sum(
            block.resolve()[1]
            for stack in self.streams[stream].stacks
            for block in stack.blocks
        )

    def to_dict(self) -> dict:
        return {
            "streams": {
                name: {
                    "stacks": [
                        {
                            "degree": stack.degree,
                            "masked": stack.masked,
                            "blocks": [
                                {
                                    "size_class": b.size_class,
                                    "hidden_layers": b.hidden_layers,
                                    "pattern_count": b.pattern_count,
                                }
                                for b in stack.blocks
                            ],
                        }
                        for stack in stream.stacks
                    ]
                }
                for name, stream in self.streams.items()
            },
            "frame_size": list(self.frame_size),
            "window": self.window,
            "motion_window": self.motion_window,
            "base_channels": self.base_channels,
            "n_scales": self.n_scales,
            "siamese_hidden": self.siamese_hidden,
            "siamese_dim": self.siamese_dim,
            "memory_kernel": self.memory_kernel,
            "use_memory": self.use_memory,
            "use_siamese": self.use_siamese,
            "fusion_weights": dict(self.fusion_weights),
            "tolerance_map": {str(k): list(v) for k, v in self.tolerance_map.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        streams = {
            name: StreamSpec(
                stacks=tuple(
                    StackSpec(
                        blocks=tuple(BlockSpec(**b) for b in stack["blocks"]),
                        degree=stack.get("degree", 1),
                        masked=stack.get("masked", False),
                    )
                    for stack in s["stacks"]
                )
            )
            for name, s in d["streams"].items()
        }
        spec = cls(
            streams=streams,
            frame_size=tuple(d.get("frame_size", (64, 64))),
            window=d.get("window", 4),
            motion_window=d.get("motion_window", 4),
            base_channels=d.get("base_channels", 32),
            n_scales=d.get("n_scales", 3),
            siamese_hidden=d.get("siamese_hidden", 256),
            siamese_dim=d.get("siamese_dim", 128),
            memory_kernel=d.get("memory_kernel", "student_t_distance"),
            use_memory=d.get("use_memory", True),
            use_siamese=d.get("use_siamese", True),
            fusion_weights=dict(d.get("fusion_weights", {"appearance": 0.5, "motion": 0.5})),
            tolerance_map={
                int(k): tuple(v) for k, v in d.get("tolerance_map", {"1": [0]}).items()
            },
        )
        spec.validate()
        return spec

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_masks(self, masks: dict[str, tuple[bool, ...]]) -> "ArchitectureSpec":
        """Copy of the spec with per-stream stack mask bits replaced."""
        streams = {}
        for name, stream in self.streams.items():
            bits = masks.get(name)
            if bits is None:
                streams[name] = stream
                continue
            if len(bits) != len(stream.stacks):
                raise ValueError(f"mask length {len(bits)} != stack count for stream {name!r}")
            streams[name] = StreamSpec(
                stacks=tuple(
                    replace(stack, masked=bit) for stack, bit in zip(stream.stacks, bits)
                )
            )
        out = replace(self, streams=streams)
        out.validate()
        return out
