"""Blocks chained into stacks and stacks into streams.

Each block receives the running residual and hands the next block what it
could not reconstruct (input minus reconstruction); block predictions are
summed into stack predictions and stack predictions into the stream
prediction. Masked stacks are bypassed completely: they neither transform
the residual nor contribute predictions. Stream score series are fused by a
convex weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from torch import Tensor, nn

from .blocks import Block, BlockOutput
from .config import ArchitectureSpec, StackSpec, StreamSpec

STACK_MASKED_ALL = "every stack of the stream is masked; nothing left to run"


@dataclass
class StreamOutput:
    prediction: Tensor  # (B, 1, H, W) sum of all active block predictions
    stack_predictions: list[Tensor | None]  # per stack; None when masked
    block_outputs: list[tuple[int, int, BlockOutput]]  # (stack idx, block idx, output)
    final_residual: Tensor  # input minus every active reconstruction


class Stack(nn.Module):
    def __init__(self, blocks: list[Block], degree: int):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)
        self.degree = degree


class Stream(nn.Module):
    def __init__(self, stacks: list[Stack]):
        super().__init__()
        self.stacks = nn.ModuleList(stacks)

    def forward(self, x: Tensor, masked: list[bool]) -> StreamOutput:
        if len(masked) != len(self.stacks):
            raise ValueError("mask list does not match stack count")
        if all(masked):
            raise ValueError(STACK_MASKED_ALL)
        residual = x
        prediction = None
        stack_predictions: list[Tensor | None] = []
        outputs: list[tuple[int, int, BlockOutput]] = []
        for stack_idx, stack in enumerate(self.stacks):
            if masked[stack_idx]:
                stack_predictions.append(None)
                continue
            stack_pred = None
            for block_idx, block in enumerate(stack.blocks):
                out = block(residual)
                residual = residual - out.reconstruction
                stack_pred = out.prediction if stack_pred is None else stack_pred + out.prediction
                outputs.append((stack_idx, block_idx, out))
            stack_predictions.append(stack_pred)
            prediction = stack_pred if prediction is None else prediction + stack_pred
        return StreamOutput(
            prediction=prediction,
            stack_predictions=stack_predictions,
            block_outputs=outputs,
            final_residual=residual,
        )


class VideoAnomalyModel(nn.Module):
    """Two-stream hierarchy built from an ArchitectureSpec."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        streams = {}
        for name, stream_spec in spec.streams.items():
            stacks = []
            for stack_spec in stream_spec.stacks:
                blocks = []
                for block_spec in stack_spec.blocks:
                    layers, patterns = block_spec.resolve()
                    blocks.append(
                        Block(
                            in_channels=spec.window_for(name),
                            frame_size=spec.frame_size,
                            hidden_layers=layers,
                            pattern_count=patterns,
                            base_channels=spec.base_channels,
                            n_scales=spec.n_scales,
                            siamese_hidden=spec.siamese_hidden,
                            siamese_dim=spec.siamese_dim,
                            memory_kernel=spec.memory_kernel,
                            use_memory=spec.use_memory,
                            use_siamese=spec.use_siamese,
                        )
                    )
                stacks.append(Stack(blocks, stack_spec.degree))
            streams[name] = Stream(stacks)
        self.streams = nn.ModuleDict(streams)

    def masks_for(self, name: str) -> list[bool]:
        return [stack.masked for stack in self.spec.streams[name].stacks]

    def forward(
        self,
        inputs: dict[str, Tensor],
        masks: dict[str, list[bool]] | None = None,
    ) -> dict[str, StreamOutput]:
        out = {}
        for name, x in inputs.items():
            if name not in self.streams:
                raise ValueError(f"model has no stream {name!r}")
            masked = masks[name] if masks is not None else self.masks_for(name)
            out[name] = self.streams[name](x, masked)
        return out

    def apply_tolerance(self, degree: int) -> None:
        self.spec = set_tolerance(self.spec, degree)

    def blocks_of(self, name: str, stack_idx: int) -> list[Block]:
        return list(self.streams[name].stacks[stack_idx].blocks)

    def iter_blocks(self, only_unmasked: bool = False):
        for name, stream in self.streams.items():
            masked = self.masks_for(name)
            for stack_idx, stack in enumerate(stream.stacks):
                if only_unmasked and masked[stack_idx]:
                    continue
                for block_idx, block in enumerate(stack.blocks):
                    yield name, stack_idx, block_idx, block


def set_tolerance(spec: ArchitectureSpec, degree: int) -> ArchitectureSpec:
    """New spec with exactly the degree's activation set unmasked."""
    if degree not in spec.tolerance_map:
        raise ValueError(
            f"unknown tolerance degree {degree}; available: {sorted(spec.tolerance_map)}"
        )
    active = set(spec.tolerance_map[degree])
    masks = {
        name: tuple(i not in active for i in range(len(stream.stacks)))
        for name, stream in spec.streams.items()
    }
    return spec.with_masks(masks)


def fuse_streams(appearance: np.ndarray, motion: np.ndarray, weights: dict[str, float]) -> np.ndarray:
    """Convex weighted sum of two aligned per-frame score series."""
    appearance = np.asarray(appearance, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    if appearance.shape != motion.shape:
        raise ValueError(
            f"misaligned series: {appearance.shape} vs {motion.shape}; "
            "offset-correct the motion series first"
        )
    w_a = weights.get("appearance", 0.0)
    w_m = weights.get("motion", 0.0)
    if abs(w_a + w_m - 1.0) > 1e-6:
        raise ValueError(f"fusion weights must sum to 1, got {w_a} + {w_m}")
    return w_a * appearance + w_m * motion


def build_spec(
    stream_blocks: dict[str, list[list[str]]],
    degrees: dict[int, tuple[int, ...]] | None = None,
    **kwargs,
) -> ArchitectureSpec:
    """Convenience constructor: size-class letters -> full spec.

    ``stream_blocks`` maps stream name to a list of stacks, each a list of
    size-class letters, e.g. {"appearance": [["s", "s"], ["s"]]}.
    """
    from .config import BlockSpec

    streams = {}
    for name, stacks in stream_blocks.items():
        streams[name] = StreamSpec(
            stacks=tuple(
                StackSpec(
                    blocks=tuple(BlockSpec(size_class=c) for c in stack),
                    degree=i + 1,
                )
                for i, stack in enumerate(stacks)
            )
        )
    spec = ArchitectureSpec(
        streams=streams,
        tolerance_map=degrees or {1: tuple(range(len(next(iter(stream_blocks.values())))))},
        **kwargs,
    )
    spec.validate()
    return spec
