"""One prediction block: convolutional encoder, pattern-bank read, siamese
head, and two parallel decoders.

The predicting decoder gets the channel-wise concatenation of the query map
and its bank reconstruction plus encoder skip connections; the reconstructing
decoder gets the reconstructed queries alone and no skip connections, so it
cannot copy its input and its output reflects only what the bank explains.

Every spatial position of the bottleneck feature map is one query of
dimension C (the bottleneck channel count).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .memory import PatternBank

log = logging.getLogger(__name__)


@dataclass
class BlockOutput:
    prediction: Tensor  # (B, 1, H, W)
    reconstruction: Tensor  # (B, K, H, W)
    queries: Tensor  # (B, M, C)
    recon_queries: Tensor  # (B, M, C)
    read_weights: Tensor | None  # (B, M, N)
    embedding: Tensor | None  # (B, D)
    recon_embedding: Tensor | None  # (B, D)
    similarity: Tensor | None  # (B,) cosine of the two embeddings


def cosine_score(f: Tensor, f_hat: Tensor) -> Tensor:
    """Per-sample cosine similarity; a zero-norm side yields score 0."""
    if f.shape != f_hat.shape:
        raise ValueError(f"embedding shapes differ: {tuple(f.shape)} vs {tuple(f_hat.shape)}")
    dot = (f * f_hat).sum(dim=-1)
    norms = f.norm(dim=-1) * f_hat.norm(dim=-1)
    ok = norms > 0
    if not bool(ok.all()):
        log.warning("zero-norm siamese embedding; defining its cosine score as 0")
    out = torch.zeros_like(dot)
    out = torch.where(ok, dot / torch.where(ok, norms, torch.ones_like(norms)), out)
    return out


class SiameseHead(nn.Module):
    """Shared two-layer embedding applied to both query sets."""

    def __init__(self, in_features: int, hidden: int, out_features: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_features, hidden), nn.ReLU(), nn.Linear(hidden, out_features)
        )

    def forward(self, queries: Tensor, recon_queries: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        f = self.net(queries.flatten(1))
        f_hat = self.net(recon_queries.flatten(1))
        return f, f_hat, cosine_score(f, f_hat)


class Encoder(nn.Module):
    """Stride-2 downsampling stages, each followed by ``extra`` same-scale convs."""

    def __init__(self, in_channels: int, widths: list[int], extra: int):
        super().__init__()
        self.stages = nn.ModuleList()
        prev = in_channels
        for w in widths:
            layers = [nn.Conv2d(prev, w, 3, stride=2, padding=1), nn.ReLU()]
            for _ in range(extra):
                layers += [nn.Conv2d(w, w, 3, padding=1), nn.ReLU()]
            self.stages.append(nn.Sequential(*layers))
            prev = w

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        skips = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.stages) - 1:
                skips.append(x)
        return x, skips  # bottleneck, shallower-scale features


class Decoder(nn.Module):
    """Transposed-conv upsampling; optionally concatenates encoder skips."""

    def __init__(self, in_channels: int, widths: list[int], extra: int,
                 out_channels: int, skip_widths: list[int] | None):
        super().__init__()
        self.use_skips = skip_widths is not None
        stage_widths = list(reversed(widths[:-1])) + [widths[0]]
        self.ups = nn.ModuleList()
        self.refines = nn.ModuleList()
        prev = in_channels
        for i, w in enumerate(stage_widths):
            self.ups.append(nn.ConvTranspose2d(prev, w, 4, stride=2, padding=1))
            cur = w
            if self.use_skips and i < len(stage_widths) - 1:
                cur += skip_widths[-(i + 1)]
            refine = []
            for _ in range(extra):
                refine += [nn.Conv2d(cur, w, 3, padding=1), nn.ReLU()]
                cur = w
            self.refines.append(nn.Sequential(*refine))
            prev = cur
        self.out = nn.Conv2d(prev, out_channels, 3, padding=1)

    def forward(self, z: Tensor, skips: list[Tensor] | None = None) -> Tensor:
        x = z
        for i, (up, refine) in enumerate(zip(self.ups, self.refines)):
            x = torch.relu(up(x))
            if self.use_skips and i < len(self.ups) - 1:
                x = torch.cat([x, skips[-(i + 1)]], dim=1)
            x = refine(x)
        return self.out(x)


class Block(nn.Module):
    """Encoder + pattern bank + siamese head + predicting/reconstructing decoders."""

    def __init__(
        self,
        in_channels: int,
        frame_size: tuple[int, int],
        hidden_layers: int,
        pattern_count: int,
        base_channels: int = 32,
        n_scales: int = 3,
        siamese_hidden: int = 256,
        siamese_dim: int = 128,
        memory_kernel: str = "student_t_distance",
        use_memory: bool = True,
        use_siamese: bool = True,
    ):
        super().__init__()
        if hidden_layers % 2 != 0:
            raise ValueError("hidden_layers must be even (encoder/decoder split)")
        per_side = hidden_layers // 2
        if per_side % n_scales != 0:
            raise ValueError(f"hidden_layers={hidden_layers} incompatible with n_scales={n_scales}")
        extra = per_side // n_scales - 1
        h, w = frame_size
        if h % (2**n_scales) or w % (2**n_scales):
            raise ValueError(f"frame size {frame_size} not divisible by 2^{n_scales}")

        widths = [base_channels * 2**i for i in range(n_scales)]
        self.in_channels = in_channels
        self.bottleneck_hw = (h // 2**n_scales, w // 2**n_scales)
        self.query_dim = widths[-1]
        self.query_count = self.bottleneck_hw[0] * self.bottleneck_hw[1]
        self.use_memory = use_memory
        self.use_siamese = use_siamese

        self.encoder = Encoder(in_channels, widths, extra)
        skip_widths = widths[:-1]
        self.predict_decoder = Decoder(
            2 * self.query_dim, widths, extra, out_channels=1, skip_widths=skip_widths
        )
        self.reconstruct_decoder = Decoder(
            self.query_dim, widths, extra, out_channels=in_channels, skip_widths=None
        )
        self.bank = PatternBank(pattern_count, self.query_dim, memory_kernel) if use_memory else None
        self.siamese = (
            SiameseHead(self.query_count * self.query_dim, siamese_hidden, siamese_dim)
            if use_siamese
            else None
        )

    def forward(self, x: Tensor, zero_skips: bool = False) -> BlockOutput:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected input (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        bottleneck, skips = self.encoder(x)
        b, c, hh, ww = bottleneck.shape
        queries = bottleneck.permute(0, 2, 3, 1).reshape(b, hh * ww, c)

        if self.bank is not None:
            recon_queries, weights = self.bank.read(queries)
        else:
            recon_queries, weights = queries, None

        recon_map = recon_queries.reshape(b, hh, ww, c).permute(0, 3, 1, 2)
        if zero_skips:
            skips = [torch.zeros_like(s) for s in skips]
        prediction = self.predict_decoder(torch.cat([bottleneck, recon_map], dim=1), skips)
        reconstruction = self.reconstruct_decoder(recon_map)

        if self.siamese is not None:
            f, f_hat, similarity = self.siamese(queries, recon_queries)
        else:
            f = f_hat = similarity = None
        return BlockOutput(
            prediction=prediction,
            reconstruction=reconstruction,
            queries=queries,
            recon_queries=recon_queries,
            read_weights=weights,
            embedding=f,
            recon_embedding=f_hat,
            similarity=similarity,
        )
