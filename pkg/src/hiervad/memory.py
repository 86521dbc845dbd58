"""Normal-pattern bank: attention read of queries against stored patterns,
and attention write of queries into patterns.

Two attention kernels are available:

* ``student_t_distance`` (default): score(q, k) = 1 / (1 + ||q - k||^2).
  Dissimilar pairs get small scores, similar pairs large ones.
* ``literal_dot``: score(q, k) = 1 / (1 + |q . k|). Kept behind a flag for
  fidelity experiments; note it rewards *orthogonal* pairs, not similar ones.

Read weights are normalized per query (rows sum to 1), update weights per
pattern (columns sum to 1). The write squashes updated patterns through a
sigmoid, so bank entries always stay in (0, 1).
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import Tensor, nn

KERNELS = ("student_t_distance", "literal_dot")


def attention_scores(queries: Tensor, patterns: Tensor, kernel: str) -> Tensor:
    """Unnormalized attention scores between every query and every pattern.

    queries: (..., M, C), patterns: (N, C). Returns (..., M, N).
    """
    _check_inputs(queries, patterns)
    if kernel == "student_t_distance":
        diff = queries.unsqueeze(-2) - patterns  # (..., M, N, C)
        return 1.0 / (1.0 + diff.pow(2).sum(dim=-1))
    if kernel == "literal_dot":
        dots = queries @ patterns.transpose(-1, -2)
        return 1.0 / (1.0 + dots.abs())
    raise ValueError(f"unknown attention kernel {kernel!r}; expected one of {KERNELS}")


def read(patterns: Tensor, queries: Tensor, kernel: str = "student_t_distance") -> tuple[Tensor, Tensor]:
    """Reconstruct each query as an attention-weighted average of patterns.

    Returns (reconstructed queries with the same shape as ``queries``,
    read weights of shape (..., M, N) whose rows sum to 1).
    """
    scores = attention_scores(queries, patterns, kernel)
    weights = scores / scores.sum(dim=-1, keepdim=True)
    return weights @ patterns, weights


def update(patterns: Tensor, queries: Tensor, kernel: str = "student_t_distance") -> Tensor:
    """Write queries into the bank; returns the new (N, C) pattern tensor.

    Each pattern absorbs an attention-weighted average of all queries
    (weights normalized per pattern, i.e. over queries) and is squashed
    by a sigmoid. ``queries`` must be 2-D (M, C); callers with batched
    query sets flatten the batch into M first.
    """
    if queries.dim() != 2:
        raise ValueError(f"update expects a 2-D query set, got shape {tuple(queries.shape)}")
    scores = attention_scores(queries, patterns, kernel)  # (M, N)
    weights = scores / scores.sum(dim=0, keepdim=True)  # columns sum to 1
    return torch.sigmoid(patterns + weights.transpose(0, 1) @ queries)


def read_gradients(
    patterns: Tensor,
    queries: Tensor,
    loss_fn: Callable[[Tensor], Tensor],
    kernel: str = "student_t_distance",
) -> tuple[Tensor, Tensor]:
    """Gradients of a scalar loss on the read output w.r.t. queries and patterns.

    ``loss_fn`` maps the reconstructed query set to a scalar. Uses autograd
    through the read attention.
    """
    q = queries.detach().clone().requires_grad_(True)
    k = patterns.detach().clone().requires_grad_(True)
    reconstructed, _ = read(k, q, kernel)
    loss = loss_fn(reconstructed)
    if loss.dim() != 0:
        raise ValueError("loss_fn must return a scalar")
    grad_q, grad_k = torch.autograd.grad(loss, (q, k))
    return grad_q, grad_k


def _check_inputs(queries: Tensor, patterns: Tensor) -> None:
    if patterns.dim() != 2:
        raise ValueError(f"patterns must be (N, C), got shape {tuple(patterns.shape)}")
    if patterns.shape[0] == 0:
        raise ValueError("pattern bank is empty (N=0)")
    if queries.shape[-1] != patterns.shape[-1]:
        raise ValueError(
            f"query dim {queries.shape[-1]} does not match pattern dim {patterns.shape[-1]}"
        )


class PatternBank(nn.Module):
    """Learnable bank of N pattern vectors of dimension C.

    Patterns are initialized uniformly in (0, 1) and stay in that range
    under ``write`` (sigmoid). They are ordinary parameters, so the
    training losses also shape them through the read path.
    """

    def __init__(self, pattern_count: int, dim: int, kernel: str = "student_t_distance"):
        super().__init__()
        if pattern_count <= 0:
            raise ValueError("pattern_count must be positive")
        if kernel not in KERNELS:
            raise ValueError(f"unknown attention kernel {kernel!r}; expected one of {KERNELS}")
        self.kernel = kernel
        self.patterns = nn.Parameter(torch.rand(pattern_count, dim))

    @property
    def pattern_count(self) -> int:
        return self.patterns.shape[0]

    @property
    def dim(self) -> int:
        return self.patterns.shape[1]

    def read(self, queries: Tensor) -> tuple[Tensor, Tensor]:
        return read(self.patterns, queries, self.kernel)

    @torch.no_grad()
    def write(self, queries: Tensor) -> None:
        """Apply the attention write in place. Single-writer: callers serialize."""
        new = update(self.patterns, queries.reshape(-1, self.dim), self.kernel)
        self.patterns.copy_(new)

    def extra_repr(self) -> str:
        return f"N={self.pattern_count}, C={self.dim}, kernel={self.kernel}"
