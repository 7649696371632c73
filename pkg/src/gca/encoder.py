"""Recurrent reconstruction of lagged causal structures.

Lag slices are inferred one after another: the network for lag ``j`` sees the
recent history, the slices already sampled for lags ``1..j-1`` and the
domain's structural latent ``alpha``. Every potential edge gets two category
scores (absent, present) that are sampled with the Gumbel-softmax relaxation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import torch
from torch import Tensor, nn

Mode = Literal["soft", "hard", "mean"]


def mlp(d_in: int, hidden: int, d_out: int, n_hidden: int = 2, act=nn.Tanh) -> nn.Sequential:
    layers, d = [], d_in
    for _ in range(n_hidden):
        layers += [nn.Linear(d, hidden), act()]
        d = hidden
    layers.append(nn.Linear(d, d_out))
    return nn.Sequential(*layers)


def edge_probabilities(logits: Tensor) -> Tensor:
    """Noise-free probability of the "present" category, shape ``logits.shape[:-1]``."""
    return torch.softmax(logits, dim=-1)[..., 1]


def gumbel_noise(shape, generator: Optional[torch.Generator] = None, dtype=torch.float32) -> Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    tiny = torch.finfo(dtype).tiny
    return -torch.log((-torch.log(u.clamp_min(tiny))).clamp_min(tiny))


def gumbel_sample(
    logits: Tensor,
    temperature: float,
    noise: Optional[Tensor] = None,
    generator: Optional[torch.Generator] = None,
    hard: bool = False,
) -> Tensor:
    """Relaxed categorical sample of each edge, returned as the "present" coordinate.

    ``hard=True`` returns the one-hot argmax in the forward pass while the
    gradient is that of the soft sample (straight-through).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if noise is None:
        noise = gumbel_noise(logits.shape, generator, logits.dtype)
    soft = torch.softmax((logits + noise) / temperature, dim=-1)
    if hard:
        index = soft.argmax(dim=-1, keepdim=True)
        one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
        soft = one_hot - soft.detach() + soft
    return soft[..., 1]


@dataclass
class StructureSample:
    """Stacked lag slices ``(B, k, D, D)`` and the logits ``(B, k, D, D, 2)`` that produced them."""

    slices: Tensor
    logits: Tensor
    mode: str = "soft"
    temperature: float = 1.0

    @property
    def probs(self) -> Tensor:
        return edge_probabilities(self.logits)


class StructureEncoder(nn.Module):
    """One MLP ``f_j`` per lag, shared by all domains.

    Parameters
    ----------
    D, k
        Number of variables and maximum lag.
    d_alpha
        Width of the structural domain latent (ignored when ``use_alpha`` is False).
    hidden
        Hidden width of each ``f_j``; defaults to ``max(32, 4 * D)``.
    history_len
        How many of the most recent steps are fed to ``f_j``; defaults to ``k``.
    init_edge_prob
        Edge probability at initialization, set through the output bias. Starting
        dense lets the predictor learn to use every input before pruning begins.
    """

    def __init__(
        self,
        D: int,
        k: int,
        d_alpha: int = 8,
        hidden: Optional[int] = None,
        history_len: Optional[int] = None,
        use_alpha: bool = True,
        init_edge_prob: Optional[float] = None,
    ):
        super().__init__()
        self.D, self.k = D, k
        self.d_alpha = d_alpha if use_alpha else 0
        self.use_alpha = use_alpha
        self.hidden = hidden or max(32, 4 * D)
        self.history_len = history_len or k
        self.nets = nn.ModuleList(
            mlp(self.history_len * D + j * D * D + self.d_alpha, self.hidden, D * D * 2)
            for j in range(k)
        )
        if init_edge_prob is not None:
            if not 0 < init_edge_prob < 1:
                raise ValueError("init_edge_prob must lie in (0, 1)")
            logit = math.log(init_edge_prob / (1 - init_edge_prob))
            with torch.no_grad():
                for net in self.nets:
                    # the "present" logit minus the "absent" logit sets the initial probability
                    bias = net[-1].bias.view(D, D, 2)
                    bias[..., 0] = -logit / 2
                    bias[..., 1] = logit / 2

    def encode_logits(self, history: Tensor, prev_slices: list[Tensor], j: int, alpha: Optional[Tensor]) -> Tensor:
        """Category scores ``(B, D, D, 2)`` for lag ``j`` (1-based).

        ``history`` is ``(B, t, D)`` with ``t >= history_len``; ``prev_slices``
        holds the ``j - 1`` slices ``(B, D, D)`` already inferred.
        """
        if history.dim() != 3 or history.shape[-1] != self.D:
            raise ValueError(f"history must be (B, t, {self.D}), got {tuple(history.shape)}")
        if history.shape[1] < self.history_len:
            raise ValueError(f"history needs at least {self.history_len} steps")
        if not 1 <= j <= self.k or len(prev_slices) != j - 1:
            raise ValueError(f"lag {j} needs exactly {j - 1} previous slices, got {len(prev_slices)}")
        B = history.shape[0]
        parts = [history[:, -self.history_len :].reshape(B, -1)]
        parts += [s.reshape(B, -1) for s in prev_slices]
        if self.use_alpha:
            if alpha is None or alpha.shape[-1] != self.d_alpha:
                raise ValueError(f"alpha of width {self.d_alpha} required")
            parts.append(alpha.expand(B, self.d_alpha))
        out = self.nets[j - 1](torch.cat(parts, dim=-1))
        return out.view(B, self.D, self.D, 2)

    def forward(
        self,
        history: Tensor,
        alpha: Optional[Tensor],
        temperature: float = 1.0,
        mode: Mode = "soft",
        generator: Optional[torch.Generator] = None,
        noise: Optional[Tensor] = None,
    ) -> StructureSample:
        """Run the lag recursion, feeding each sampled slice into the next ``f_j``.

        ``mode="mean"`` skips the Gumbel noise and propagates edge probabilities.
        ``noise`` optionally fixes the Gumbel draws, shape ``(B, k, D, D, 2)``.
        """
        slices, logits = [], []
        for j in range(1, self.k + 1):
            lj = self.encode_logits(history, slices, j, alpha)
            if mode == "mean":
                sj = edge_probabilities(lj)
            else:
                nj = None if noise is None else noise[:, j - 1]
                sj = gumbel_sample(lj, temperature, nj, generator, hard=(mode == "hard"))
            slices.append(sj)
            logits.append(lj)
        return StructureSample(torch.stack(slices, 1), torch.stack(logits, 1), mode, temperature)


def reconstruct_structure(
    encoder: StructureEncoder,
    history: Tensor,
    alpha: Optional[Tensor],
    temperature: float = 1.0,
    seed: Optional[int] = None,
    mode: Mode = "soft",
) -> StructureSample:
    """Seeded convenience wrapper around ``encoder(...)``."""
    generator = None
    if seed is not None:
        generator = torch.Generator().manual_seed(seed)
    return encoder(history, alpha, temperature, mode, generator)
