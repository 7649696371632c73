"""Structure-masked, domain-sensitive one-step forecaster.

For output variable ``u`` and lag ``j`` the input ``z_{t-j}`` is gated by row
``u`` of the lag slice, ``z_{t-j} * A_j[u, :]``, and embedded by ``g_j``. The
aggregator ``G`` combines the ``k`` embeddings of the same output together with
the domain latent ``beta``. Because every path into ``zhat^u`` runs through row
``u`` of the masks only, a zero mask entry removes that input's influence exactly.

Weights of ``g_j`` and ``G`` are shared across outputs; a learned per-output
embedding tells them which variable they are producing.
"""

from __future__ import annotations

from typing import Optional

import torch
from torch import Tensor, nn

from gca.encoder import mlp


class Predictor(nn.Module):
    def __init__(
        self,
        D: int,
        k: int,
        d_e: int = 32,
        d_beta: int = 8,
        hidden: int = 32,
        d_var: int = 4,
        zero_init: bool = False,
    ):
        super().__init__()
        self.D, self.k, self.d_e, self.d_beta, self.d_var = D, k, d_e, d_beta, d_var
        self.var_embedding = nn.Parameter(0.5 * torch.randn(D, d_var))
        self.intra = nn.ModuleList(mlp(D + d_var, hidden, d_e, n_hidden=1) for _ in range(k))
        self.aggregate = mlp(k * d_e + d_beta + d_var, hidden, 1, n_hidden=2)
        if zero_init:
            nn.init.zeros_(self.aggregate[-1].weight)
            nn.init.zeros_(self.aggregate[-1].bias)

    def intra_lag(self, z_lag: Tensor, A_slice: Tensor, j: int) -> Tensor:
        """Contribution ``(B, D, d_e)`` of one lag; row ``u`` is the embedding for output ``u``."""
        if z_lag.dim() != 2 or z_lag.shape[-1] != self.D:
            raise ValueError(f"z_lag must be (B, {self.D}), got {tuple(z_lag.shape)}")
        A_slice = _batched(A_slice, z_lag.shape[0], 2)
        if A_slice.shape[1:] != (self.D, self.D):
            raise ValueError(f"A_slice must be (B, {self.D}, {self.D}), got {tuple(A_slice.shape)}")
        masked = z_lag.unsqueeze(1) * A_slice
        emb = self.var_embedding.expand(masked.shape[0], -1, -1)
        return self.intra[j - 1](torch.cat([masked, emb], dim=-1))

    def inter_lag(self, contribs: list[Tensor], beta: Tensor) -> Tensor:
        if len(contribs) != self.k:
            raise ValueError(f"expected {self.k} lag contributions, got {len(contribs)}")
        B = contribs[0].shape[0]
        beta = beta.expand(B, self.D, self.d_beta)
        emb = self.var_embedding.expand(B, -1, -1)
        h = torch.cat([*contribs, beta, emb], dim=-1)
        return self.aggregate(h).squeeze(-1)

    def predict_one_step(self, history: Tensor, structure: Tensor, beta: Tensor) -> Tensor:
        """``history`` (B, t, D) with t >= k, ``structure`` (B, k, D, D) or (k, D, D)."""
        if history.shape[1] < self.k:
            raise ValueError(f"history needs at least {self.k} steps")
        structure = _batched(structure, history.shape[0], 3)
        contribs = [self.intra_lag(history[:, -j], structure[:, j - 1], j) for j in range(1, self.k + 1)]
        return self.inter_lag(contribs, beta)

    def rollout(self, history: Tensor, structure: Tensor, beta: Tensor, horizon: int) -> Tensor:
        """Autoregressive ``(B, horizon, D)`` forecast with the structure held fixed."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        preds = []
        for _ in range(horizon):
            step = self.predict_one_step(history, structure, beta)
            preds.append(step)
            history = torch.cat([history[:, 1:], step.unsqueeze(1)], dim=1)
        return torch.stack(preds, dim=1)


def _batched(t: Tensor, B: int, unbatched_dim: int) -> Tensor:
    """Broadcast an unbatched tensor (``unbatched_dim`` dims) over a batch of ``B``."""
    if t.dim() == unbatched_dim:
        return t.unsqueeze(0).expand(B, *t.shape)
    return t


__all__ = ["Predictor"]
