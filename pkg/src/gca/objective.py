"""Loss terms and their weighted composition.

The total objective for one source batch and one target batch is

    recon_src + recon_tgt + kl_src + kl_tgt
        + gamma * disc + lam * (sparsity_src + sparsity_tgt) + delta * strengthen

where ``recon`` is the one-step MSE, ``kl`` the Bernoulli KL of the edge
posterior against a fixed sparse prior, ``disc`` the mean absolute difference
between target structures and gradient-stopped source structures, ``sparsity``
the elastic-net penalty and ``strengthen`` the MSE on one designated variable.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Literal, Optional

import torch
from torch import Tensor

from gca.encoder import edge_probabilities

PROB_CLAMP = 1e-6
VARIANTS = ("gca", "gca-r", "gca-e", "gca-s", "gca-alpha")


@dataclass(frozen=True)
class StructurePrior:
    edge_prior_p: float = 0.1

    def __post_init__(self):
        if not 0 < self.edge_prior_p < 1:
            raise ValueError("edge_prior_p must lie in (0, 1)")


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.15
    lam: float = 0.4
    delta: float = 1.0

    def for_variant(self, variant: str) -> "LossWeights":
        if variant == "gca-r":
            return LossWeights(0.0, self.lam, self.delta)
        if variant == "gca-e":
            return LossWeights(self.gamma, self.lam, 0.0)
        return self


@dataclass
class LossBreakdown:
    recon_src: Tensor
    recon_tgt: Tensor
    kl_src: Tensor
    kl_tgt: Tensor
    disc: Tensor
    sparsity_src: Tensor
    sparsity_tgt: Tensor
    strengthen: Tensor
    total: Tensor
    weights: LossWeights

    def as_dict(self) -> dict:
        out = {f.name: float(getattr(self, f.name).detach()) for f in fields(self) if f.name != "weights"}
        out.update(gamma=self.weights.gamma, lam=self.weights.lam, delta=self.weights.delta)
        return out

    def recomposed(self) -> Tensor:
        w = self.weights
        return (
            self.recon_src
            + self.recon_tgt
            + self.kl_src
            + self.kl_tgt
            + w.gamma * self.disc
            + w.lam * (self.sparsity_src + self.sparsity_tgt)
            + w.delta * self.strengthen
        )


def reconstruction_nll(pred: Tensor, target: Tensor) -> Tensor:
    """Unit-variance Gaussian NLL up to constants: the mean squared error."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def kl_structure(edge_probs: Tensor, prior: StructurePrior = StructurePrior()) -> Tensor:
    """Sum over the trailing ``(k, D, D)`` edges of KL(Bern(q) || Bern(p)); batch-averaged.

    Probabilities are clamped to ``[1e-6, 1 - 1e-6]`` before taking logs.
    """
    q = edge_probs.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    p = prior.edge_prior_p
    kl = q * torch.log(q / p) + (1 - q) * torch.log((1 - q) / (1 - p))
    kl = kl.flatten(start_dim=-3).sum(-1) if kl.dim() >= 3 else kl.sum()
    return kl.mean()


def kl_from_logits(logits: Tensor, prior: StructurePrior = StructurePrior()) -> Tensor:
    return kl_structure(edge_probabilities(logits), prior)


def discrepancy(A_src: Tensor, A_tgt: Tensor) -> Tensor:
    """Mean absolute entry difference between structures, no gradient into ``A_src``.

    Unbatched inputs are ``(k, D, D)``. With batches ``(Bs, k, D, D)`` and
    ``(Bt, k, D, D)`` the value is the average over all source/target pairs.
    """
    src = A_src.detach()
    if src.shape[-3:] != A_tgt.shape[-3:]:
        raise ValueError(f"structure shapes differ: {tuple(src.shape)} vs {tuple(A_tgt.shape)}")
    if src.dim() == 4 and A_tgt.dim() == 4:
        diff = src.unsqueeze(1) - A_tgt.unsqueeze(0)
    else:
        diff = src - A_tgt
    return diff.abs().mean()


def sparsity(A: Tensor) -> Tensor:
    """Elastic-net penalty ``0.5 * ||A||_1 + 0.5 * ||A||_2`` over ``(k, D, D)``; batch-averaged."""
    flat = A.flatten(start_dim=-3) if A.dim() >= 3 else A.reshape(1, -1)
    l1 = flat.abs().sum(-1)
    l2 = torch.linalg.vector_norm(flat, dim=-1)
    return (0.5 * l1 + 0.5 * l2).mean()


def strengthen(pred: Tensor, target: Tensor, target_dim: int) -> Tensor:
    D = pred.shape[-1]
    if not 0 <= target_dim < D:
        raise IndexError(f"target_dim {target_dim} out of range for D={D}")
    return reconstruction_nll(pred[..., target_dim], target[..., target_dim])


@dataclass(frozen=True)
class ObjectiveConfig:
    gamma: float = 0.15
    lam: float = 0.4
    delta: float = 1.0
    edge_prior_p: float = 0.1
    target_dim: int = 0
    variant: str = "gca"
    n_samples: int = 1
    hard: bool = False
    # "edge_mean" divides KL and sparsity by k*D*D so they share the per-edge
    # scale of the discrepancy term; "sum" keeps the raw sums.
    structure_scale: Literal["edge_mean", "sum"] = "edge_mean"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.gamma, self.lam, self.delta).for_variant(self.variant)

    @property
    def prior(self) -> StructurePrior:
        return StructurePrior(self.edge_prior_p)


def _domain_terms(model, x, y, domain, cfg: ObjectiveConfig, temperature, generator, noise):
    mode = "hard" if cfg.hard else "soft"
    target = y[:, 0]
    recons, kls, sparse, strong, slices = [], [], [], [], []
    for s in range(cfg.n_samples):
        eps = None if noise is None else noise[s]
        pred, sample = model(x, domain, temperature, mode, generator, eps)
        if cfg.variant == "gca-s":
            recons.append(strengthen(pred, target, cfg.target_dim))
        else:
            recons.append(reconstruction_nll(pred, target))
        kls.append(kl_from_logits(sample.logits, cfg.prior))
        sparse.append(sparsity(sample.slices))
        strong.append(strengthen(pred, target, cfg.target_dim))
        slices.append(sample.slices)
    mean = lambda ts: torch.stack(ts).mean()
    return mean(recons), mean(kls), mean(sparse), mean(strong), torch.cat(slices)


def total_loss(
    model,
    batch_src: tuple[Tensor, Tensor],
    batch_tgt: tuple[Tensor, Tensor],
    cfg: ObjectiveConfig = ObjectiveConfig(),
    temperature: float = 1.0,
    generator: Optional[torch.Generator] = None,
    noise: Optional[dict] = None,
) -> LossBreakdown:
    """Compose every loss term for one step.

    ``batch_*`` are ``(x, y)`` with ``x`` (B, t_in, D) and ``y`` (B, horizon, D);
    only the first future step is supervised. ``noise`` may fix the Gumbel
    draws per domain as a ``(n_samples, B, k, D, D, 2)`` tensor.
    """
    if batch_src[0].shape[0] == 0 or batch_tgt[0].shape[0] == 0:
        raise ValueError("source and target batches must be nonempty")
    noise = noise or {}
    r_s, kl_s, sp_s, _, A_s = _domain_terms(
        model, *batch_src, "source", cfg, temperature, generator, noise.get("source")
    )
    r_t, kl_t, sp_t, st_t, A_t = _domain_terms(
        model, *batch_tgt, "target", cfg, temperature, generator, noise.get("target")
    )
    if cfg.structure_scale == "edge_mean":
        n_edges = A_s[0].numel()
        kl_s, kl_t, sp_s, sp_t = kl_s / n_edges, kl_t / n_edges, sp_s / n_edges, sp_t / n_edges
    disc = discrepancy(A_s, A_t)
    w = cfg.weights
    total = r_s + r_t + kl_s + kl_t + w.gamma * disc + w.lam * (sp_s + sp_t) + w.delta * st_t
    return LossBreakdown(r_s, r_t, kl_s, kl_t, disc, sp_s, sp_t, st_t, total, w)
