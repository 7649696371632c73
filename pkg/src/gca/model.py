"""The joint source/target model: shared networks plus per-domain latents."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
from torch import Tensor, nn

from gca.encoder import Mode, StructureEncoder, StructureSample
from gca.predictor import Predictor

DOMAINS = ("source", "target")


@dataclass(frozen=True)
class ModelSpec:
    D: int
    k: int
    d_alpha: int = 8
    d_beta: int = 8
    d_e: int = 32
    enc_hidden: Optional[int] = None
    pred_hidden: int = 32
    d_var: int = 4
    history_len: Optional[int] = None
    use_alpha: bool = True
    init_edge_prob: Optional[float] = 0.9

    def to_dict(self) -> dict:
        return asdict(self)


class DomainLatents(nn.Module):
    """Trainable ``alpha`` (structure side) and ``beta`` (prediction side) for one domain."""

    def __init__(self, d_alpha: int, d_beta: int, domain_id: str):
        super().__init__()
        self.domain_id = domain_id
        self.alpha = nn.Parameter(torch.randn(d_alpha))
        self.beta = nn.Parameter(torch.randn(d_beta))


class GCAModel(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.encoder = StructureEncoder(
            spec.D, spec.k, spec.d_alpha, spec.enc_hidden, spec.history_len, spec.use_alpha, spec.init_edge_prob
        )
        self.predictor = Predictor(spec.D, spec.k, spec.d_e, spec.d_beta, spec.pred_hidden, spec.d_var)
        self.latents = nn.ModuleDict({d: DomainLatents(spec.d_alpha, spec.d_beta, d) for d in DOMAINS})

    @property
    def min_history(self) -> int:
        return max(self.spec.k, self.encoder.history_len)

    def alpha(self, domain: str) -> Optional[Tensor]:
        return self.latents[domain].alpha if self.spec.use_alpha else None

    def beta(self, domain: str) -> Tensor:
        return self.latents[domain].beta

    def structure(
        self,
        history: Tensor,
        domain: str,
        temperature: float = 1.0,
        mode: Mode = "soft",
        generator: Optional[torch.Generator] = None,
        noise: Optional[Tensor] = None,
    ) -> StructureSample:
        return self.encoder(history, self.alpha(domain), temperature, mode, generator, noise)

    def forward(
        self,
        history: Tensor,
        domain: str,
        temperature: float = 1.0,
        mode: Mode = "soft",
        generator: Optional[torch.Generator] = None,
        noise: Optional[Tensor] = None,
    ) -> tuple[Tensor, StructureSample]:
        sample = self.structure(history, domain, temperature, mode, generator, noise)
        return self.predictor.predict_one_step(history, sample.slices, self.beta(domain)), sample

    @torch.no_grad()
    def forecast(self, history: Tensor, domain: str, horizon: int = 1) -> Tensor:
        """Noise-free structure from the history, then an autoregressive rollout."""
        sample = self.structure(history, domain, mode="mean")
        return self.predictor.rollout(history, sample.slices, self.beta(domain), horizon)

    @torch.no_grad()
    def edge_probabilities(self, history: Tensor, domain: str) -> Tensor:
        """Mean noise-free edge probabilities ``(k, D, D)`` over a batch of histories."""
        return self.structure(history, domain, mode="mean").slices.mean(dim=0)
