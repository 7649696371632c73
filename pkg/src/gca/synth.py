"""Multi-domain synthetic time series with known lagged causal structure.

Each domain follows

    z_t = sum_j W_j (z_{t-j} + c * sin(z_{t-j})) + eps,   eps ~ N(0, sigma^2 I)

where ``W_j`` is the binary lag-``j`` adjacency carrying random edge weights.
Domains share a base structure and differ by a small number of flipped edges,
their noise level, sampling interval and nonlinearity constant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gca.errors import ConfigError, DivergenceError

STABILITY_BOUND = 0.95
OVERFLOW_GUARD = 1e6
MAX_RETRIES = 5
WEIGHT_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class GroundTruthStructure:
    """Binary lagged adjacency ``(k, D, D)`` plus the weights used to simulate it.

    ``adjacency[j - 1, u, v] == 1`` means ``z^v_{t-j}`` drives ``z^u_t``.
    """

    adjacency: np.ndarray
    weights: np.ndarray
    edge_density: float = 1.0

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
            raise ConfigError(f"adjacency must have shape (k, D, D), got {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise ConfigError("adjacency entries must be 0 or 1")
        if (adj.reshape(adj.shape[0], -1).sum(axis=1) == 0).any():
            raise ConfigError("every lag slice needs at least one edge")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != adj.shape:
            raise ConfigError("weights must match adjacency shape")
        if np.any((weights != 0) & (adj == 0)):
            raise ConfigError("weights present on absent edges")
        object.__setattr__(self, "adjacency", adj.astype(np.int8))
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.adjacency.shape[0]

    @property
    def D(self) -> int:
        return self.adjacency.shape[1]

    @classmethod
    def from_weights(cls, weights, edge_density: float = 1.0) -> "GroundTruthStructure":
        weights = np.asarray(weights, dtype=float)
        return cls((weights != 0).astype(np.int8), weights, edge_density)

    def to_json(self) -> list:
        return self.adjacency.tolist()


@dataclass(frozen=True)
class DomainGenConfig:
    noise_variance: float = 1.0
    sample_interval: int = 1
    nonlin_c: float = 0.0
    length: int = 1000
    burn_in: int = 100
    seed: int = 0

    def __post_init__(self):
        # zero noise is accepted so the simulator can be checked against exact recursions
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be nonnegative")
        if self.sample_interval < 1:
            raise ConfigError("sample_interval must be >= 1")
        if self.nonlin_c < 0:
            raise ConfigError("nonlin_c must be nonnegative")
        if self.length <= self.burn_in or self.burn_in < 0:
            raise ConfigError("length must exceed burn_in >= 0")


# Noise variance, sample interval and nonlinearity of the three reference domains.
TABLE1_DOMAINS = (
    dict(noise_variance=1.0, sample_interval=1, nonlin_c=0.02),
    dict(noise_variance=5.0, sample_interval=2, nonlin_c=0.04),
    dict(noise_variance=10.0, sample_interval=3, nonlin_c=0.06),
)


def table1_configs(length: int = 5000, burn_in: int = 100, seed: int = 0) -> list[DomainGenConfig]:
    return [
        DomainGenConfig(length=length, burn_in=burn_in, seed=seed + i, **params)
        for i, params in enumerate(TABLE1_DOMAINS)
    ]


@dataclass
class RawSeries:
    values: np.ndarray
    domain_id: str
    ground_truth: Optional[GroundTruthStructure] = None
    config: Optional[DomainGenConfig] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ConfigError("series values must be a (T, D) matrix")
        if not np.isfinite(self.values).all():
            raise DivergenceError(f"series {self.domain_id!r} contains non-finite values")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


def companion_matrix(weights: np.ndarray) -> np.ndarray:
    k, D, _ = weights.shape
    comp = np.zeros((k * D, k * D))
    comp[:D, :] = np.concatenate(list(weights), axis=1)
    if k > 1:
        comp[D:, :-D] = np.eye((k - 1) * D)
    return comp


def spectral_radius(weights: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(weights)))))


def stabilize(weights: np.ndarray, bound: float = STABILITY_BOUND) -> np.ndarray:
    """Shrink lag weights so the companion spectral radius is at most ``bound``.

    Scaling ``W_j`` by ``s**j`` scales every companion eigenvalue by exactly ``s``.
    """
    rho = spectral_radius(weights)
    if rho <= bound:
        return weights.copy()
    s = bound / rho
    powers = s ** np.arange(1, weights.shape[0] + 1)
    return weights * powers[:, None, None]


def _random_weights(rng: np.random.Generator, shape) -> np.ndarray:
    magnitude = rng.uniform(*WEIGHT_RANGE, size=shape)
    sign = rng.choice((-1.0, 1.0), size=shape)
    return magnitude * sign


def _raw_structure(D: int, k: int, edge_density: float, rng: np.random.Generator):
    adjacency = (rng.random((k, D, D)) < edge_density).astype(np.int8)
    for j in range(k):
        if not adjacency[j].any():
            u, v = rng.integers(D, size=2)
            adjacency[j, u, v] = 1
    return adjacency, adjacency * _random_weights(rng, (k, D, D))


def sample_structure(D: int, k: int, edge_density: float, seed: int) -> GroundTruthStructure:
    """Draw a sparse random lagged structure with stabilized edge weights.

    Each entry is present with probability ``edge_density``; a lag slice that
    comes out empty receives one random edge.
    """
    if D < 2:
        raise ConfigError("need D >= 2 for cross-variable causality")
    if k < 1:
        raise ConfigError("max lag k must be >= 1")
    if not 0 < edge_density <= 1:
        raise ConfigError("edge_density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    _, raw = _raw_structure(D, k, edge_density, rng)
    return GroundTruthStructure.from_weights(stabilize(raw), edge_density)


def simulate_domain(
    structure: GroundTruthStructure,
    cfg: DomainGenConfig,
    domain_id: str = "domain",
    initial: Optional[np.ndarray] = None,
) -> RawSeries:
    """Run the nonlinear lagged recursion for one domain.

    The first ``k`` raw rows are the initial states (``N(0, I)`` unless
    ``initial`` is given). ``burn_in`` raw rows are dropped, then every
    ``sample_interval``-th row is kept until ``length`` rows are collected.
    On overflow the weights are halved and the run repeated with the same seed.
    """
    weights = structure.weights
    for _ in range(MAX_RETRIES + 1):
        values = _run_recursion(weights, cfg, initial)
        if values is not None:
            return RawSeries(values, domain_id, structure, cfg)
        weights = weights * 0.5
    raise DivergenceError(
        f"{domain_id}: trajectory exceeded {OVERFLOW_GUARD:g} after {MAX_RETRIES} rescaling retries"
    )


def _run_recursion(weights, cfg: DomainGenConfig, initial) -> Optional[np.ndarray]:
    k, D, _ = weights.shape
    n_raw = cfg.burn_in + (cfg.length - 1) * cfg.sample_interval + 1
    rng = np.random.default_rng(cfg.seed)
    z = np.empty((max(n_raw, k), D))
    if initial is None:
        z[:k] = rng.standard_normal((k, D))
    else:
        z[:k] = np.asarray(initial, dtype=float).reshape(k, D)
    scale = np.sqrt(cfg.noise_variance)
    c = cfg.nonlin_c
    for t in range(k, n_raw):
        # one draw per step keeps the noise stream identical across sample intervals
        eps = rng.standard_normal(D) * scale
        acc = eps.copy()
        for j in range(1, k + 1):
            prev = z[t - j]
            acc += weights[j - 1] @ (prev + c * np.sin(prev))
        if not np.all(np.abs(acc) <= OVERFLOW_GUARD):
            return None
        z[t] = acc
    return z[cfg.burn_in : n_raw : cfg.sample_interval].copy()


def perturb_structure(
    base_weights: np.ndarray, jitter: float, rng: np.random.Generator
) -> np.ndarray:
    """Flip ``round(jitter * k * D * D)`` off-diagonal entries of a raw weight tensor.

    Removed edges lose their weight, added edges get a fresh random weight.
    Self-lag entries are never touched.
    """
    k, D, _ = base_weights.shape
    n_flip = int(np.floor(jitter * k * D * D + 0.5))
    off = np.array([(j, u, v) for j in range(k) for u in range(D) for v in range(D) if u != v])
    n_flip = min(n_flip, len(off))
    for _ in range(100):
        weights = base_weights.copy()
        for j, u, v in off[rng.choice(len(off), size=n_flip, replace=False)]:
            if weights[j, u, v] != 0:
                weights[j, u, v] = 0.0
            else:
                weights[j, u, v] = _random_weights(rng, ())
        if (weights.reshape(k, -1) != 0).any(axis=1).all():
            return weights
    raise ConfigError("could not perturb structure without emptying a lag slice")


def make_domain_family(
    D: int,
    k: int,
    density: float,
    configs: Sequence[DomainGenConfig],
    structure_jitter: float,
    seed: int,
    domain_ids: Optional[Sequence[str]] = None,
) -> tuple[list[RawSeries], list[GroundTruthStructure]]:
    """Simulate several domains around one shared base structure."""
    if not 0 <= structure_jitter <= 0.2:
        raise ConfigError("structure_jitter must lie in [0, 0.2]")
    if D < 2 or k < 1 or not 0 < density <= 1:
        raise ConfigError("invalid structure dimensions or density")
    if domain_ids is None:
        domain_ids = [f"domain{i + 1}" for i in range(len(configs))]
    _, raw = _raw_structure(D, k, density, np.random.default_rng(seed))
    series, structures = [], []
    for i, (cfg, did) in enumerate(zip(configs, domain_ids)):
        rng = np.random.default_rng([seed, i + 1])
        weights = perturb_structure(raw, structure_jitter, rng) if structure_jitter > 0 else raw
        truth = GroundTruthStructure.from_weights(stabilize(weights), density)
        structures.append(truth)
        series.append(simulate_domain(truth, cfg, did))
    return series, structures


def write_dataset(out_dir, series: Sequence[RawSeries]) -> Path:
    """Write per-domain CSVs, structure JSON files and a ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in series:
        data_file = f"{s.domain_id}.csv"
        header = ",".join(f"v{i}" for i in range(s.D))
        np.savetxt(out / data_file, s.values, delimiter=",", header=header, comments="", fmt="%.17g")
        entry = {"domain_id": s.domain_id, "D": s.D, "data_file": data_file}
        if s.ground_truth is not None:
            structure_file = f"{s.domain_id}_structure.json"
            (out / structure_file).write_text(json.dumps(s.ground_truth.to_json()))
            weights_file = f"{s.domain_id}_weights.json"
            (out / weights_file).write_text(json.dumps(s.ground_truth.weights.tolist()))
            entry.update(k=s.ground_truth.k, structure_file=structure_file, weights_file=weights_file)
        if s.config is not None:
            entry["config"] = asdict(s.config)
        entries.append(entry)
    (out / "manifest.json").write_text(json.dumps({"domains": entries}, indent=2))
    return out


def read_dataset(data_dir) -> list[RawSeries]:
    from gca.data import ingest_csv

    root = Path(data_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    series = []
    for entry in manifest["domains"]:
        s = ingest_csv(root / entry["data_file"], domain_id=entry["domain_id"])
        if "structure_file" in entry:
            adjacency = np.array(json.loads((root / entry["structure_file"]).read_text()))
            weights_path = root / entry.get("weights_file", "")
            if entry.get("weights_file") and weights_path.exists():
                weights = np.array(json.loads(weights_path.read_text()))
            else:
                weights = adjacency.astype(float)
            s.ground_truth = GroundTruthStructure(adjacency, weights)
        if "config" in entry:
            s.config = DomainGenConfig(**entry["config"])
        series.append(s)
    return series
