"""Semi-supervised joint training, evaluation and checkpointing."""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from gca.errors import ConfigError, NonFiniteError
from gca.metrics import mae, rmse
from gca.model import GCAModel, ModelSpec
from gca.objective import ObjectiveConfig, total_loss

log = logging.getLogger(__name__)

Batch = tuple[Tensor, Tensor]
CHECKPOINT_FORMAT = "gca.checkpoint.v1"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    target_batch_size: Optional[int] = None  # defaults to batch_size
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    optimizer_name: str = "adam"
    seed: int = 0
    early_stop_patience: int = 10
    tau_start: float = 1.0
    tau_end: float = 0.3
    # encoder and alpha stay frozen this many epochs so the predictor learns to
    # use its inputs before any gate can collapse
    structure_warmup_epochs: int = 5
    grad_clip: float = 5.0
    steps_per_epoch: Optional[int] = None
    use_unlabeled: bool = False
    eval_horizon: int = 1
    deterministic: bool = True
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.structure_warmup_epochs < 0:
            raise ConfigError("structure_warmup_epochs must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and early_stop_patience >= 1 required")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer_name not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer_name!r}")
        if not (self.tau_start > 0 and self.tau_end > 0):
            raise ConfigError("temperatures must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


OPTIMIZERS = {"adam": torch.optim.Adam, "adamw": torch.optim.AdamW, "sgd": torch.optim.SGD}


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def set_deterministic(seed: int, enabled: bool = True) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def to_batch(x, y) -> Batch:
    return torch.as_tensor(np.asarray(x), dtype=torch.float32), torch.as_tensor(np.asarray(y), dtype=torch.float32)


@dataclass
class Checkpoint:
    kind: str
    model_spec: dict
    model_state: dict
    optimizer_state: Optional[dict] = None
    epoch: int = 0
    norm_stats: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def header(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "kind": self.kind,
            "model_spec": self.model_spec,
            "epoch": self.epoch,
            "norm_stats": self.norm_stats,
            "config": self.config,
            "config_hash": self.config_hash,
            "shapes": {k: list(v.shape) for k, v in self.model_state.items()},
        }

    def save(self, path) -> Path:
        """Zip archive holding ``header.json`` and the tensors in ``state.pt``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        torch.save({"model": self.model_state, "optimizer": self.optimizer_state}, buf)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            # fixed timestamps keep the archive byte-identical across runs
            for name, data in (
                ("header.json", json.dumps(self.header(), sort_keys=True, default=str).encode()),
                ("state.pt", buf.getvalue()),
            ):
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, data)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} archive")
            state = torch.load(io.BytesIO(zf.read("state.pt")), weights_only=True)
        return cls(
            header["kind"],
            header["model_spec"],
            state["model"],
            state["optimizer"],
            header["epoch"],
            header["norm_stats"],
            header["config"],
        )

    def build_model(self) -> nn.Module:
        if self.kind == "gca":
            model = GCAModel(ModelSpec(**self.model_spec))
        elif self.kind == "lstm":
            model = LSTMForecaster(**self.model_spec)
        else:
            raise ConfigError(f"unknown checkpoint kind {self.kind!r}")
        model.load_state_dict(self.model_state)
        model.eval()
        return model


class LSTMForecaster(nn.Module):
    """Vanilla recurrent one-step forecaster used as the pooled-data baseline."""

    def __init__(self, D: int, hidden: int = 64, num_layers: int = 1):
        super().__init__()
        self.D, self.hidden, self.num_layers = D, hidden, num_layers
        self.lstm = nn.LSTM(D, hidden, num_layers, batch_first=True)
        self.head = nn.Linear(hidden, D)

    @property
    def spec(self) -> dict:
        return {"D": self.D, "hidden": self.hidden, "num_layers": self.num_layers}

    @property
    def min_history(self) -> int:
        return 1

    def forward(self, x: Tensor) -> Tensor:
        out, _ = self.lstm(x)
        return self.head(out[:, -1])

    @torch.no_grad()
    def forecast(self, history: Tensor, domain: str = "target", horizon: int = 1) -> Tensor:
        preds = []
        for _ in range(horizon):
            step = self(history)
            preds.append(step)
            history = torch.cat([history[:, 1:], step.unsqueeze(1)], dim=1)
        return torch.stack(preds, dim=1)


@dataclass
class Evaluation:
    rmse: float
    mae: float
    forecasts: np.ndarray
    targets: np.ndarray

    def metrics(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae}


def evaluate(model, batch: Batch, domain: str = "target", horizon: int = 1, chunk: int = 2048) -> Evaluation:
    """Noise-free rollout to ``horizon`` and RMSE/MAE in normalized space."""
    if isinstance(model, Checkpoint):
        model = model.build_model()
    x, y = batch
    if y.shape[1] < horizon:
        raise ConfigError(f"windows carry {y.shape[1]} future steps, horizon {horizon} requested")
    was_training = model.training
    model.eval()
    preds = [model.forecast(x[i : i + chunk], domain, horizon) for i in range(0, len(x), chunk)]
    model.train(was_training)
    pred = torch.cat(preds).numpy()
    target = y[:, :horizon].numpy()
    return Evaluation(rmse(pred, target), mae(pred, target), pred, target)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: nn.Module
    steps: list[dict]
    epochs: list[dict]
    best_epoch: int


class _BatchStream:
    """Endless reshuffled minibatches over a fixed set of windows."""

    def __init__(self, batch: Batch, batch_size: int, rng: np.random.Generator):
        self.x, self.y = batch
        self.n = len(self.x)
        self.bs = min(batch_size, self.n)
        self.rng = rng
        self.order, self.pos = rng.permutation(self.n), 0

    def next(self) -> Batch:
        if self.pos + self.bs > self.n:
            self.order, self.pos = self.rng.permutation(self.n), 0
        idx = torch.as_tensor(self.order[self.pos : self.pos + self.bs])
        self.pos += self.bs
        return self.x[idx], self.y[idx]


def _fit(
    model: nn.Module,
    step_fn: Callable[[float], tuple[Tensor, dict]],
    n_steps: int,
    val: Batch,
    cfg: TrainConfig,
    kind: str,
    spec: dict,
    monitor: Optional[Callable[[nn.Module, int], dict]],
    extra: dict,
    frozen: Sequence[nn.Parameter] = (),
) -> TrainResult:
    opt_cls = OPTIMIZERS[cfg.optimizer_name]
    optimizer = opt_cls(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    total_steps = max(1, cfg.epochs * n_steps)

    def snapshot(epoch):
        return Checkpoint(
            kind,
            spec,
            copy.deepcopy(model.state_dict()),
            copy.deepcopy(optimizer.state_dict()),
            epoch,
            extra.get("norm_stats", {}),
            extra.get("config", {}),
        )

    def record(epoch, train_loss):
        rec = {"epoch": epoch, "train_loss": train_loss, "val_rmse": evaluate(model, val, "target", cfg.eval_horizon).rmse}
        if monitor is not None:
            rec.update(monitor(model, epoch))
        return rec

    epochs = [record(0, float("nan"))]
    best, best_epoch, since_best = epochs[0]["val_rmse"], 0, 0
    best_ckpt = snapshot(0)
    steps, step = [], 0
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(n_steps):
            frac = step / max(1, total_steps - 1)
            tau = cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac
            loss, parts = step_fn(tau)
            if not torch.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, step {step}")
            optimizer.zero_grad()
            loss.backward()
            if epoch <= cfg.structure_warmup_epochs:
                for p in frozen:
                    p.grad = None
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            parts.update(step=step, epoch=epoch, tau=tau)
            steps.append(parts)
            losses.append(float(loss.detach()))
            step += 1
        rec = record(epoch, float(np.mean(losses)))
        epochs.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        if rec["val_rmse"] < best:
            best, best_epoch, since_best = rec["val_rmse"], epoch, 0
            best_ckpt = snapshot(epoch)
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    model.load_state_dict(best_ckpt.model_state)
    model.eval()
    return TrainResult(best_ckpt, model, steps, epochs, best_epoch)


def train(
    model: GCAModel,
    source: Batch,
    target: Batch,
    val: Batch,
    cfg: TrainConfig = TrainConfig(),
    target_unlabeled: Optional[Batch] = None,
    monitor: Optional[Callable[[nn.Module, int], dict]] = None,
    extra: Optional[dict] = None,
) -> TrainResult:
    """Jointly fit the encoder, predictor and domain latents.

    ``source`` holds the labeled source windows and ``target`` only the labeled
    target windows. With ``cfg.use_unlabeled`` the unlabeled target windows are
    added to the target reconstruction stream. ``val`` (target validation
    windows) drives best-checkpoint selection and early stopping.
    """
    if len(target[0]) == 0:
        raise ConfigError("at least one labeled target window is required")
    rng = np.random.default_rng(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)
    if cfg.use_unlabeled and target_unlabeled is not None and len(target_unlabeled[0]):
        target = (torch.cat([target[0], target_unlabeled[0]]), torch.cat([target[1], target_unlabeled[1]]))
    src_stream = _BatchStream(source, cfg.batch_size, rng)
    tgt_stream = _BatchStream(target, cfg.target_batch_size or cfg.batch_size, rng)
    n_steps = cfg.steps_per_epoch or math.ceil(len(source[0]) / cfg.batch_size)

    def step_fn(tau):
        parts = total_loss(model, src_stream.next(), tgt_stream.next(), cfg.objective, tau, generator)
        return parts.total, parts.as_dict()

    extra = dict(extra or {})
    extra.setdefault("config", {"train": cfg.to_dict(), "model": model.spec.to_dict()})
    frozen = [p for name, p in model.named_parameters() if name.startswith("encoder.") or name.endswith(".alpha")]
    return _fit(model, step_fn, n_steps, val, cfg, "gca", model.spec.to_dict(), monitor, extra, frozen)


def train_baseline(
    model: LSTMForecaster,
    source: Batch,
    target: Batch,
    val: Batch,
    cfg: TrainConfig = TrainConfig(),
    monitor: Optional[Callable[[nn.Module, int], dict]] = None,
    extra: Optional[dict] = None,
) -> TrainResult:
    """Fit the LSTM on the pooled labeled source and labeled target windows."""
    rng = np.random.default_rng(cfg.seed)
    pooled = (torch.cat([source[0], target[0]]), torch.cat([source[1], target[1]]))
    stream = _BatchStream(pooled, cfg.batch_size, rng)
    n_steps = cfg.steps_per_epoch or math.ceil(len(pooled[0]) / cfg.batch_size)

    def step_fn(tau):
        x, y = stream.next()
        loss = torch.mean((model(x) - y[:, 0]) ** 2)
        return loss, {"total": float(loss.detach())}

    extra = dict(extra or {})
    extra.setdefault("config", {"train": cfg.to_dict(), "model": model.spec})
    return _fit(model, step_fn, n_steps, val, cfg, "lstm", model.spec, monitor, extra)


def seed_sweep(run: Callable[[int], dict], seeds) -> dict:
    """Call ``run(seed)`` for each seed and aggregate every numeric metric to mean/std."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("a seed sweep needs at least two seeds")
    results = [run(s) for s in seeds]
    keys = [k for k, v in results[0].items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    summary = {}
    for key in keys:
        vals = np.array([r[key] for r in results], dtype=float)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=0)), "values": vals.tolist()}
    return {"seeds": seeds, "runs": results, "summary": summary}


def with_objective(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, objective=replace(cfg.objective, **changes))
