"""Source-to-target transfer tasks: data preparation, runs and result ledgers."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch

from gca.data import (
    SplitSpec,
    Split,
    ZScoreStats,
    make_windows,
    split_semi_supervised,
    stack_windows,
    train_row_count,
    zscore_fit_apply,
)
from gca.errors import ConfigError
from gca.metrics import auprc, mean_std, structure_l1
from gca.model import GCAModel, ModelSpec
from gca.synth import GroundTruthStructure, RawSeries
from gca.trainer import (
    Batch,
    Checkpoint,
    LSTMForecaster,
    TrainConfig,
    config_hash,
    evaluate,
    set_deterministic,
    to_batch,
    train,
    train_baseline,
    with_objective,
)

LEDGER_SCHEMA = "gca.ledger.v1"
VARIANT_CHOICES = ("gca", "gca-r", "gca-e", "gca-s", "gca-alpha", "lstm-st")


@dataclass(frozen=True)
class DataConfig:
    t_in: Optional[int] = None  # defaults to 2 * k
    horizon: int = 1
    stride: int = 1
    split: SplitSpec = field(default_factory=SplitSpec)

    def resolved_t_in(self, k: int) -> int:
        t_in = self.t_in if self.t_in is not None else 2 * k
        if t_in < k:
            raise ConfigError(f"t_in={t_in} shorter than max lag k={k}")
        return t_in


@dataclass
class DomainData:
    domain_id: str
    split: Split
    stats: ZScoreStats
    truth: Optional[GroundTruthStructure]
    train: Batch
    train_unlabeled: Optional[Batch]
    val: Batch
    test: Batch


@dataclass
class TaskData:
    source: DomainData
    target: DomainData
    data_hash: str

    @property
    def name(self) -> str:
        return f"{self.source.domain_id}->{self.target.domain_id}"


def _batch(windows) -> Optional[Batch]:
    if not windows:
        return None
    return to_batch(*stack_windows(windows))


def prepare_domain(
    series: RawSeries, cfg: DataConfig, k: int, role: str, seed: int, stats: Optional[ZScoreStats] = None
) -> DomainData:
    """Normalize, window, and split one domain.

    Statistics are fitted on the rows touched by training windows unless
    ``stats`` (for example from a checkpoint) is given.
    """
    t_in = cfg.resolved_t_in(k)
    if stats is None:
        n_rows = train_row_count(series.T, cfg.split, t_in, cfg.horizon, cfg.stride)
        normalized, stats = zscore_fit_apply(series, n_rows)
    else:
        normalized = replace(series, values=stats.apply(series.values))
    windows = make_windows(normalized, t_in, cfg.horizon, cfg.stride)
    split = split_semi_supervised(windows, cfg.split, role, seed)
    return DomainData(
        series.domain_id,
        split,
        stats,
        series.ground_truth,
        _batch(split.labeled_train),
        _batch(split.unlabeled_train),
        _batch(split.val),
        _batch(split.test),
    )


def data_hash(*series: RawSeries) -> str:
    h = hashlib.sha256()
    for s in series:
        h.update(s.domain_id.encode())
        h.update(np.ascontiguousarray(s.values).tobytes())
    return h.hexdigest()[:16]


def prepare_task(source: RawSeries, target: RawSeries, cfg: DataConfig, k: int, seed: int) -> TaskData:
    return TaskData(
        prepare_domain(source, cfg, k, "source", seed),
        prepare_domain(target, cfg, k, "target", seed),
        data_hash(source, target),
    )


def evaluate_checkpoint(
    ckpt: Checkpoint, source: RawSeries, target: RawSeries, cfg: DataConfig, seed: int, horizon: int = 1
) -> dict:
    """Rebuild the model, normalize with the stored statistics and score the target test split."""
    stats = {role: ZScoreStats.from_dict(d) for role, d in ckpt.norm_stats.items()}
    if set(stats) != {"source", "target"}:
        raise ConfigError("checkpoint lacks normalization statistics for both domains")
    k = ckpt.model_spec.get("k", 1)
    task = TaskData(
        prepare_domain(source, cfg, k, "source", seed, stats["source"]),
        prepare_domain(target, cfg, k, "target", seed, stats["target"]),
        data_hash(source, target),
    )
    model = ckpt.build_model()
    result = evaluate(model, task.target.test, "target", horizon)
    metrics = result.metrics()
    if ckpt.kind == "gca":
        metrics.update(_structure_metrics(model, task)[0])
    return {"task": task.name, "metrics": metrics, "horizon": horizon, "data_hash": task.data_hash}


def _structure_metrics(model: GCAModel, task: TaskData, prefix: str = "") -> tuple[dict, dict]:
    """AUPRC per domain and the source/target structure gap, plus the raw probabilities."""
    out = {}
    probs = {}
    for role, short in (("source", "src"), ("target", "tgt")):
        dom = getattr(task, role)
        p = model.edge_probabilities(dom.test[0], role).numpy()
        probs[role] = p
        if dom.truth is not None:
            out[f"{prefix}auprc_{short}"] = auprc(p, dom.truth)
    out[f"{prefix}structure_l1"] = structure_l1(probs["source"], probs["target"])
    return out, probs


def run_gca(
    task: TaskData,
    model_cfg: dict,
    train_cfg: TrainConfig,
    variant: str = "gca",
    seed: int = 0,
    monitor: bool = True,
) -> dict:
    """Train one variant on one task and return its ledger."""
    if variant not in VARIANT_CHOICES or variant == "lstm-st":
        raise ConfigError(f"run_gca cannot run variant {variant!r}")
    D = task.source.train[0].shape[-1]
    train_cfg = replace(with_objective(train_cfg, variant=variant), seed=seed)
    spec = ModelSpec(D=D, **{**model_cfg, "use_alpha": variant != "gca-alpha"})
    set_deterministic(seed, train_cfg.deterministic)
    model = GCAModel(spec)
    tgt = task.target

    def watch(m, epoch):
        rec = {"test_rmse": evaluate(m, tgt.test, "target", train_cfg.eval_horizon).rmse}
        rec.update(_structure_metrics(m, task)[0])
        return rec

    config = {"train": train_cfg.to_dict(), "model": spec.to_dict(), "variant": variant}
    extra = {
        "config": config,
        "norm_stats": {"source": task.source.stats.to_dict(), "target": tgt.stats.to_dict()},
    }
    result = train(
        model, task.source.train, tgt.train, tgt.val, train_cfg,
        target_unlabeled=tgt.train_unlabeled, monitor=watch if monitor else None, extra=extra,
    )
    test = evaluate(result.model, tgt.test, "target", train_cfg.eval_horizon)
    src_test = evaluate(result.model, task.source.test, "source", train_cfg.eval_horizon)
    structure, probs = _structure_metrics(result.model, task)
    metrics = {"rmse": test.rmse, "mae": test.mae, "source_rmse": src_test.rmse, **structure}
    return {
        "schema": LEDGER_SCHEMA,
        "task": task.name,
        "variant": variant,
        "seed": seed,
        "metrics": metrics,
        "best_epoch": result.best_epoch,
        "epochs": result.epochs,
        "loss_history": result.steps,
        "structures": {
            "source": probs["source"].tolist(),
            "target": probs["target"].tolist(),
            "truth_source": None if task.source.truth is None else task.source.truth.adjacency.tolist(),
            "truth_target": None if tgt.truth is None else tgt.truth.adjacency.tolist(),
        },
        "config": config,
        "config_hash": config_hash(config),
        "data_hash": task.data_hash,
        "_result": result,
    }


def run_lstm(task: TaskData, train_cfg: TrainConfig, seed: int = 0, hidden: int = 64) -> dict:
    D = task.source.train[0].shape[-1]
    train_cfg = replace(train_cfg, seed=seed)
    set_deterministic(seed, train_cfg.deterministic)
    model = LSTMForecaster(D, hidden)
    tgt = task.target

    def watch(m, epoch):
        return {"test_rmse": evaluate(m, tgt.test, "target", train_cfg.eval_horizon).rmse}

    config = {"train": train_cfg.to_dict(), "model": model.spec, "variant": "lstm-st"}
    extra = {
        "config": config,
        "norm_stats": {"source": task.source.stats.to_dict(), "target": tgt.stats.to_dict()},
    }
    result = train_baseline(model, task.source.train, tgt.train, tgt.val, train_cfg, watch, extra)
    test = evaluate(result.model, tgt.test, "target", train_cfg.eval_horizon)
    return {
        "schema": LEDGER_SCHEMA,
        "task": task.name,
        "variant": "lstm-st",
        "seed": seed,
        "metrics": {"rmse": test.rmse, "mae": test.mae},
        "best_epoch": result.best_epoch,
        "epochs": result.epochs,
        "loss_history": result.steps,
        "config": config,
        "config_hash": config_hash(config),
        "data_hash": task.data_hash,
        "_result": result,
    }


def run_variant(task, variant, model_cfg, train_cfg, seed, lstm_hidden=64, monitor=True) -> dict:
    if variant == "lstm-st":
        return run_lstm(task, train_cfg, seed, lstm_hidden)
    return run_gca(task, model_cfg, train_cfg, variant, seed, monitor)


def ordered_pairs(domain_ids: Sequence[str]) -> list[tuple[str, str]]:
    if len(domain_ids) < 2:
        raise ConfigError("transfer tasks need at least two domains")
    return list(itertools.permutations(domain_ids, 2))


def transfer_matrix(
    series: Sequence[RawSeries],
    data_cfg: DataConfig,
    model_cfg: dict,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
    variants: Sequence[str] = ("gca",),
    k: Optional[int] = None,
    lstm_hidden: int = 64,
    monitor: bool = False,
) -> dict:
    """Every ordered domain pair x variant x seed; returns per-cell ledgers and a summary table."""
    by_id = {s.domain_id: s for s in series}
    k = k or model_cfg.get("k")
    cells = []
    for src, tgt in ordered_pairs(list(by_id)):
        for seed in seeds:
            task = prepare_task(by_id[src], by_id[tgt], data_cfg, k, seed)
            for variant in variants:
                ledger = run_variant(task, variant, model_cfg, train_cfg, seed, lstm_hidden, monitor)
                ledger.pop("_result", None)
                cells.append(ledger)
    return {"schema": LEDGER_SCHEMA, "cells": cells, "table": summarize(cells)}


def summarize(cells: Sequence[dict]) -> dict:
    """``table[task][variant][metric] = (mean, std)`` plus an ``Average`` row per variant."""
    table: dict = {}
    for cell in cells:
        slot = table.setdefault(cell["task"], {}).setdefault(cell["variant"], {"rmse": [], "mae": []})
        slot["rmse"].append(cell["metrics"]["rmse"])
        slot["mae"].append(cell["metrics"]["mae"])
    out = {}
    for task, variants in table.items():
        out[task] = {v: {m: mean_std(vals) for m, vals in ms.items()} for v, ms in variants.items()}
    variants = sorted({v for t in out.values() for v in t})
    out["Average"] = {
        v: {m: mean_std([out[t][v][m][0] for t in table if v in out[t]]) for m in ("rmse", "mae")}
        for v in variants
    }
    return out


def format_table(table: dict) -> str:
    """Text table with one RMSE row and one MAE row per task."""
    variants = sorted({v for t in table.values() for v in t})
    head = f"{'Task':<20}{'Metric':<8}" + "".join(f"{v:>20}" for v in variants)
    lines = [head, "-" * len(head)]
    for task, row in table.items():
        for metric in ("rmse", "mae"):
            cells = []
            for v in variants:
                if v in row:
                    m, s = row[v][metric]
                    cells.append(f"{m:.4f}±{s:.4f}".rjust(20))
                else:
                    cells.append(" " * 20)
            lines.append(f"{task if metric == 'rmse' else '':<20}{metric.upper():<8}" + "".join(cells))
    return "\n".join(lines)


def strip_private(ledger: dict) -> dict:
    return {k: v for k, v in ledger.items() if not k.startswith("_")}


def torch_state_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


__all__ = [
    "DataConfig",
    "TaskData",
    "prepare_task",
    "run_gca",
    "run_lstm",
    "transfer_matrix",
    "summarize",
    "format_table",
]
