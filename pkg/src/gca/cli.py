"""Command-line entry point: simulate, train, evaluate, transfer-matrix, plot.

Every command writes into a fresh numbered directory under ``--out`` so earlier
results are never overwritten. Exit codes: 0 success, 2 configuration error,
3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from gca.config import ExperimentConfig, dump_config, load_config, parse_config
from gca.errors import ConfigError, DataIOError, GCAError, NumericError
from gca.experiment import (
    VARIANT_CHOICES,
    evaluate_checkpoint,
    format_table,
    prepare_task,
    run_variant,
    transfer_matrix,
)
from gca.synth import make_domain_family, read_dataset, write_dataset
from gca.trainer import Checkpoint

log = logging.getLogger("gca")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def versioned_dir(base, name: str) -> Path:
    """Create ``base/name-NNN`` with the next unused number."""
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    taken = [int(p.name.rsplit("-", 1)[1]) for p in base.glob(f"{name}-*") if p.name.rsplit("-", 1)[1].isdigit()]
    n = max(taken, default=0) + 1
    while True:
        path = base / f"{name}-{n:03d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            n += 1


def git_blob_hash(path) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def dataset_hashes(data_dir) -> dict:
    root = Path(data_dir)
    return {p.name: git_blob_hash(p) for p in sorted(root.iterdir()) if p.is_file()}


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float))
    return path


def write_jsonl(path, records) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "variant", None) is not None and args.command != "transfer-matrix":
        updates["variant"] = args.variant
    if getattr(args, "deterministic", None) is not None:
        updates["deterministic"] = args.deterministic
    if getattr(args, "data", None) is not None:
        cfg = cfg.model_copy(update={"data": cfg.data.model_copy(update={"dataset_dir": Path(args.data)})})
    return cfg.model_copy(update=updates)


def _load_series(cfg: ExperimentConfig):
    if cfg.data.dataset_dir is None:
        raise ConfigError("data.dataset_dir is required (or pass --data)")
    if not (Path(cfg.data.dataset_dir) / "manifest.json").exists():
        raise DataIOError(f"no dataset manifest in {cfg.data.dataset_dir}")
    by_id = {s.domain_id: s for s in read_dataset(cfg.data.dataset_dir)}
    for role in ("source", "target"):
        did = getattr(cfg.data, role)
        if did not in by_id:
            raise ConfigError(f"data.{role}: domain {did!r} not in dataset (have {sorted(by_id)})")
    return by_id


def cmd_simulate(cfg: ExperimentConfig, out) -> Path:
    ids, gen_cfgs = cfg.synth.domain_configs()
    s = cfg.synth
    series, _ = make_domain_family(s.D, s.k, s.edge_density, gen_cfgs, s.structure_jitter, s.seed, ids)
    out_dir = versioned_dir(out, "simulate")
    write_dataset(out_dir, series)
    (out_dir / "config.yaml").write_text(dump_config(cfg))
    return out_dir


def cmd_train(cfg: ExperimentConfig, out) -> Path:
    by_id = _load_series(cfg)
    source, target = by_id[cfg.data.source], by_id[cfg.data.target]
    k = cfg.synth.k
    task = prepare_task(source, target, cfg.data.to_data_config(), k, cfg.seed)
    ledger = run_variant(
        task,
        cfg.variant,
        cfg.model.gca_kwargs(k),
        cfg.train_config(),
        cfg.seed,
        cfg.model.lstm_hidden,
        monitor=True,
    )
    result = ledger.pop("_result")
    out_dir = versioned_dir(out, f"train-{cfg.variant}")
    result.checkpoint.save(out_dir / "checkpoint.zip")
    write_jsonl(out_dir / "train_log.jsonl", ledger["loss_history"])
    write_jsonl(out_dir / "epochs.jsonl", ledger["epochs"])
    task.source.split.save_manifest(out_dir / "split_source.json")
    task.target.split.save_manifest(out_dir / "split_target.json")
    ledger["ablation"] = cfg.variant != "gca"
    ledger["data_files"] = dataset_hashes(cfg.data.dataset_dir)
    ledger["experiment_config"] = cfg.model_dump(mode="json")
    write_json(out_dir / "ledger.json", ledger)
    (out_dir / "config.yaml").write_text(dump_config(cfg))
    return out_dir


def cmd_evaluate(cfg: ExperimentConfig, checkpoint, out) -> Path:
    by_id = _load_series(cfg)
    try:
        ckpt = Checkpoint.load(checkpoint)
    except (OSError, KeyError) as exc:
        raise DataIOError(f"cannot read checkpoint {checkpoint}: {exc}") from exc
    report = evaluate_checkpoint(
        ckpt,
        by_id[cfg.data.source],
        by_id[cfg.data.target],
        cfg.data.to_data_config(),
        cfg.seed,
        cfg.trainer.eval_horizon,
    )
    report.update(schema="gca.evaluation.v1", checkpoint=str(checkpoint), config_hash=ckpt.config_hash)
    out_dir = versioned_dir(out, "evaluate")
    write_json(out_dir / "evaluation.json", report)
    return out_dir


def cmd_transfer_matrix(cfg: ExperimentConfig, out, with_baseline: bool = False) -> Path:
    by_id = _load_series(cfg) if cfg.data.dataset_dir is not None else None
    if by_id is None:
        ids, gen_cfgs = cfg.synth.domain_configs()
        s = cfg.synth
        series, _ = make_domain_family(s.D, s.k, s.edge_density, gen_cfgs, s.structure_jitter, s.seed, ids)
    else:
        series = list(by_id.values())
    variants = list(cfg.sweep.variants)
    if (with_baseline or cfg.sweep.with_baseline) and "lstm-st" not in variants:
        variants.append("lstm-st")
    k = cfg.synth.k
    result = transfer_matrix(
        series,
        cfg.data.to_data_config(),
        cfg.model.gca_kwargs(k),
        cfg.train_config(),
        cfg.sweep.seeds,
        variants,
        k,
        cfg.model.lstm_hidden,
    )
    out_dir = versioned_dir(out, "transfer-matrix")
    result["experiment_config"] = cfg.model_dump(mode="json")
    write_json(out_dir / "matrix.json", result)
    (out_dir / "table.txt").write_text(format_table(result["table"]) + "\n")
    (out_dir / "config.yaml").write_text(dump_config(cfg))
    return out_dir


def cmd_plot(ledgers: Sequence, out) -> Path:
    from gca.plots import plot_ledger

    out_dir = versioned_dir(out, "plot")
    for i, path in enumerate(ledgers):
        try:
            ledger = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataIOError(f"cannot read ledger {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataIOError(f"{path}: not valid JSON: {exc}") from exc
        cells = ledger.get("cells") if isinstance(ledger, dict) else None
        if cells is not None:
            for j, cell in enumerate(c for c in cells if c.get("variant") != "lstm-st"):
                stem = f"{i:02d}-{cell['task'].replace('->', '_to_')}-{cell['variant']}-s{cell['seed']}"
                plot_ledger(cell, out_dir, stem)
        else:
            plot_ledger(ledger, out_dir, f"{i:02d}-{Path(path).parent.name or 'ledger'}")
    return out_dir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=True, data=True):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default="runs", help="parent directory for versioned outputs")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
        if variant:
            p.add_argument("--variant", choices=VARIANT_CHOICES)
        if data:
            p.add_argument("--data", help="dataset directory (overrides data.dataset_dir)")

    common(sub.add_parser("simulate", help="generate a synthetic multi-domain dataset"), variant=False, data=False)
    common(sub.add_parser("train", help="train one variant on the configured source/target pair"))
    p = sub.add_parser("evaluate", help="score a checkpoint on the target test split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("transfer-matrix", help="train every ordered domain pair over the sweep seeds")
    common(p)
    p.add_argument("--with-baseline", action="store_true", help="add the pooled LSTM baseline column")
    p = sub.add_parser("plot", help="render figures from result ledgers")
    p.add_argument("ledgers", nargs="+")
    p.add_argument("--out", default="runs")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> Path:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "plot":
        return cmd_plot(args.ledgers, args.out)
    cfg = _apply_overrides(load_config(args.config), args)
    if args.command == "transfer-matrix" and args.variant is not None:
        cfg = cfg.model_copy(update={"sweep": cfg.sweep.model_copy(update={"variants": [args.variant]}), "variant": "gca"})
    # re-validate so overrides obey the same rules as the file
    cfg = parse_config(cfg.model_dump())
    if args.command == "simulate":
        return cmd_simulate(cfg, args.out)
    if args.command == "train":
        return cmd_train(cfg, args.out)
    if args.command == "evaluate":
        return cmd_evaluate(cfg, args.checkpoint, args.out)
    return cmd_transfer_matrix(cfg, args.out, args.with_baseline)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        out = run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GCAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
