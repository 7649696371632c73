"""Normalization, windowing and semi-supervised splitting of series."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from gca.errors import (
    ConfigError,
    ConstantColumnError,
    DataIOError,
    EmptyPartitionError,
    ParseError,
    TooShortError,
)
from gca.synth import RawSeries


@dataclass(frozen=True)
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScoreStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def zscore_fit_apply(series: RawSeries, train_rows: Optional[int] = None) -> tuple[RawSeries, ZScoreStats]:
    """Z-score every column with statistics from the first ``train_rows`` rows.

    Uses the population standard deviation (``ddof=0``).
    """
    n = series.T if train_rows is None else train_rows
    if n < 2 or n > series.T:
        raise TooShortError(f"need 2 <= train_rows <= T, got {n} for T={series.T}")
    fit = series.values[:n]
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    bad = np.flatnonzero(std < 1e-12)
    if bad.size:
        raise ConstantColumnError(f"{series.domain_id}: constant column(s) {bad.tolist()}")
    stats = ZScoreStats(mean, std)
    normalized = RawSeries(stats.apply(series.values), series.domain_id, series.ground_truth, series.config)
    return normalized, stats


@dataclass(frozen=True)
class SeriesWindow:
    """Past block ``x`` (t_in, D) and the contiguous future block ``y`` (horizon, D)."""

    x: np.ndarray
    y: np.ndarray
    domain_id: str
    start: int
    labeled: bool = True

    def with_label(self, labeled: bool) -> "SeriesWindow":
        return SeriesWindow(self.x, self.y, self.domain_id, self.start, labeled)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def n_windows(T: int, t_in: int, horizon: int, stride: int = 1) -> int:
    if T < t_in + horizon:
        raise TooShortError(f"series of length {T} shorter than t_in + horizon = {t_in + horizon}")
    return (T - t_in - horizon) // stride + 1


def make_windows(series: RawSeries, t_in: int, horizon: int = 1, stride: int = 1) -> list[SeriesWindow]:
    if t_in < 1 or horizon < 1 or stride < 1:
        raise ConfigError("t_in, horizon and stride must be positive")
    count = n_windows(series.T, t_in, horizon, stride)
    values = series.values
    out = []
    for i in range(count):
        s = i * stride
        out.append(
            SeriesWindow(
                _frozen(values[s : s + t_in]),
                _frozen(values[s + t_in : s + t_in + horizon]),
                series.domain_id,
                s,
            )
        )
    return out


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    target_label_frac: float = 0.05

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0 < f < 1 for f in fracs):
            raise ConfigError("split fractions must lie in (0, 1)")
        if abs(sum(fracs) - 1) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if not 0 < self.target_label_frac <= 1:
            raise ConfigError("target_label_frac must lie in (0, 1]")

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = int(math.floor(self.train_frac * n))
        n_val = int(math.floor(self.val_frac * n))
        return n_train, n_val, n - n_train - n_val


@dataclass
class Split:
    train: list[SeriesWindow]
    val: list[SeriesWindow]
    test: list[SeriesWindow]
    role: str
    seed: int
    indices: dict = field(default_factory=dict)

    @property
    def labeled_train(self) -> list[SeriesWindow]:
        return [w for w in self.train if w.labeled]

    @property
    def unlabeled_train(self) -> list[SeriesWindow]:
        return [w for w in self.train if not w.labeled]

    def manifest(self) -> dict:
        def rows(ws):
            return [{"start": w.start, "labeled": bool(w.labeled)} for w in ws]

        return {
            "role": self.role,
            "seed": self.seed,
            "train": rows(self.train),
            "val": rows(self.val),
            "test": rows(self.test),
        }

    def save_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest()))


def train_row_count(T: int, spec: SplitSpec, t_in: int, horizon: int, stride: int = 1) -> int:
    """Number of leading rows touched by training windows; normalization fits on these."""
    n_train, _, _ = spec.sizes(n_windows(T, t_in, horizon, stride))
    if n_train == 0:
        raise EmptyPartitionError("empty training partition")
    return (n_train - 1) * stride + t_in + horizon


def split_semi_supervised(
    windows: Sequence[SeriesWindow],
    spec: SplitSpec,
    role: Literal["source", "target"],
    seed: int,
) -> Split:
    """Contiguous train/val/test split; for the target only a random subset of train is labeled.

    The target receives exactly ``round(target_label_frac * n_train)`` labeled
    windows (at least one). Validation and test windows always keep their labels.
    """
    if role not in ("source", "target"):
        raise ConfigError(f"role must be 'source' or 'target', got {role!r}")
    n_train, n_val, n_test = spec.sizes(len(windows))
    if min(n_train, n_val, n_test) == 0:
        raise EmptyPartitionError(f"split of {len(windows)} windows leaves an empty partition")
    train = list(windows[:n_train])
    val = list(windows[n_train : n_train + n_val])
    test = list(windows[n_train + n_val :])
    if role == "target":
        n_lab = max(1, int(math.floor(spec.target_label_frac * n_train + 0.5)))
        rng = np.random.default_rng(seed)
        chosen = set(rng.choice(n_train, size=n_lab, replace=False).tolist())
        train = [w.with_label(i in chosen) for i, w in enumerate(train)]
    else:
        train = [w.with_label(True) for w in train]
    return Split(train, val, test, role, seed)


def stack_windows(windows: Sequence[SeriesWindow]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.x for w in windows]), np.stack([w.y for w in windows])


def ingest_csv(path, schema: Optional[Sequence[str]] = None, domain_id: Optional[str] = None) -> RawSeries:
    """Read a headered numeric CSV into a ``RawSeries``.

    ``schema`` selects and orders columns by name; by default all columns are used.
    Missing or non-numeric cells are rejected with their row/column location.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, 0, "empty file") from None
        if schema is None:
            cols = list(range(len(header)))
        else:
            missing = [c for c in schema if c not in header]
            if missing:
                raise ParseError(path, 1, 0, f"missing columns {missing}")
            cols = [header.index(c) for c in schema]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, len(row), f"expected {len(header)} fields")
            vals = []
            for c in cols:
                try:
                    v = float(row[c])
                except ValueError:
                    raise ParseError(path, lineno, c + 1, f"non-numeric value {row[c]!r}") from None
                if not math.isfinite(v):
                    raise ParseError(path, lineno, c + 1, f"non-finite value {row[c]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(path, 2, 0, "no data rows")
    return RawSeries(np.array(rows), domain_id or path.stem)
