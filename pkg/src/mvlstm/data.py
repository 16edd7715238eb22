"""CSV ingestion, differencing, chronological splitting, normalization and
sliding-window construction.

The split happens on raw rows before windowing, so no window ever straddles a
split boundary, and normalization statistics come from training rows only.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError


@dataclass
class RawSeries:
    """A multi-variable series; the target is always the last column."""

    names: list[str]
    values: np.ndarray  # [L,N] float64

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class SequenceBatch:
    """Windowed sequences: inputs[b] are the T rows before end position indices[b]."""

    inputs: np.ndarray   # [B,T,N]
    targets: np.ndarray  # [B] target-column value at the end position
    indices: np.ndarray  # [B] original end positions (row of the target)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class SplitSpec:
    train: float = 0.7
    valid: float = 0.1
    test: float = 0.2

    def validate(self) -> None:
        total = self.train + self.valid + self.test
        if abs(total - 1.0) > 1e-9 or min(self.train, self.valid, self.test) < 0:
            raise ConfigError(
                f"split fractions must be nonnegative and sum to 1, got "
                f"({self.train}, {self.valid}, {self.test})")


@dataclass
class ColumnStats:
    """Per-column z-score statistics, computed from the training split."""

    mean: np.ndarray
    std: np.ndarray  # constant columns carry std 1 so the transform is defined

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        return y * self.std[-1] + self.mean[-1]


@dataclass
class SplitData:
    batch: SequenceBatch          # normalized inputs/targets
    targets_orig: np.ndarray      # [B] targets in original units


@dataclass
class Datasets:
    train: SplitData
    valid: SplitData
    test: SplitData
    stats: ColumnStats
    names: list[str] = field(default_factory=list)
    window_T: int = 0

    def split(self, name: str) -> SplitData:
        if name not in ("train", "valid", "test"):
            raise ConfigError(f"unknown split '{name}', expected train|valid|test")
        return getattr(self, name)


def load_csv(path: str, target_column: str, fill_policy: str = "strict") -> RawSeries:
    """Read a UTF-8, comma-separated, single-header CSV into a RawSeries.

    The target column is moved to the last position.  Cells that fail to
    parse as floats are an error under ``strict``, or copied from the
    previous row under ``ffill``.
    """
    if fill_policy not in ("strict", "ffill"):
        raise ConfigError(f"fill_policy must be 'strict' or 'ffill', got '{fill_policy}'")
    if not os.path.exists(path):
        raise DataError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV: {path}") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(
                f"target column '{target_column}' not in header {header}")
        rows = []
        for row_idx, row in enumerate(reader, start=2):  # 1-based incl. header
            if len(row) != len(header):
                raise DataError(
                    f"row {row_idx}: expected {len(header)} cells, got {len(row)}")
            parsed = np.empty(len(header))
            for col_idx, cellval in enumerate(row):
                try:
                    parsed[col_idx] = float(cellval)
                except ValueError:
                    if fill_policy == "ffill" and rows:
                        parsed[col_idx] = rows[-1][col_idx]
                    else:
                        raise DataError(
                            f"row {row_idx}, column '{header[col_idx]}': "
                            f"non-numeric cell {cellval!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"CSV has no data rows: {path}")
    values = np.vstack(rows)
    order = [i for i, name in enumerate(header) if name != target_column]
    order.append(header.index(target_column))
    return RawSeries(names=[header[i] for i in order],
                     values=np.ascontiguousarray(values[:, order]))


def write_csv(path: str, series: RawSeries) -> None:
    """Write a RawSeries; floats use shortest round-trip repr so a read-back
    is value-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(series.names)
        for row in series.values:
            writer.writerow([repr(float(v)) for v in row])


def difference(series: RawSeries, enabled: bool = True) -> RawSeries:
    """First-order difference of every column (length L-1); identity if disabled."""
    if not enabled:
        return series
    if series.length < 2:
        raise ContractError(f"difference needs at least 2 rows, got {series.length}")
    return RawSeries(names=list(series.names),
                     values=np.diff(series.values, axis=0))


def window(series: RawSeries, T: int, stride: int = 1) -> SequenceBatch:
    """All windows of T input rows plus the next-step target, advancing by
    ``stride`` positions; stride 1 yields exactly L - T windows."""
    if T < 2:
        raise ContractError(f"window size T must be >= 2, got {T}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    L = series.length
    if L < T + 1:
        raise ContractError(f"need at least T+1={T + 1} rows, got {L}")
    ends = np.arange(T, L, stride)
    inputs = np.empty((len(ends), T, series.n_vars))
    for b, p in enumerate(ends):
        inputs[b] = series.values[p - T:p]
    targets = series.values[ends, -1]
    return SequenceBatch(inputs=inputs, targets=targets, indices=ends)


def compute_stats(values: np.ndarray) -> ColumnStats:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = np.ptp(values, axis=0) == 0
    mean = np.where(constant, values[0], mean)  # exact zero after transform
    std = np.where(constant | (std == 0), 1.0, std)
    return ColumnStats(mean=mean, std=std)


def chrono_split(series: RawSeries, spec: SplitSpec) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Earliest rows to train, then validation, then test; no shuffling."""
    spec.validate()
    L = series.length
    n_train = int(L * spec.train)
    n_valid = int(L * spec.valid)
    parts = (series.values[:n_train],
             series.values[n_train:n_train + n_valid],
             series.values[n_train + n_valid:])
    return tuple(RawSeries(names=list(series.names), values=p) for p in parts)


def prepare(series: RawSeries, window_T: int, split: SplitSpec | None = None,
            stride: int = 1) -> Datasets:
    """Split -> normalize on train stats -> window each split."""
    split = split or SplitSpec()
    train_raw, valid_raw, test_raw = chrono_split(series, split)
    stats = compute_stats(train_raw.values)

    def build(part: RawSeries) -> SplitData:
        norm = RawSeries(names=part.names, values=stats.transform(part.values))
        batch = window(norm, window_T, stride)
        targets_orig = part.values[batch.indices, -1]
        return SplitData(batch=batch, targets_orig=targets_orig)

    return Datasets(train=build(train_raw), valid=build(valid_raw),
                    test=build(test_raw), stats=stats,
                    names=list(series.names), window_T=window_T)
