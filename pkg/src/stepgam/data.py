"""Tabular ingestion, per-feature sort orders, quantile bins and residual aggregation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numba import njit, prange

from .flsa import WeightedSignal

logger = logging.getLogger(__name__)

DEFAULT_MAX_BINS = 256
MISSING_POLICIES = ("error", "drop")


class DataError(ValueError):
    """Input data cannot be turned into a valid dataset."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix stored column-major as ``columns[j]`` plus the target."""

    feature_names: tuple
    columns: np.ndarray  # shape (p, n)
    target: np.ndarray
    target_name: str = "y"

    def __post_init__(self):
        columns = np.ascontiguousarray(np.atleast_2d(np.asarray(self.columns, dtype=np.float64)))
        target = np.ascontiguousarray(self.target, dtype=np.float64)
        names = tuple(str(f) for f in self.feature_names)
        if columns.shape[0] != len(names):
            raise DataError(f"{len(names)} feature names for {columns.shape[0]} columns")
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if target.ndim != 1 or columns.shape[1] != target.size:
            raise DataError("every column must have the same length as the target")
        if columns.shape[0] < 1:
            raise DataError("dataset needs at least one feature")
        if target.size < 2:
            raise DataError("dataset needs at least two rows")
        if not (np.all(np.isfinite(columns)) and np.all(np.isfinite(target))):
            raise DataError("all feature and target values must be finite")
        columns.flags.writeable = False
        target.flags.writeable = False
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_arrays(cls, X, y, feature_names=None, target_name="y"):
        """Build from a row-major ``(n, p)`` matrix."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(X.shape[1])]
        return cls(tuple(feature_names), X.T, np.asarray(y, dtype=np.float64), target_name)

    @property
    def n(self) -> int:
        return self.target.size

    @property
    def p(self) -> int:
        return self.columns.shape[0]

    def subset_rows(self, rows) -> "Dataset":
        return Dataset(self.feature_names, self.columns[:, rows], self.target[rows], self.target_name)

    def select_features(self, names) -> np.ndarray:
        """Row-major matrix of the named columns (for prediction)."""
        index = {f: j for j, f in enumerate(self.feature_names)}
        return self.columns[[index[f] for f in names]].T


def load_csv(path, target_name: str, missing_policy: str = "error") -> Dataset:
    """Read a headed, comma-separated numeric file.

    ``missing_policy="drop"`` removes rows with blank cells and logs how many
    went; ``"error"`` rejects them.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"missing_policy must be one of {MISSING_POLICIES}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    if target_name not in frame.columns:
        raise DataError(f"target {target_name!r} not among columns {list(frame.columns)}")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & frame.notna()
    if bad.any().any():
        col = bad.any().idxmax()
        row = int(bad[col].values.argmax())
        raise DataError(f"non-numeric value {frame[col].iloc[row]!r} in column {col!r}, data row {row + 1}")
    missing = numeric.isna().any(axis=1)
    if missing.any():
        if missing_policy == "error":
            row = int(missing.values.argmax())
            raise DataError(f"missing value in data row {row + 1} (use the drop policy to skip such rows)")
        logger.warning("dropped %d row(s) with missing values", int(missing.sum()))
        numeric = numeric.loc[~missing]

    features = [c for c in numeric.columns if c != target_name]
    return Dataset(
        tuple(features),
        numeric[features].to_numpy(dtype=np.float64).T,
        numeric[target_name].to_numpy(dtype=np.float64),
        target_name,
    )


def build_sorted_index(dataset: Dataset) -> list:
    """Stable ascending sort permutation for every feature."""
    return [np.argsort(col, kind="stable") for col in dataset.columns]


@dataclass(frozen=True)
class FeatureBins:
    """Ordered bins of one feature.

    ``lower``/``upper`` are the smallest/largest training value in each bin.
    """

    row_to_bin: np.ndarray
    counts: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.counts.size


@dataclass(frozen=True)
class BinMap:
    features: list
    max_bins: int | None
    # packed copies for the numba kernels
    codes: np.ndarray = field(repr=False)  # (p, n) int64
    offsets: np.ndarray = field(repr=False)  # (p + 1,) into flat bin arrays
    flat_counts: np.ndarray = field(repr=False)

    def __getitem__(self, j) -> FeatureBins:
        return self.features[j]

    def __len__(self):
        return len(self.features)

    @property
    def n_bins(self) -> np.ndarray:
        return np.diff(self.offsets)


def _bin_one(x, order, max_bins):
    xs = x[order]
    n = xs.size
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    run_lengths = np.diff(np.r_[starts, n])
    if max_bins is None or starts.size <= max_bins:
        cuts = starts
    else:
        target = -(-n // max_bins)
        cuts = [0]
        filled = 0
        for start, length in zip(starts, run_lengths):
            if filled >= target:
                cuts.append(start)
                filled = 0
            filled += length
        cuts = np.asarray(cuts)
    sorted_bin = np.zeros(n, dtype=np.int64)
    sorted_bin[cuts[1:]] = 1
    sorted_bin = np.cumsum(sorted_bin)
    row_to_bin = np.empty(n, dtype=np.int64)
    row_to_bin[order] = sorted_bin
    ends = np.r_[cuts[1:], n]
    return FeatureBins(
        row_to_bin=row_to_bin,
        counts=(ends - cuts).astype(np.int64),
        lower=xs[cuts].copy(),
        upper=xs[ends - 1].copy(),
    )


def build_bins(dataset: Dataset, sorted_index=None, max_bins: int | None = DEFAULT_MAX_BINS) -> BinMap:
    """Quantile-bin every feature without ever splitting tied values.

    Bins are filled greedily in sorted order with runs of equal values until
    each holds at least ``ceil(n / max_bins)`` rows. When a feature has at
    most ``max_bins`` distinct values (or ``max_bins`` is None) every
    distinct value gets its own bin.
    """
    if max_bins is not None and max_bins < 2:
        raise ValueError("max_bins must be at least 2")
    if sorted_index is None:
        sorted_index = build_sorted_index(dataset)
    features = [_bin_one(x, order, max_bins) for x, order in zip(dataset.columns, sorted_index)]
    codes = np.ascontiguousarray(np.stack([f.row_to_bin for f in features]))
    offsets = np.r_[0, np.cumsum([f.n_bins for f in features])].astype(np.int64)
    flat_counts = np.concatenate([f.counts for f in features]).astype(np.float64)
    for arr in (codes, offsets, flat_counts):
        arr.flags.writeable = False
    return BinMap(features, max_bins, codes, offsets, flat_counts)


def bin_sums(values, row_to_bin, n_bins) -> np.ndarray:
    return np.bincount(row_to_bin, weights=values, minlength=n_bins)


@njit(parallel=True, cache=True)
def all_bin_sums(residual, codes, offsets):
    """Per-bin residual sums for every feature, packed along ``offsets``.

    One thread owns each feature, so the result does not depend on the
    thread count.
    """
    p, n = codes.shape
    out = np.zeros(offsets[-1])
    for j in prange(p):
        base = offsets[j]
        row = codes[j]
        for i in range(n):
            out[base + row[i]] += residual[i]
    return out


def aggregate_residual(residual, j: int, bin_map: BinMap) -> WeightedSignal:
    """Bin means of ``residual`` for feature ``j``, weighted by bin counts."""
    fb = bin_map[j]
    sums = bin_sums(np.asarray(residual, dtype=np.float64), fb.row_to_bin, fb.n_bins)
    return WeightedSignal(sums / fb.counts, fb.counts.astype(np.float64))
