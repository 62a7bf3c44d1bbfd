"""Domain types shared by every module.

A dataset is a numeric matrix plus an authoritative observation mask; the
matrix carries NaN sentinels in masked cells only as a defensive measure.
All reads of cell values must go through the guarded accessors, which fault
on masked cells instead of silently handing back the sentinel.

An observation pattern is the per-row bit vector over predictor columns
(0 = observed, 1 = missing), serialised little-endian over column order
everywhere (bit k of the string form belongs to column k).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    InputError,
    MaskedAccessError,
    UnsupportedPatternError,
)

MISSING_TOKENS = ("", "NA")


# ---------------------------------------------------------------------------
# Pattern
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Pattern:
    """Observation pattern over the predictor columns (0 observed, 1 missing)."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) == 0:
            raise InputError("pattern must cover at least one predictor")
        if any(b not in (0, 1) for b in self.bits):
            raise InputError(f"pattern bits must be 0/1, got {self.bits}")

    @classmethod
    def from_mask_row(cls, mask_row: Sequence[int]) -> "Pattern":
        return cls(tuple(int(bool(b)) for b in mask_row))

    @classmethod
    def from_string(cls, text: str) -> "Pattern":
        if not text or any(ch not in "01" for ch in text):
            raise InputError(f"pattern string must be nonempty 0/1, got {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @classmethod
    def complete(cls, p: int) -> "Pattern":
        return cls((0,) * p)

    @property
    def p(self) -> int:
        return len(self.bits)

    @property
    def is_complete(self) -> bool:
        return not any(self.bits)

    @property
    def n_missing(self) -> int:
        return sum(self.bits)

    @property
    def observed_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b == 0)

    @property
    def missing_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b == 1)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def partition(pattern: Pattern, values: Sequence[float], mask: Sequence[int]):
    """Split one row into observed (indices + values) and missing indices.

    The row's mask must equal the pattern; a mismatch is a contract violation.
    """
    values = np.asarray(values, dtype=float)
    mask_bits = tuple(int(bool(b)) for b in mask)
    if values.shape != (pattern.p,) or len(mask_bits) != pattern.p:
        raise ContractViolationError(
            f"row length {values.shape} does not match pattern length {pattern.p}"
        )
    if mask_bits != pattern.bits:
        raise ContractViolationError(
            f"row mask {mask_bits} does not match pattern {pattern.bits}"
        )
    obs_idx = list(pattern.observed_indices)
    return obs_idx, values[obs_idx].copy(), list(pattern.missing_indices)


# ---------------------------------------------------------------------------
# Predictive distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPrediction:
    """Predictive law of a continuous outcome; point prediction is the mean."""

    mean: float
    variance: float

    kind = "gaussian"

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise InputError(f"gaussian mean must be finite, got {self.mean}")
        if not (self.variance >= 0.0):
            raise InputError(f"gaussian variance must be >= 0, got {self.variance}")

    @property
    def point(self) -> float:
        return self.mean


@dataclass(frozen=True)
class BernoulliPrediction:
    """Predictive law of a binary outcome; point prediction is the probability."""

    prob: float

    kind = "bernoulli"

    def __post_init__(self):
        if not (0.0 <= self.prob <= 1.0):
            raise InputError(f"bernoulli prob must lie in [0,1], got {self.prob}")

    @property
    def point(self) -> float:
        return self.prob


PredictiveDistribution = GaussianPrediction | BernoulliPrediction


# ---------------------------------------------------------------------------
# MaskedDataset
# ---------------------------------------------------------------------------

def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MaskedDataset:
    """Predictor matrix + outcome vector with authoritative missingness masks.

    Masked cells hold NaN in ``x``/``y`` (defensive sentinel); the masks are
    authoritative. Instances are immutable and safe to share across workers.
    """

    x: np.ndarray
    mask_x: np.ndarray
    y: np.ndarray
    mask_y: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        mask_x = np.array(self.mask_x, dtype=bool)
        mask_y = np.array(self.mask_y, dtype=bool)
        if x.ndim != 2:
            raise InputError(f"x must be 2-D, got shape {x.shape}")
        n, p = x.shape
        if n < 1 or p < 1:
            raise InputError(f"need n >= 1 and p >= 1, got {x.shape}")
        if mask_x.shape != (n, p):
            raise InputError(f"mask_x shape {mask_x.shape} != x shape {(n, p)}")
        if y.shape != (n,) or mask_y.shape != (n,):
            raise InputError("y/mask_y must be length-n vectors")
        names = tuple(str(c) for c in self.column_names)
        if len(names) != p:
            raise InputError(f"{len(names)} column names for {p} columns")
        # sentinel discipline: masked cells always read NaN if touched raw
        x[mask_x] = np.nan
        y[mask_y] = np.nan
        if np.isnan(x[~mask_x]).any() or np.isnan(y[~mask_y]).any():
            raise InputError("NaN found in cells flagged as observed")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "mask_x", _readonly(mask_x))
        object.__setattr__(self, "mask_y", _readonly(mask_y))
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    # -- guarded access -----------------------------------------------------

    def value(self, i: int, j: int) -> float:
        if self.mask_x[i, j]:
            raise MaskedAccessError(f"cell ({i}, {j}) is masked")
        return float(self.x[i, j])

    def outcome(self, i: int) -> float:
        if self.mask_y[i]:
            raise MaskedAccessError(f"outcome of row {i} is masked")
        return float(self.y[i])

    def pattern(self, i: int) -> Pattern:
        return Pattern.from_mask_row(self.mask_x[i])

    def observed_values(self, i: int):
        """Observed indices and values of row i, in column order."""
        pat = self.pattern(i)
        obs = list(pat.observed_indices)
        return obs, self.x[i, obs].copy()

    def row_patterns(self) -> list[Pattern]:
        return [self.pattern(i) for i in range(self.n)]

    def subset(self, rows) -> "MaskedDataset":
        rows = np.asarray(rows)
        return MaskedDataset(
            x=self.x[rows],
            mask_x=self.mask_x[rows],
            y=self.y[rows],
            mask_y=self.mask_y[rows],
            column_names=self.column_names,
        )


def enumerate_patterns(ds: MaskedDataset) -> list[tuple[Pattern, int]]:
    """Tally observation patterns, sorted by count (desc) then bits (lex)."""
    counts: dict[Pattern, int] = {}
    for i in range(ds.n):
        pat = ds.pattern(i)
        counts[pat] = counts.get(pat, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].bits))


# ---------------------------------------------------------------------------
# Forecaster contract
# ---------------------------------------------------------------------------

class Forecaster:
    """Pattern-aware map from observed evidence to a predictive distribution.

    ``target`` is "MU" when the forecaster conditions on observed values only,
    "MC" when it also conditions on the observation pattern, and None when the
    procedure targets neither in general. ``predict`` must serve every pattern
    the forecaster declares supported and raise UnsupportedPatternError
    otherwise -- never fall back silently.
    """

    target: str | None = None
    procedure: str = "?"
    outcome_kind: str = "gaussian"

    def predict(self, pattern: Pattern, x_obs: np.ndarray) -> PredictiveDistribution:
        raise NotImplementedError

    def supports(self, pattern: Pattern) -> bool:
        try:
            self._check_pattern(pattern)
        except UnsupportedPatternError:
            return False
        return True

    def _check_pattern(self, pattern: Pattern) -> None:  # pragma: no cover
        return None

    # -- batch evaluation ----------------------------------------------------

    def predict_dataset(self, ds: MaskedDataset) -> np.ndarray:
        """Point predictions for every row of ``ds`` under its own pattern."""
        out = np.empty(ds.n)
        by_pattern: dict[Pattern, list[int]] = {}
        for i in range(ds.n):
            by_pattern.setdefault(ds.pattern(i), []).append(i)
        for pat, rows in by_pattern.items():
            obs = list(pat.observed_indices)
            block = ds.x[np.asarray(rows)][:, obs]
            out[np.asarray(rows)] = self._predict_block(pat, block)
        return out

    def _predict_block(self, pattern: Pattern, x_obs_block: np.ndarray) -> np.ndarray:
        return np.array(
            [self.predict(pattern, row).point for row in x_obs_block]
        )


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

def read_csv(path, outcome_col: str) -> MaskedDataset:
    """Read a dataset from CSV: header row, missing cells empty or "NA"."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if outcome_col not in header:
            raise InputError(f"{path}: outcome column {outcome_col!r} not in header {header}")
        y_idx = header.index(outcome_col)
        x_names = [h for k, h in enumerate(header) if k != y_idx]
        x_rows, mx_rows, y_vals, my_vals = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or row == [""]:  # blank line, not a row of empty cells
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            xs, ms = [], []
            for k, cell in enumerate(row):
                cell = cell.strip()
                missing = cell in MISSING_TOKENS
                if not missing:
                    try:
                        val = float(cell)
                    except ValueError:
                        raise InputError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
                if k == y_idx:
                    y_vals.append(np.nan if missing else val)
                    my_vals.append(missing)
                else:
                    xs.append(np.nan if missing else val)
                    ms.append(missing)
            x_rows.append(xs)
            mx_rows.append(ms)
    if not x_rows:
        raise InputError(f"{path}: no data rows")
    return MaskedDataset(
        x=np.array(x_rows, dtype=float),
        mask_x=np.array(mx_rows, dtype=bool),
        y=np.array(y_vals, dtype=float),
        mask_y=np.array(my_vals, dtype=bool),
        column_names=tuple(x_names),
    )


def write_csv(ds: MaskedDataset, path, outcome_col: str = "y") -> None:
    """Write a dataset to CSV with empty cells for missing values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.column_names) + [outcome_col])
        for i in range(ds.n):
            row = []
            for j in range(ds.p):
                row.append("" if ds.mask_x[i, j] else repr(float(ds.x[i, j])))
            row.append("" if ds.mask_y[i] else repr(float(ds.y[i])))
            writer.writerow(row)
