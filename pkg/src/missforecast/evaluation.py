"""Scoring and resampling: squared-error metrics, pattern-stratified
subgroups, leave-one-out cross-validation and the percentile bootstrap.

One MetricRecord is one CSV row; the column order is part of the file
contract consumed downstream:

    scenario,procedure,target_prop,replicate,subgroup,metric,value,
    ci_low,ci_high,n_subgroup
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .core import MaskedDataset, Pattern
from .errors import InputError, MissforecastError, UnsupportedPatternError

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "scenario", "procedure", "target_prop", "replicate", "subgroup",
    "metric", "value", "ci_low", "ci_high", "n_subgroup",
)

SUBGROUP_UNRELIABLE_N = 10  # bootstrap widths below this size are indicative


@dataclass(frozen=True)
class MetricRecord:
    scenario: str
    procedure: str
    target_prop: float
    replicate: int
    subgroup: str            # overall | complete | incomplete | pattern(BITS)
    metric: str              # mse | brier
    value: float
    ci_low: float | None = None
    ci_high: float | None = None
    n_subgroup: int | None = None

    def __post_init__(self):
        if self.value < 0:
            raise InputError(f"{self.metric} cannot be negative: {self.value}")
        if (self.ci_low is None) != (self.ci_high is None):
            raise InputError("ci_low and ci_high must come together")
        if self.ci_low is not None and not (
                self.ci_low <= self.value <= self.ci_high):
            raise InputError(
                f"interval [{self.ci_low}, {self.ci_high}] must contain {self.value}"
            )

    def as_row(self):
        fmt = lambda v: "" if v is None else repr(float(v))
        return [
            self.scenario, self.procedure, repr(float(self.target_prop)),
            str(self.replicate), self.subgroup, self.metric,
            repr(float(self.value)), fmt(self.ci_low), fmt(self.ci_high),
            "" if self.n_subgroup is None else str(self.n_subgroup),
        ]


def write_metrics_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.as_row())


def read_metrics_csv(path) -> list[MetricRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(MetricRecord(
                scenario=row["scenario"], procedure=row["procedure"],
                target_prop=float(row["target_prop"]),
                replicate=int(row["replicate"]), subgroup=row["subgroup"],
                metric=row["metric"], value=float(row["value"]),
                ci_low=float(row["ci_low"]) if row["ci_low"] else None,
                ci_high=float(row["ci_high"]) if row["ci_high"] else None,
                n_subgroup=int(row["n_subgroup"]) if row["n_subgroup"] else None,
            ))
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mse(pred_means, truths) -> float:
    pred_means = np.asarray(pred_means, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if pred_means.shape != truths.shape or pred_means.size == 0:
        raise InputError("predictions and truths must be equal-length, nonempty")
    return float(np.mean((pred_means - truths) ** 2))


def brier(pred_probs, outcomes) -> float:
    pred_probs = np.asarray(pred_probs, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    if pred_probs.shape != outcomes.shape or pred_probs.size == 0:
        raise InputError("probabilities and outcomes must be equal-length, nonempty")
    if ((pred_probs < 0) | (pred_probs > 1)).any():
        raise InputError("probabilities must lie in [0, 1]")
    if set(np.unique(outcomes)) - {0.0, 1.0}:
        raise InputError("outcomes must be binary 0/1")
    return float(np.mean((pred_probs - outcomes) ** 2))


def per_row_squared_error(points, truths) -> np.ndarray:
    return (np.asarray(points, dtype=float) - np.asarray(truths, dtype=float)) ** 2


# ---------------------------------------------------------------------------
# subgroup stratification
# ---------------------------------------------------------------------------

def pattern_subgroup_name(pattern: Pattern) -> str:
    return f"pattern({pattern})"


def stratify(per_row_scores, patterns) -> dict[str, tuple[float, int]]:
    """Aggregate per-row scores overall, by completeness, and per pattern.

    Returns subgroup name -> (mean score, subgroup size). The incomplete
    subgroup is absent when every row is fully observed.
    """
    scores = np.asarray(per_row_scores, dtype=float)
    patterns = list(patterns)
    if scores.shape != (len(patterns),):
        raise InputError("one pattern per score row is required")
    out = {"overall": (float(scores.mean()), len(patterns))}
    complete = np.array([p.is_complete for p in patterns])
    if complete.any():
        out["complete"] = (float(scores[complete].mean()), int(complete.sum()))
    if (~complete).any():
        out["incomplete"] = (float(scores[~complete].mean()), int((~complete).sum()))
    seen: dict[Pattern, list[int]] = {}
    for i, p in enumerate(patterns):
        seen.setdefault(p, []).append(i)
    for p in sorted(seen, key=lambda q: q.bits):
        idx = np.asarray(seen[p])
        out[pattern_subgroup_name(p)] = (float(scores[idx].mean()), int(idx.size))
    return out


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

def bootstrap_ci(per_row_scores, b: int = 10_000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval for the mean score over row resamples."""
    scores = np.asarray(per_row_scores, dtype=float)
    if scores.size == 0:
        raise InputError("need at least one score")
    if b < 100:
        raise InputError("need at least 100 bootstrap replicates")
    if not (0 < level < 1):
        raise InputError("level must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(991,)))
    n = scores.size
    means = np.empty(b)
    chunk = max(1, min(b, int(5e7) // max(n, 1)))
    done = 0
    while done < b:
        take = min(chunk, b - done)
        idx = rng.integers(0, n, size=(take, n))
        means[done:done + take] = scores[idx].mean(axis=1)
        done += take
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    point = float(scores.mean())
    return float(min(low, point)), float(max(high, point))


# ---------------------------------------------------------------------------
# leave-one-out cross-validation
# ---------------------------------------------------------------------------

@dataclass
class LoocvResult:
    points: np.ndarray               # per-row point predictions
    scores: np.ndarray               # per-row squared errors
    patterns: list                   # per-row Pattern
    fallbacks: dict                  # row -> reason the fold fell back
    skipped: dict                    # row -> reason the row was not scored
    subgroups: dict                  # subgroup -> (mean score, n)

    @property
    def overall(self) -> float:
        return float(self.scores[~np.isnan(self.scores)].mean())


def _intercept_only_point(ds: MaskedDataset) -> float:
    # prevalence for a binary outcome, plain mean for a continuous one
    vals = ds.y[~ds.mask_y]
    if vals.size == 0:
        raise InputError("no observed outcome in the fold")
    return float(vals.mean())


def loocv(ds: MaskedDataset, train_fn, outcome_kind: str = "bernoulli",
          master_seed: int = 0) -> LoocvResult:
    """Per-row prediction from a model trained on all other rows.

    ``train_fn(fold_ds, seed)`` must return a Forecaster; stochastic
    procedures are reseeded per fold from the master seed, keeping the whole
    loop deterministic. Folds whose model cannot be trained, or cannot serve
    the held-out row's pattern, fall back to the intercept-only model of the
    fold with a logged warning. Rows with a masked outcome are skipped.
    """
    if ds.n < 2:
        raise InputError("leave-one-out needs at least two rows")
    points = np.full(ds.n, np.nan)
    scores = np.full(ds.n, np.nan)
    patterns = ds.row_patterns()
    fallbacks, skipped = {}, {}
    n_trained = 0
    for i in range(ds.n):
        if ds.mask_y[i]:
            skipped[i] = "outcome missing"
            continue
        fold_rows = np.concatenate([np.arange(i), np.arange(i + 1, ds.n)])
        fold = ds.subset(fold_rows)
        seed_i = np.random.SeedSequence(master_seed, spawn_key=(i,))
        obs_idx, obs_vals = ds.observed_values(i)
        try:
            fc = train_fn(fold, np.random.default_rng(seed_i))
            point = fc.predict(patterns[i], obs_vals).point
        except (MissforecastError, np.linalg.LinAlgError) as exc:
            reason = f"{type(exc).__name__}: {exc}"
            log.warning("fold %d fell back to intercept-only (%s)", i, reason)
            fallbacks[i] = reason
            point = _intercept_only_point(fold)
        points[i] = point
        n_trained += 1
    if n_trained == 0:
        raise InputError("every fold failed or was skipped")
    ok = ~np.isnan(points)
    truth = np.where(ds.mask_y, np.nan, ds.y)
    scores[ok] = (points[ok] - truth[ok]) ** 2
    sub = stratify(scores[ok], [patterns[i] for i in np.where(ok)[0]])
    return LoocvResult(points=points, scores=scores, patterns=patterns,
                       fallbacks=fallbacks, skipped=skipped, subgroups=sub)
