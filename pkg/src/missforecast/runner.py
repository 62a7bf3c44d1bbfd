"""Sweep orchestration: config parsing, seed management, cell execution,
CSV emission, and the application pipeline.

A sweep is a grid of independent cells (scenario, missingness proportion,
replicate). Every cell derives its random streams as a pure function of
(master seed, scenario index, grid index, replicate, role), so any cell can
be reproduced in isolation and a rerun writes a byte-identical metrics CSV.
Cell failures are recorded in the manifest and the run continues.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .core import MaskedDataset, Pattern, read_csv
from .datagen import SCENARIOS, GenerativeSpec, calibrate_intercept, make_pair
from .errors import InputError, UnsupportedPatternError
from .evaluation import (
    SUBGROUP_UNRELIABLE_N,
    MetricRecord,
    bootstrap_ci,
    loocv,
    stratify,
    write_metrics_csv,
)
from .oracle import OracleForecaster
from .procedures import PROCEDURES, ProcedureConfig, train

log = logging.getLogger(__name__)

DEFAULT_MASTER_SEED = 20260318


@dataclass(frozen=True)
class SweepConfig:
    scenarios: tuple[str, ...] = SCENARIOS
    prop_start: float = 0.0
    prop_stop: float = 0.7
    prop_step: float = 0.01
    n_train: int = 1000
    n_test: int = 1000
    replicates_per_point: int = 1
    procedures: tuple[ProcedureConfig, ...] = tuple(
        ProcedureConfig(name) for name in PROCEDURES
    )
    master_seed: int = DEFAULT_MASTER_SEED
    output_dir: str = "out"
    y_miss_prob: float = 0.0
    n_workers: int = 1
    oracle_nodes: int = 64

    def __post_init__(self):
        if not self.scenarios:
            raise InputError("need at least one scenario")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise InputError(f"unknown scenario {s!r}")
        if not (0.0 <= self.prop_start <= self.prop_stop <= 0.7):
            raise InputError("need 0 <= start <= stop <= 0.7")
        if self.prop_step <= 0:
            raise InputError("prop_step must be > 0")
        if self.replicates_per_point < 1:
            raise InputError("replicates_per_point must be >= 1")
        if self.n_train < 10 or self.n_test < 10:
            raise InputError("n_train and n_test must be >= 10")

    def grid(self) -> list[float]:
        count = int(np.floor((self.prop_stop - self.prop_start) / self.prop_step
                             + 1e-9)) + 1
        return [round(self.prop_start + k * self.prop_step, 10)
                for k in range(count)]


def load_sweep_config(path=None, paper_scale: bool = False,
                      overrides: dict | None = None) -> SweepConfig:
    """Build a SweepConfig from a TOML file plus CLI overrides."""
    raw = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise InputError(f"{path}: bad TOML: {exc}") from exc
    options = raw.pop("options", {})
    names = raw.pop("procedures", list(PROCEDURES))
    procedures = []
    for name in names:
        opts = options.get(name, {})
        try:
            procedures.append(ProcedureConfig(name=name, **opts))
        except TypeError as exc:
            raise InputError(f"bad options for procedure {name!r}: {exc}") from exc
    known = {f.name for f in dataclasses.fields(SweepConfig)}
    bad = set(raw) - known
    if bad:
        raise InputError(f"unknown config keys: {sorted(bad)}")
    if "scenarios" in raw:
        raw["scenarios"] = tuple(raw["scenarios"])
    cfg = SweepConfig(procedures=tuple(procedures), **raw)
    if paper_scale:
        cfg = replace(cfg, prop_step=0.001)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


# ---------------------------------------------------------------------------
# cell execution
# ---------------------------------------------------------------------------

_SUBGROUP_RANK = {"overall": 0, "complete": 1, "incomplete": 2}


def _record_sort_key(rec: MetricRecord):
    return (
        rec.scenario, rec.target_prop, rec.replicate, rec.procedure,
        _SUBGROUP_RANK.get(rec.subgroup, 3), rec.subgroup, rec.metric,
    )


def _cell_seed(master: int, *key) -> int:
    return int(np.random.SeedSequence(master, spawn_key=tuple(key))
               .generate_state(1, dtype=np.uint64)[0])


def _supported_scores(fc, test: MaskedDataset):
    """Per-row squared errors; rows with unsupported patterns are dropped."""
    points = np.full(test.n, np.nan)
    by_pattern: dict[Pattern, list[int]] = {}
    for i in range(test.n):
        by_pattern.setdefault(test.pattern(i), []).append(i)
    for pattern, rows in by_pattern.items():
        rows = np.asarray(rows)
        obs = list(pattern.observed_indices)
        try:
            points[rows] = fc._predict_block(pattern, test.x[rows][:, obs])
        except UnsupportedPatternError:
            continue
    ok = ~np.isnan(points)
    scores = (points[ok] - test.y[ok]) ** 2
    patterns = [test.pattern(i) for i in np.where(ok)[0]]
    return scores, patterns, int(test.n - ok.sum())


def _emit(records, scenario, procedure, prop, replicate, scores, patterns):
    for subgroup, (value, n_sub) in stratify(scores, patterns).items():
        records.append(MetricRecord(
            scenario=scenario, procedure=procedure, target_prop=prop,
            replicate=replicate, subgroup=subgroup, metric="mse",
            value=value, n_subgroup=n_sub,
        ))


def run_cell(cfg: SweepConfig, scenario: str, prop_idx: int, replicate: int,
             procedure_variants=None):
    """All metric records for one grid cell (plus failure notes)."""
    prop = cfg.grid()[prop_idx]
    scen_idx = SCENARIOS.index(scenario)
    spec = GenerativeSpec.default(scenario, y_miss_prob=cfg.y_miss_prob)
    data_seed = _cell_seed(cfg.master_seed, scen_idx, prop_idx, replicate, 0)
    train_ds, test_ds = make_pair(spec, prop, cfg.n_train, cfg.n_test, data_seed)
    spec_cal = spec.with_alpha0(calibrate_intercept(spec, prop))

    records: list[MetricRecord] = []
    failures: list[dict] = []
    for target in ("MU", "MC"):
        oracle = OracleForecaster(spec=spec_cal, target=target,
                                  n_nodes=cfg.oracle_nodes)
        scores, patterns, _ = _supported_scores(oracle, test_ds)
        _emit(records, scenario, f"oracle_{target.lower()}", prop, replicate,
              scores, patterns)

    variants = procedure_variants or [(p.name, p) for p in cfg.procedures]
    for k, (label, pcfg) in enumerate(variants):
        rng_seed = _cell_seed(cfg.master_seed, scen_idx, prop_idx, replicate,
                              100 + k)
        try:
            fc = train(train_ds, pcfg, "gaussian", rng=rng_seed)
            scores, patterns, n_unsupported = _supported_scores(fc, test_ds)
            if scores.size == 0:
                raise InputError("no test row is supported")
            _emit(records, scenario, label, prop, replicate, scores, patterns)
            if n_unsupported:
                log.debug("%s %s@%s: %d unsupported test rows",
                          label, scenario, prop, n_unsupported)
        except Exception as exc:  # noqa: BLE001 - cell failures must not kill the run
            failures.append({
                "scenario": scenario, "target_prop": prop,
                "replicate": replicate, "procedure": label,
                "reason": f"{type(exc).__name__}: {exc}",
            })
    return records, failures


def _run_cell_task(args):
    cfg, scenario, prop_idx, replicate, variants = args
    return run_cell(cfg, scenario, prop_idx, replicate, variants)


def _execute(cfg: SweepConfig, cells, variants, metrics_name: str):
    from pathlib import Path

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    all_records: list[MetricRecord] = []
    all_failures: list[dict] = []
    tasks = [(cfg, s, pi, r, variants) for (s, pi, r) in cells]
    if cfg.n_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(cfg.n_workers) as pool:
            results = list(pool.map(_run_cell_task, tasks, chunksize=1))
    else:
        results = [_run_cell_task(t) for t in tasks]
    for records, failures in results:
        all_records.extend(records)
        all_failures.extend(failures)
    all_records.sort(key=_record_sort_key)

    metrics_path = outdir / metrics_name
    write_metrics_csv(all_records, metrics_path)
    manifest = {
        "version": __version__,
        "config": _config_dict(cfg),
        "grid": cfg.grid(),
        "n_cells": len(cells),
        "n_records": len(all_records),
        "failures": sorted(all_failures, key=lambda f: str(sorted(f.items()))),
        "wall_seconds": round(time.time() - t0, 3),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }
    manifest_path = outdir / (metrics_path.stem + "_manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return metrics_path, manifest_path


def _config_dict(cfg: SweepConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["procedures"] = [dataclasses.asdict(p) for p in cfg.procedures]
    return d


def all_cells(cfg: SweepConfig):
    grid = cfg.grid()
    return [(s, pi, r) for s in cfg.scenarios for pi in range(len(grid))
            for r in range(cfg.replicates_per_point)]


def parse_cell(cfg: SweepConfig, text: str):
    """Parse a --cell SCENARIO:PROP:REPLICATE selector against the grid."""
    try:
        scenario, prop_text, rep_text = text.split(":")
        prop_val = float(prop_text)
        replicate = int(rep_text)
    except ValueError:
        raise InputError(f"bad cell selector {text!r}; expect S4:0.30:0") from None
    if scenario not in cfg.scenarios:
        raise InputError(f"scenario {scenario!r} not in config {cfg.scenarios}")
    grid = cfg.grid()
    matches = [i for i, g in enumerate(grid) if abs(g - prop_val) < 1e-9]
    if not matches:
        raise InputError(f"proportion {prop_val} not on the grid")
    if not (0 <= replicate < cfg.replicates_per_point):
        raise InputError(f"replicate {replicate} outside 0..{cfg.replicates_per_point - 1}")
    return scenario, matches[0], replicate


def run_sweep(cfg: SweepConfig, cell: str | None = None):
    """Train every configured procedure on every cell and score against the
    reference forecasters; returns (metrics_csv_path, manifest_path)."""
    cells = [parse_cell(cfg, cell)] if cell else all_cells(cfg)
    return _execute(cfg, cells, None, "metrics.csv")


def run_explore_missing_y(cfg: SweepConfig, cell: str | None = None):
    """Outcome-missingness exploration: the unconditional-target procedures
    trained with and without restriction to outcome-observed rows."""
    if cfg.y_miss_prob == 0.0:
        cfg = replace(cfg, y_miss_prob=0.3)
    cfg = replace(cfg, scenarios=("S5",))
    variants = []
    for name in ("mi", "mle_m"):
        variants.append((f"{name}_yobs",
                         ProcedureConfig(name, restrict_to_observed_y=True)))
        variants.append((f"{name}_all",
                         ProcedureConfig(name, restrict_to_observed_y=False)))
    cells = [parse_cell(cfg, cell)] if cell else all_cells(cfg)
    return _execute(cfg, cells, variants, "explore_ymiss.csv")


# ---------------------------------------------------------------------------
# application pipeline
# ---------------------------------------------------------------------------

APPLY_COLUMNS = ("subgroup", "n", "share", "brier", "ci_low", "ci_high",
                 "unreliable")


def run_apply(ds_or_path, outcome_col: str, procedure: ProcedureConfig,
              seed: int = DEFAULT_MASTER_SEED, bootstrap_replicates: int = 10_000,
              output_path=None):
    """Leave-one-out evaluation of one procedure on a binary-outcome dataset.

    Returns rows shaped like a per-pattern performance table: overall first,
    then one row per observation pattern, each with a percentile-bootstrap
    interval; subgroups smaller than SUBGROUP_UNRELIABLE_N are flagged.
    """
    if isinstance(ds_or_path, MaskedDataset):
        ds = ds_or_path
    else:
        ds = read_csv(ds_or_path, outcome_col)
    observed_y = ds.y[~ds.mask_y]
    if set(np.unique(observed_y)) - {0.0, 1.0}:
        raise InputError("the application pipeline needs a binary 0/1 outcome")

    def train_fn(fold, rng):
        return train(fold, procedure, outcome_kind="bernoulli", rng=rng)

    result = loocv(ds, train_fn, outcome_kind="bernoulli", master_seed=seed)
    ok = ~np.isnan(result.scores)
    scores = result.scores[ok]
    patterns = [result.patterns[i] for i in np.where(ok)[0]]

    groups = stratify(scores, patterns)
    rows = []
    for k, (subgroup, (value, n_sub)) in enumerate(groups.items()):
        if subgroup in ("complete", "incomplete"):
            continue  # the report is overall + one row per pattern
        if subgroup == "overall":
            sub_scores = scores
        else:
            sel = [i for i, p in enumerate(patterns)
                   if f"pattern({p})" == subgroup]
            sub_scores = scores[np.asarray(sel)]
        low, high = bootstrap_ci(sub_scores, b=bootstrap_replicates,
                                 seed=_cell_seed(seed, 7, k))
        rows.append({
            "subgroup": subgroup, "n": n_sub,
            "share": n_sub / len(scores), "brier": value,
            "ci_low": low, "ci_high": high,
            "unreliable": n_sub < SUBGROUP_UNRELIABLE_N,
        })
    rows.sort(key=lambda r: (r["subgroup"] != "overall", -r["n"], r["subgroup"]))

    if output_path is not None:
        import csv as _csv
        with open(output_path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(APPLY_COLUMNS)
            for r in rows:
                writer.writerow([
                    r["subgroup"], r["n"], repr(round(r["share"], 10)),
                    repr(r["brier"]), repr(r["ci_low"]), repr(r["ci_high"]),
                    int(r["unreliable"]),
                ])
    return rows, result
