"""Render MSE-versus-missingness figures from a metrics CSV.

Input is the sweep metrics schema (one row per scenario / procedure /
proportion / replicate / subgroup). Each figure holds one panel per
scenario: a scatter of per-replicate scores, one LOESS curve (local-linear,
fraction = span) per training procedure, and dashed reference curves for
the two oracle forecasters. Rendering is read-only over the CSV and fully
deterministic: fixed backend, fixed DPI, no timestamp metadata, so the same
CSV and spec produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from statsmodels.nonparametric.smoothers_lowess import lowess  # noqa: E402

REQUIRED_COLUMNS = (
    "scenario", "procedure", "target_prop", "replicate", "subgroup",
    "metric", "value", "ci_low", "ci_high", "n_subgroup",
)

FIGURES = ("main", "complete_subgroup", "incomplete_subgroup", "explore_ymiss")

_SUBGROUP_FOR = {
    "main": "overall",
    "complete_subgroup": "complete",
    "incomplete_subgroup": "incomplete",
    "explore_ymiss": "overall",
}

ORACLE_PROCEDURES = ("oracle_mu", "oracle_mc")

DPI = 100

_PALETTE = plt.get_cmap("tab10").colors


class InputError(ValueError):
    """The CSV does not conform to the metrics schema."""


@dataclass(frozen=True)
class PlotSpec:
    input_csv: str
    figure: str
    output: str
    span: float = 0.5

    def __post_init__(self):
        if self.figure not in FIGURES:
            raise InputError(f"unknown figure {self.figure!r}; pick from {FIGURES}")
        if not (0.0 < self.span <= 1.0):
            raise InputError(f"span must lie in (0, 1], got {self.span}")


@dataclass(frozen=True)
class RenderResult:
    path: str
    n_panels: int
    curves_per_panel: dict            # scenario -> procedure curve count
    oracle_curves_per_panel: dict     # scenario -> reference curve count
    procedures: tuple = field(default_factory=tuple)


def _load(spec: PlotSpec) -> pd.DataFrame:
    df = pd.read_csv(spec.input_csv)
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise InputError(
            f"{spec.input_csv}: missing column {missing[0]!r} "
            f"(need {', '.join(REQUIRED_COLUMNS)})"
        )
    subgroup = _SUBGROUP_FOR[spec.figure]
    df = df[(df["subgroup"] == subgroup) & (df["metric"] == "mse")]
    if df.empty:
        raise InputError(
            f"{spec.input_csv}: no rows with subgroup={subgroup!r} and metric='mse'"
        )
    return df


def _smoothed(x: np.ndarray, y: np.ndarray, span: float):
    if np.unique(x).size < 3:
        order = np.argsort(x, kind="stable")
        return x[order], y[order]
    out = lowess(y, x, frac=span, return_sorted=True)
    return out[:, 0], out[:, 1]


def render(spec: PlotSpec) -> RenderResult:
    """Write the figure and report panel/curve counts."""
    df = _load(spec)
    scenarios = sorted(df["scenario"].unique())
    procedures = sorted(p for p in df["procedure"].unique()
                        if p not in ORACLE_PROCEDURES)
    n = len(scenarios)
    ncols = min(n, 3)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.2 * ncols, 3.4 * nrows),
                             squeeze=False, sharex=True)
    curves, oracle_curves = {}, {}
    color_of = {p: _PALETTE[i % len(_PALETTE)] for i, p in enumerate(procedures)}

    for k, scenario in enumerate(scenarios):
        ax = axes[k // ncols][k % ncols]
        sub = df[df["scenario"] == scenario]
        n_curves = 0
        for proc in procedures:
            rows = sub[sub["procedure"] == proc]
            if rows.empty:
                continue
            x = rows["target_prop"].to_numpy(float)
            y = rows["value"].to_numpy(float)
            ax.scatter(x, y, s=4, alpha=0.25, color=color_of[proc], lw=0)
            xs, ys = _smoothed(x, y, spec.span)
            ax.plot(xs, ys, color=color_of[proc], lw=1.6,
                    label=proc if k == 0 else None)
            n_curves += 1
        n_oracle = 0
        for proc, style in zip(ORACLE_PROCEDURES, ("--", ":")):
            rows = sub[sub["procedure"] == proc]
            if rows.empty:
                continue
            x = rows["target_prop"].to_numpy(float)
            y = rows["value"].to_numpy(float)
            xs, ys = _smoothed(x, y, spec.span)
            ax.plot(xs, ys, style, color="black", lw=1.4,
                    label=proc if k == 0 else None)
            n_oracle += 1
        curves[scenario] = n_curves
        oracle_curves[scenario] = n_oracle
        ax.set_title(f"scenario {scenario}")
        ax.set_xlabel("missingness proportion")
        ax.set_ylabel("MSE")
    for k in range(n, nrows * ncols):
        axes[k // ncols][k % ncols].axis("off")
    handles, labels = axes[0][0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="lower center",
                   ncol=min(len(labels), 5), frameon=False, fontsize=8)
    fig.tight_layout(rect=(0, 0.08, 1, 1))
    fig.savefig(spec.output, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return RenderResult(
        path=spec.output, n_panels=n, curves_per_panel=curves,
        oracle_curves_per_panel=oracle_curves, procedures=tuple(procedures),
    )
