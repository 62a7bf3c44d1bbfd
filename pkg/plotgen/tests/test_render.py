import numpy as np
import pandas as pd
import pytest

from plotgen import InputError, PlotSpec, render
from plotgen.cli import main

SCENARIOS = ("S1", "S2", "S3", "S4", "S5")
PROCS = ("ps", "ccs", "cca", "mi", "mimi", "mle_m", "mlemi_m", "itr")
ORACLES = ("oracle_mu", "oracle_mc")


def desk_scale_csv(path, scenarios=SCENARIOS, procedures=PROCS + ORACLES,
                   n_props=71, subgroups=("overall", "complete", "incomplete")):
    """Synthesize a metrics CSV with the sweep schema and plausible curves."""
    rng = np.random.default_rng(7)
    props = np.round(np.linspace(0.0, 0.7, n_props), 3)
    rows = []
    for scen in scenarios:
        for proc in procedures:
            lift = 0.05 * (hash(proc) % 7)
            for prop in props:
                base = 1.0 + 0.6 * prop + lift * prop
                noise = 0.0 if proc in ORACLES else rng.normal(0, 0.03)
                for sub in subgroups:
                    rows.append({
                        "scenario": scen, "procedure": proc,
                        "target_prop": prop, "replicate": 0,
                        "subgroup": sub, "metric": "mse",
                        "value": max(base + noise, 0.01),
                        "ci_low": "", "ci_high": "", "n_subgroup": 1000,
                    })
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


@pytest.fixture(scope="module")
def metrics_csv(tmp_path_factory):
    return desk_scale_csv(tmp_path_factory.mktemp("csv") / "metrics.csv")


def test_main_figure_counts(metrics_csv, tmp_path):
    out = tmp_path / "fig_main.png"
    result = render(PlotSpec(str(metrics_csv), "main", str(out)))
    assert result.n_panels == 5
    assert all(c == len(PROCS) for c in result.curves_per_panel.values())
    assert all(c == 2 for c in result.oracle_curves_per_panel.values())
    assert out.exists() and out.stat().st_size > 10_000


@pytest.mark.parametrize("figure", ["complete_subgroup", "incomplete_subgroup"])
def test_subgroup_figures(metrics_csv, tmp_path, figure):
    out = tmp_path / f"{figure}.png"
    result = render(PlotSpec(str(metrics_csv), figure, str(out)))
    assert result.n_panels == 5
    assert out.exists()


def test_explore_figure(tmp_path):
    csv = desk_scale_csv(
        tmp_path / "explore.csv", scenarios=("S5",),
        procedures=("mi_yobs", "mi_all", "mle_m_yobs", "mle_m_all") + ORACLES,
        n_props=41, subgroups=("overall",),
    )
    result = render(PlotSpec(str(csv), "explore_ymiss", str(tmp_path / "e.png")))
    assert result.n_panels == 1
    assert result.curves_per_panel["S5"] == 4
    assert result.oracle_curves_per_panel["S5"] == 2


def test_identical_bytes_on_rerun(metrics_csv, tmp_path):
    spec1 = PlotSpec(str(metrics_csv), "main", str(tmp_path / "a.png"))
    spec2 = PlotSpec(str(metrics_csv), "main", str(tmp_path / "b.png"))
    render(spec1)
    render(spec2)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_oracle_only_figure(tmp_path):
    csv = desk_scale_csv(tmp_path / "oracle.csv", procedures=ORACLES, n_props=21)
    result = render(PlotSpec(str(csv), "main", str(tmp_path / "o.png")))
    assert all(c == 0 for c in result.curves_per_panel.values())
    assert all(c == 2 for c in result.oracle_curves_per_panel.values())


def test_schema_mismatch_names_column(tmp_path):
    bad = tmp_path / "bad.csv"
    pd.DataFrame({"scenario": ["S1"], "value": [1.0]}).to_csv(bad, index=False)
    with pytest.raises(InputError, match="procedure"):
        render(PlotSpec(str(bad), "main", str(tmp_path / "x.png")))


def test_spec_validation(tmp_path):
    with pytest.raises(InputError):
        PlotSpec("m.csv", "nope", "x.png")
    with pytest.raises(InputError):
        PlotSpec("m.csv", "main", "x.png", span=0.0)
    with pytest.raises(InputError):
        PlotSpec("m.csv", "main", "x.png", span=1.5)


def test_cli(metrics_csv, tmp_path, capsys):
    out = tmp_path / "cli.png"
    assert main(["--input", str(metrics_csv), "--figure", "main",
                 "--output", str(out)]) == 0
    assert "5 panel(s)" in capsys.readouterr().out
    assert main(["--input", str(tmp_path / "missing.csv"), "--figure", "main",
                 "--output", str(out)]) == 2


def test_acceptance_a13(metrics_csv, tmp_path):
    """Main, subgroup and explore figures render with the right counts and
    rerenders are byte-identical."""
    ok = True
    details = []
    for figure in ("main", "complete_subgroup", "incomplete_subgroup"):
        a = render(PlotSpec(str(metrics_csv), figure, str(tmp_path / f"{figure}_a.png")))
        render(PlotSpec(str(metrics_csv), figure, str(tmp_path / f"{figure}_b.png")))
        same = (tmp_path / f"{figure}_a.png").read_bytes() == \
            (tmp_path / f"{figure}_b.png").read_bytes()
        counts_ok = a.n_panels == 5 and \
            all(c == len(PROCS) for c in a.curves_per_panel.values()) and \
            all(c == 2 for c in a.oracle_curves_per_panel.values())
        ok &= same and counts_ok
        details.append(f"{figure}: panels={a.n_panels}, identical={same}")
    explore = desk_scale_csv(
        tmp_path / "explore.csv", scenarios=("S5",),
        procedures=("mi_yobs", "mi_all", "mle_m_yobs", "mle_m_all") + ORACLES,
        n_props=41, subgroups=("overall",),
    )
    a = render(PlotSpec(str(explore), "explore_ymiss", str(tmp_path / "ex_a.png")))
    render(PlotSpec(str(explore), "explore_ymiss", str(tmp_path / "ex_b.png")))
    same = (tmp_path / "ex_a.png").read_bytes() == (tmp_path / "ex_b.png").read_bytes()
    ok &= same and a.n_panels == 1 and a.curves_per_panel["S5"] == 4
    details.append(f"explore: panels={a.n_panels}, identical={same}")
    print(f"[{'PASS' if ok else 'FAIL'}] A13: " + "; ".join(details))
    assert ok


def test_renders_real_sweep_output(tmp_path):
    """End-to-end through the producing package's CSV interface."""
    missforecast = pytest.importorskip("missforecast")
    from missforecast.procedures import ProcedureConfig
    from missforecast.runner import SweepConfig, run_sweep

    cfg = SweepConfig(
        scenarios=("S1", "S4"), prop_start=0.1, prop_stop=0.5, prop_step=0.2,
        n_train=200, n_test=200, replicates_per_point=2,
        procedures=(ProcedureConfig("ps"), ProcedureConfig("mi", m_imputations=3)),
        master_seed=3, output_dir=str(tmp_path / "sweep"),
    )
    metrics, _ = run_sweep(cfg)
    result = render(PlotSpec(str(metrics), "main", str(tmp_path / "real.png")))
    assert result.n_panels == 2
    assert result.curves_per_panel == {"S1": 2, "S4": 2}
    assert result.oracle_curves_per_panel == {"S1": 2, "S4": 2}
