"""Acceptance gate: one test per criterion, one printed PASS/FAIL line each.

Desk scale throughout: master seed 20260318, training and test sets of
1,000 rows, missingness proportions {10, 30, 50}%, 20 replicates per cell
unless stated. Criteria A2-A5 share one sweep (session fixture).

Run with:  pytest tests/test_acceptance.py -v -s
"""

import itertools

import numpy as np
import pytest
import scipy.optimize
import scipy.stats
from scipy.special import expit

from missforecast.appdata import trauma_analogue
from missforecast.core import Pattern
from missforecast.datagen import (
    CALIBRATION_DRAWS,
    GenerativeSpec,
    apply_missingness,
    calibrate_intercept,
    derive_rng,
    draw_complete,
    make_pair,
)
from missforecast.errors import UnsupportedPatternError
from missforecast.estimators import em_mvn, irls_logistic, ols
from missforecast.evaluation import brier, read_metrics_csv
from missforecast.mechanisms import (
    ccs_counterexample,
    classify,
    mar_but_informative_joint,
    sample_mechanism_joints,
    verify_lattice,
)
from missforecast.oracle import conditional_gaussian, mc_predict
from missforecast.procedures import (
    ProcedureConfig,
    train_mi,
    train_mle_marg,
)
from missforecast.runner import (
    SweepConfig,
    run_apply,
    run_explore_missing_y,
    run_sweep,
)

MASTER_SEED = 20260318
PROPS = (0.1, 0.3, 0.5)
REPLICATES = 20


def criterion(cid: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")
    assert ok, f"{cid} failed: {detail}"


# ---------------------------------------------------------------------------
# shared desk-scale sweep for A2-A5
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def sweep(tmp_path_factory):
    cfg = SweepConfig(
        scenarios=("S1", "S2", "S3", "S4", "S5"),
        prop_start=0.1, prop_stop=0.5, prop_step=0.2,
        n_train=1000, n_test=1000, replicates_per_point=REPLICATES,
        procedures=(
            ProcedureConfig("ps"), ProcedureConfig("ccs"),
            ProcedureConfig("mi"), ProcedureConfig("mimi"),
            ProcedureConfig("mle_m"), ProcedureConfig("mlemi_m"),
        ),
        master_seed=MASTER_SEED, n_workers=2,
        output_dir=str(tmp_path_factory.mktemp("sweep")),
    )
    metrics, manifest = run_sweep(cfg)
    records = read_metrics_csv(metrics)
    table = {}
    for rec in records:
        key = (rec.scenario, rec.procedure, rec.target_prop, rec.subgroup)
        table.setdefault(key, []).append(rec.value)
    return {k: float(np.mean(v)) for k, v in table.items()}


def val(sweep, scenario, procedure, prop, subgroup="overall"):
    return sweep[(scenario, procedure, prop, subgroup)]


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_a1_oracle_equivalence_under_uninformative_hazard():
    worst = 0.0
    for scenario in ("S1", "S2"):
        spec = GenerativeSpec.default(scenario)
        spec = spec.with_alpha0(calibrate_intercept(spec, 0.3))
        queries = []
        for x2 in np.linspace(-2.5, 2.5, 50):
            queries.append((Pattern((1, 0)), np.array([x2])))
        grid = np.linspace(-2.0, 2.0, 10)
        for x1, x2 in itertools.islice(itertools.product(grid, grid), 50):
            queries.append((Pattern((0, 0)), np.array([x1, x2])))
        for pattern, xo in queries:
            a = conditional_gaussian(spec, pattern, xo)
            b = mc_predict(spec, pattern, xo)
            worst = max(worst, abs(a.mean - b.mean), abs(a.variance - b.variance))
    criterion("A1", worst <= 1e-6,
              f"S1/S2 max |MC - MU| over 100-point grid = {worst:.2e} (<= 1e-6)")


def test_a2_oracle_divergence_when_informative(sweep):
    gaps = {}
    mu = val(sweep, "S3", "oracle_mu", 0.3, "pattern(10)")
    mc = val(sweep, "S3", "oracle_mc", 0.3, "pattern(10)")
    gaps["S3 pattern(10)"] = (mu - mc) / mu
    for scenario in ("S4", "S5"):
        mu = val(sweep, scenario, "oracle_mu", 0.3)
        mc = val(sweep, scenario, "oracle_mc", 0.3)
        gaps[scenario] = (mu - mc) / mu
    ok = all(g >= 0.02 for g in gaps.values())
    criterion("A2", ok, "MC beats MU at 30% by " +
              ", ".join(f"{k}: {g:.1%}" for k, g in gaps.items()) + " (>= 2%)")


def test_a3_pattern_aware_procedures_track_mc_oracle(sweep):
    worst = ("", 0.0)
    for scenario, prop, proc in itertools.product(
            ("S1", "S2", "S3", "S4", "S5"), PROPS, ("ps", "mimi", "mlemi_m")):
        ratio = val(sweep, scenario, proc, prop) / val(sweep, scenario, "oracle_mc", prop)
        if abs(ratio - 1) > worst[1]:
            worst = (f"{proc}@{scenario}/{prop}", abs(ratio - 1))
    criterion("A3", worst[1] <= 0.10,
              f"max |MSE/MC-oracle - 1| = {worst[1]:.1%} at {worst[0]} (<= 10%)")


def test_a4_unconditional_procedures_track_mu_oracle(sweep):
    worst = ("", 0.0)
    for scenario, prop, proc in itertools.product(
            ("S1", "S2", "S5"), PROPS, ("mi", "mle_m")):
        ratio = val(sweep, scenario, proc, prop) / val(sweep, scenario, "oracle_mu", prop)
        if abs(ratio - 1) > worst[1]:
            worst = (f"{proc}@{scenario}/{prop}", abs(ratio - 1))
    ok_track = worst[1] <= 0.10
    excess = min(
        val(sweep, "S4", proc, prop) /
        min(val(sweep, "S4", "oracle_mu", prop), val(sweep, "S4", "oracle_mc", prop))
        for proc in ("mi", "mle_m") for prop in PROPS
    )
    ok_diverge = excess >= 1.05
    criterion("A4", ok_track and ok_diverge,
              f"S1/S2/S5 worst tracking error {worst[1]:.1%} (<= 10%); "
              f"S4 excess over min-oracle >= {excess - 1:.1%} (>= 5%)")


def test_a5_complete_case_submodels(sweep):
    worst = ("", 0.0)
    for scenario, prop in itertools.product(("S1", "S2", "S3"), PROPS):
        ccs = val(sweep, scenario, "ccs", prop)
        best = min(abs(ccs / val(sweep, scenario, f"oracle_{t}", prop) - 1)
                   for t in ("mu", "mc"))
        if best > worst[1]:
            worst = (f"{scenario}/{prop}", best)
    ok_near = worst[1] <= 0.10
    # S5 at 50%: separated from both reference risks (above MC, below MU --
    # with one missable predictor the incomplete-pattern limit is the MU
    # predictor, so sitting above MU as well is unattainable)
    ccs = val(sweep, "S5", "ccs", 0.5)
    above_mc = ccs / val(sweep, "S5", "oracle_mc", 0.5) - 1
    below_mu = 1 - ccs / val(sweep, "S5", "oracle_mu", 0.5)
    ok_apart = above_mc >= 0.05 and below_mu >= 0.05
    criterion("A5", ok_near and ok_apart,
              f"S1-S3 worst distance-to-an-oracle {worst[1]:.1%} (<= 10%); "
              f"S5@50%: +{above_mc:.1%} vs MC and -{below_mu:.1%} vs MU (both >= 5%)")


def test_a6_outcome_missingness_exploration(tmp_path):
    cfg = SweepConfig(
        scenarios=("S5",), prop_start=0.3, prop_stop=0.3, prop_step=0.1,
        n_train=1000, n_test=1000, replicates_per_point=REPLICATES,
        procedures=(), master_seed=MASTER_SEED, y_miss_prob=0.3,
        n_workers=2, output_dir=str(tmp_path),
    )
    metrics, _ = run_explore_missing_y(cfg)
    table = {}
    for rec in read_metrics_csv(metrics):
        if rec.subgroup == "overall":
            table.setdefault(rec.procedure, []).append(rec.value)
    means = {k: float(np.mean(v)) for k, v in table.items()}
    sigma2_y = 1.0
    ok = True
    details = []
    for name in ("mi", "mle_m"):
        ratio = means[f"{name}_yobs"] / means["oracle_mu"]
        gap = means[f"{name}_all"] - means[f"{name}_yobs"]
        ok &= abs(ratio - 1) <= 0.10 and gap >= 0.02 * sigma2_y
        details.append(f"{name}: restricted/MU={ratio:.3f}, "
                       f"unrestricted-restricted={gap:.3f}")
    criterion("A6", ok, "; ".join(details) + " (<=10% and >= 0.02)")


def test_a7_mechanism_checker():
    report = classify(mar_but_informative_joint())
    table_ok = (report.status("MAR") == "holds"
                and report.status("MARX_YM") == "fails"
                and report.status("NIMO") == "fails"
                and report.status("NICO") == "fails")
    lattice = verify_lattice(
        sample_mechanism_joints(1000, derive_rng(MASTER_SEED, 777)))
    _, demo = ccs_counterexample()
    gaps_ok = demo[1]["gap_vs_mu"] >= 0.01 and demo[1]["gap_vs_mc"] >= 0.01
    ok = table_ok and lattice.n_violations == 0 and gaps_ok
    criterion("A7", ok,
              f"informative-MAR table classified correctly: {table_ok}; "
              f"lattice violations {lattice.n_violations}/1000 (= 0); "
              f"sub-model limit gaps {demo[1]['gap_vs_mu']:.3f}/"
              f"{demo[1]['gap_vs_mc']:.3f} (>= 0.01)")


def test_a8_estimator_oracles():
    rng = derive_rng(MASTER_SEED, 88)
    # ols vs an independent pseudo-inverse solve
    x = np.column_stack([np.ones(60), rng.standard_normal((60, 3))])
    y = rng.standard_normal(60)
    ols_err = float(np.max(np.abs(ols(x, y).coef - np.linalg.pinv(x) @ y)))
    # logistic vs truth within 3 SE at large n
    n = 100_000
    xb = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    truth = np.array([0.5, -1.0, 2.0])
    yb = (rng.random(n) < expit(xb @ truth)).astype(float)
    fit = irls_logistic(xb, yb)
    w = fit.predict_prob(xb) * (1 - fit.predict_prob(xb))
    se = np.sqrt(np.diag(np.linalg.inv(xb.T @ (xb * w[:, None]))))
    logit_ok = bool(np.all(np.abs(fit.coef - truth) < 3 * se))
    # EM loglik vs an independent per-row evaluator, and monotonicity
    worst_em = 0.0
    monotone = True
    for k in range(100):
        nn = int(rng.integers(30, 120))
        d = int(rng.integers(2, 5))
        a = rng.standard_normal((d, d))
        xs = rng.multivariate_normal(rng.standard_normal(d),
                                     a @ a.T + 0.5 * np.eye(d), size=nn)
        mask = rng.random((nn, d)) < 0.3
        for j in range(d):
            if (~mask[:, j]).sum() < 2:
                mask[:2, j] = False
        mask[mask.all(axis=1)] = False
        emfit = em_mvn(xs, mask)
        gains = np.diff(emfit.loglik_path)
        monotone &= bool(np.all(gains >= -1e-8 * (1 + np.abs(emfit.loglik_path[:-1]))))
        if k < 10:
            ref = 0.0
            xz = np.where(mask, 0.0, xs)
            for i in range(nn):
                obs = np.where(~mask[i])[0]
                ref += scipy.stats.multivariate_normal.logpdf(
                    xz[i, obs], emfit.mean[obs],
                    emfit.cov[np.ix_(obs, obs)])
            worst_em = max(worst_em, abs(emfit.loglik - ref))
    ok = ols_err < 1e-10 and logit_ok and worst_em < 1e-8 and monotone
    criterion("A8", ok,
              f"ols vs pinv {ols_err:.1e} (<1e-10); logistic within 3 SE: "
              f"{logit_ok}; EM loglik vs reference {worst_em:.1e} (<1e-8); "
              f"EM monotone on 100 fuzzed fits: {monotone}")


def test_a9_imputation_marginalisation_bridge():
    spec = GenerativeSpec.default("S2")
    train_ds, test_ds = make_pair(spec, 0.3, 1000, 1000, MASTER_SEED)
    mi = train_mi(train_ds, ProcedureConfig("mi", m_imputations=200),
                  rng=MASTER_SEED)
    mle = train_mle_marg(train_ds, ProcedureConfig("mle_m"), with_indicators=False)
    gap = float(np.mean(np.abs(mi.predict_dataset(test_ds)
                               - mle.predict_dataset(test_ds))))
    criterion("A9", gap <= 0.02,
              f"S2, 200 imputations: mean |MI - marginalisation| = {gap:.4f} (<= 0.02)")


def test_a10_missingness_calibration():
    worst = ("", 0.0)
    for scenario in ("S1", "S2", "S3", "S4", "S5"):
        spec = GenerativeSpec.default(scenario)
        for target in (0.1, 0.3, 0.5, 0.7):
            alpha0 = calibrate_intercept(spec, target)
            rows = draw_complete(spec, CALIBRATION_DRAWS,
                                 derive_rng(MASTER_SEED, 10, hash(scenario) % 97))
            ds = apply_missingness(rows, spec.with_alpha0(alpha0),
                                   derive_rng(MASTER_SEED, 11, hash(scenario) % 97))
            err = abs(float(ds.mask_x[:, 0].mean()) - target)
            if err > worst[1]:
                worst = (f"{scenario}@{target}", err)
    criterion("A10", worst[1] <= 0.005,
              f"worst realized-vs-target gap {worst[1]:.4f} at {worst[0]} (<= 0.005)")


@pytest.mark.slow
def test_a11_application_pipeline(tmp_path):
    ds = trauma_analogue()
    shapes_ok = True
    cis_ok = True
    details = []
    for name in ("ps", "mi", "mimi"):
        cfg = ProcedureConfig(name, m_imputations=20)
        rows, result = run_apply(
            ds, "severe", cfg, seed=MASTER_SEED,
            bootstrap_replicates=10_000,
            output_path=tmp_path / f"{name}.csv",
        )
        shapes_ok &= rows[0]["subgroup"] == "overall" and len(rows) == 9
        cis_ok &= all(r["ci_low"] <= r["brier"] <= r["ci_high"] for r in rows)
        details.append(f"{name}: overall {rows[0]['brier']:.3f} "
                       f"[{rows[0]['ci_low']:.3f}, {rows[0]['ci_high']:.3f}]")
    trivial = brier(np.full(10, 0.5), (np.arange(10) % 2).astype(float)) == 0.25 \
        and brier(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    ok = shapes_ok and cis_ok and trivial
    criterion("A11", ok,
              "overall + 8 pattern rows with CIs containing the point, "
              "constant-half and perfect scores exact; " + "; ".join(details))


def test_a12_sweep_determinism(tmp_path):
    base = dict(
        scenarios=("S2", "S5"), prop_start=0.3, prop_stop=0.3, prop_step=0.1,
        n_train=400, n_test=400, replicates_per_point=2,
        procedures=(ProcedureConfig("ps"), ProcedureConfig("mi"),
                    ProcedureConfig("mimi"), ProcedureConfig("mle_m")),
        master_seed=MASTER_SEED,
    )
    m1, _ = run_sweep(SweepConfig(output_dir=str(tmp_path / "a"), **base))
    m2, _ = run_sweep(SweepConfig(output_dir=str(tmp_path / "b"), **base))
    identical = m1.read_bytes() == m2.read_bytes()
    criterion("A12", identical,
              f"rerun with identical config gives byte-identical CSV: {identical}")
