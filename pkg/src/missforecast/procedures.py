"""Training procedures for forecasters that tolerate missing predictors.

Every trainer returns an immutable Forecaster with a declared target:

    ps        one sub-model per observation pattern            -> MC
    ccs       sub-models on observed-superset rows             -> neither
    cca       complete rows only, complete queries only        -> MC
    mi        multiple imputation, plain outcome model         -> MU
    mimi      multiple imputation + missingness indicators     -> MC
    mle_m     joint-Gaussian likelihood fit, marginalised      -> MU
    mlemi_m   the same, stratified by observation pattern      -> MC
    itr       deterministic impute-then-regress                -> MC*

(*when the learner includes indicator interactions; the plain-linear
variant is kept for documenting that an insufficient class misses MC.)

Deployment-time imputation never sees the outcome. For the imputation
family the deployment fill is the conditional mean of the missing
predictors under per-imputation Gaussian moments: refit on all completed
rows for the unconditional target, refit within the query pattern's
stratum for the pattern-conditional target (falling back to all rows for
strata too small to support moments).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BernoulliPrediction,
    Forecaster,
    GaussianPrediction,
    MaskedDataset,
    Pattern,
)
from .errors import InputError, NumericError, TrainingError, UnsupportedPatternError
from .estimators import (
    LinearFit,
    LogisticFit,
    em_mvn,
    gaussian_conditional,
    independent_columns,
    irls_logistic,
    ols,
    posterior_draw,
)

log = logging.getLogger(__name__)

PROCEDURES = ("ps", "ccs", "cca", "mi", "mimi", "mle_m", "mlemi_m", "itr")

FORMAT_VERSION = 1

_MAX_EAGER_PATTERNS = 12  # ceiling on p for 2^p sub-model enumeration


@dataclass(frozen=True)
class ProcedureConfig:
    name: str
    m_imputations: int = 20
    mc_draws: int = 2000
    restrict_to_observed_y: bool = True
    mimi_interactions: bool = True
    mlemi_stratified: bool = True
    mice_iterations: int = 5
    itr_impute: str = "conditional_mean"
    itr_learner: str = "linear_with_indicator_interactions"

    def __post_init__(self):
        if self.name not in PROCEDURES:
            raise InputError(f"unknown procedure {self.name!r}; pick from {PROCEDURES}")
        if self.name in ("mi", "mimi") and self.m_imputations < 2:
            raise InputError("the imputation family needs m_imputations >= 2")
        if self.mc_draws < 100:
            raise InputError("mc_draws must be >= 100")
        if self.itr_impute not in ("zero", "unconditional_mean", "conditional_mean"):
            raise InputError(f"unknown itr_impute {self.itr_impute!r}")
        if self.itr_learner not in ("linear", "linear_with_indicator_interactions"):
            raise InputError(f"unknown itr_learner {self.itr_learner!r}")


# ---------------------------------------------------------------------------
# shared fitting helpers
# ---------------------------------------------------------------------------

def _check_outcome_kind(kind):
    if kind not in ("gaussian", "bernoulli"):
        raise InputError(f"outcome_kind must be gaussian or bernoulli, got {kind!r}")


def _fit(design, y, kind, columns=None):
    if kind == "gaussian":
        return ols(design, y, columns=columns)
    return irls_logistic(design, y, columns=columns)


def _points(fit, design, kind):
    if kind == "gaussian":
        return fit.predict(design)
    return fit.predict_prob(design)


def _make_prediction(kind, point, variance=0.0):
    if kind == "gaussian":
        return GaussianPrediction(mean=float(point), variance=float(max(variance, 0.0)))
    return BernoulliPrediction(prob=float(min(max(point, 0.0), 1.0)))


def _outcome_rows(ds: MaskedDataset) -> np.ndarray:
    return np.where(~ds.mask_y)[0]


def _with_intercept(block: np.ndarray) -> np.ndarray:
    block = np.atleast_2d(np.asarray(block, dtype=float))
    return np.column_stack([np.ones(block.shape[0]), block])


# ---------------------------------------------------------------------------
# pattern sub-model family (ps, ccs, cca)
# ---------------------------------------------------------------------------

@dataclass
class PatternSubmodelForecaster(Forecaster):
    procedure: str = "ps"
    target: str | None = "MC"
    outcome_kind: str = "gaussian"
    fits: dict = field(default_factory=dict)          # Pattern -> fit
    untrainable: dict = field(default_factory=dict)   # Pattern -> reason
    metadata: dict = field(default_factory=dict)

    def _check_pattern(self, pattern: Pattern):
        if pattern in self.fits:
            return
        reason = self.untrainable.get(pattern, "pattern never seen in training")
        raise UnsupportedPatternError(pattern, reason)

    def predict(self, pattern, x_obs):
        self._check_pattern(pattern)
        fit = self.fits[pattern]
        design = _with_intercept(np.asarray(x_obs, dtype=float)[None, :]) \
            if len(x_obs) else np.ones((1, 1))
        point = _points(fit, design, self.outcome_kind)[0]
        var = fit.resid_var if self.outcome_kind == "gaussian" else 0.0
        return _make_prediction(self.outcome_kind, point, var)

    def _predict_block(self, pattern, block):
        self._check_pattern(pattern)
        fit = self.fits[pattern]
        design = _with_intercept(block) if block.shape[1] else np.ones((block.shape[0], 1))
        return _points(fit, design, self.outcome_kind)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "pattern_submodels",
            "procedure": self.procedure,
            "target": self.target,
            "outcome_kind": self.outcome_kind,
            "fits": {str(p): _fit_to_dict(f) for p, f in self.fits.items()},
            "untrainable": {str(p): r for p, r in self.untrainable.items()},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            procedure=d["procedure"], target=d["target"],
            outcome_kind=d["outcome_kind"],
            fits={Pattern.from_string(k): _fit_from_dict(v)
                  for k, v in d["fits"].items()},
            untrainable={Pattern.from_string(k): r
                         for k, r in d["untrainable"].items()},
            metadata=d.get("metadata", {}),
        )


def _fit_to_dict(fit):
    if isinstance(fit, LinearFit):
        return {"type": "linear", "coef": fit.coef.tolist(),
                "resid_var": fit.resid_var, "n_used": fit.n_used,
                "xtx_inv": fit.xtx_inv.tolist()}
    return {"type": "logistic", "coef": fit.coef.tolist(),
            "converged": fit.converged, "iterations": fit.iterations,
            "grad_norm": fit.grad_norm}


def _fit_from_dict(d):
    if d["type"] == "linear":
        return LinearFit(coef=np.array(d["coef"]), resid_var=d["resid_var"],
                         n_used=d["n_used"], xtx_inv=np.array(d["xtx_inv"]))
    return LogisticFit(coef=np.array(d["coef"]), converged=d["converged"],
                       iterations=d["iterations"], grad_norm=d["grad_norm"])


def _fit_pattern_models(ds, outcome_kind, rows_for_pattern, patterns,
                        procedure, target):
    """Shared worker: one outcome model per pattern on caller-chosen rows."""
    fits, untrainable = {}, {}
    y_rows = set(_outcome_rows(ds).tolist())
    for pattern in patterns:
        rows = [i for i in rows_for_pattern(pattern) if i in y_rows]
        q = len(pattern.observed_indices)
        if len(rows) < q + 2:
            untrainable[pattern] = (
                f"{len(rows)} usable rows < {q + 2} needed for {q} predictors"
            )
            continue
        rows = np.asarray(rows)
        obs = list(pattern.observed_indices)
        design = _with_intercept(ds.x[rows][:, obs]) if obs else np.ones((len(rows), 1))
        columns = ("intercept", *[ds.column_names[j] for j in obs])
        try:
            fits[pattern] = _fit(design, ds.y[rows], outcome_kind, columns)
        except (InputError, NumericError) as exc:
            untrainable[pattern] = f"fit failed: {exc}"
    if not fits:
        raise TrainingError(f"{procedure}: no trainable pattern "
                            f"({len(untrainable)} untrainable)")
    return PatternSubmodelForecaster(
        procedure=procedure, target=target, outcome_kind=outcome_kind,
        fits=fits, untrainable=untrainable,
        metadata={"n_train": ds.n, "patterns": [str(p) for p in fits]},
    )


def train_ps(ds: MaskedDataset, outcome_kind: str = "gaussian") -> Forecaster:
    """One forecaster per observation pattern, fitted on that pattern's rows."""
    _check_outcome_kind(outcome_kind)
    by_pattern = {}
    for i in range(ds.n):
        by_pattern.setdefault(ds.pattern(i), []).append(i)
    return _fit_pattern_models(
        ds, outcome_kind, lambda p: by_pattern.get(p, []),
        list(by_pattern), "ps", "MC",
    )


def train_cca(ds: MaskedDataset, outcome_kind: str = "gaussian") -> Forecaster:
    """Single fit on fully observed rows; serves complete queries only."""
    _check_outcome_kind(outcome_kind)
    complete = Pattern.complete(ds.p)
    rows = [i for i in range(ds.n) if ds.pattern(i) == complete]
    return _fit_pattern_models(ds, outcome_kind, lambda p: rows, [complete],
                               "cca", "MC")


def train_ccs(ds: MaskedDataset, outcome_kind: str = "gaussian") -> Forecaster:
    """Per-pattern fits on every row observing at least the pattern's
    predictors; serves unseen patterns whenever superset rows exist.

    Not consistent for either prediction target in general; kept for
    comparison purposes.
    """
    _check_outcome_kind(outcome_kind)
    if ds.p > _MAX_EAGER_PATTERNS:
        raise InputError(f"ccs enumerates 2^p sub-models; p={ds.p} is too large")
    observed = ~ds.mask_x  # (n, p)
    patterns = [Pattern(bits) for bits in
                np.ndindex(*([2] * ds.p))]

    def rows_for(pattern):
        need = np.array([b == 0 for b in pattern.bits])
        ok = observed[:, need].all(axis=1) if need.any() else np.ones(ds.n, bool)
        return np.where(ok)[0].tolist()

    return _fit_pattern_models(ds, outcome_kind, rows_for, patterns, "ccs", None)


# ---------------------------------------------------------------------------
# joint-Gaussian likelihood family (mle_m, mlemi_m)
# ---------------------------------------------------------------------------

@dataclass
class MarginalisingGaussianForecaster(Forecaster):
    """Joint Gaussian of (predictors, outcome); predicting integrates the
    missing predictors out analytically (Monte Carlo mode as a cross-check)."""

    procedure: str = "mle_m"
    target: str | None = "MU"
    outcome_kind: str = "gaussian"
    mean: np.ndarray = None
    cov: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def predict(self, pattern, x_obs):
        obs = list(pattern.observed_indices)
        m, c = gaussian_conditional(self.mean, self.cov, obs, [len(self.mean) - 1],
                                    np.asarray(x_obs, dtype=float))
        return _make_prediction("gaussian", m[0], c[0, 0])

    def predict_monte_carlo(self, pattern, x_obs, n_draws, rng):
        """Marginalise by simulation instead of the closed form."""
        obs = list(pattern.observed_indices)
        mis = [j for j in range(len(self.mean) - 1) if j not in obs]
        x_obs = np.asarray(x_obs, dtype=float)
        if not mis:
            return self.predict(pattern, x_obs)
        pm, pc = self.mean[:-1], self.cov[:-1, :-1]
        cm, cc = gaussian_conditional(pm, pc, obs, mis, x_obs)
        draws = cm + rng.standard_normal((n_draws, len(mis))) @ \
            np.linalg.cholesky(cc + 1e-12 * np.eye(len(mis))).T
        d = len(self.mean) - 1
        full = np.empty((n_draws, d))
        if obs:
            full[:, obs] = x_obs
        full[:, mis] = draws
        gain = np.linalg.solve(self.cov[:d, :d], self.cov[:d, d])
        means = self.mean[d] + (full - self.mean[:d]) @ gain
        return _make_prediction("gaussian", float(means.mean()),
                                float(means.var()))

    def _predict_block(self, pattern, block):
        obs = list(pattern.observed_indices)
        d = len(self.mean) - 1
        if not obs:
            return np.full(block.shape[0], self.mean[d])
        s_oo = self.cov[np.ix_(obs, obs)]
        gain = np.linalg.solve(s_oo, self.cov[obs, d])
        return self.mean[d] + (block - self.mean[obs]) @ gain

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION, "kind": "marginalising_gaussian",
            "procedure": self.procedure, "target": self.target,
            "outcome_kind": self.outcome_kind,
            "mean": self.mean.tolist(), "cov": self.cov.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(procedure=d["procedure"], target=d["target"],
                   outcome_kind=d["outcome_kind"], mean=np.array(d["mean"]),
                   cov=np.array(d["cov"]), metadata=d.get("metadata", {}))


@dataclass
class StratifiedGaussianForecaster(Forecaster):
    """One joint Gaussian of (observed predictors, outcome) per pattern."""

    procedure: str = "mlemi_m"
    target: str | None = "MC"
    outcome_kind: str = "gaussian"
    strata: dict = field(default_factory=dict)   # Pattern -> (mean, cov)
    untrainable: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def _check_pattern(self, pattern):
        if pattern not in self.strata:
            reason = self.untrainable.get(pattern, "pattern never seen in training")
            raise UnsupportedPatternError(pattern, reason)

    def predict(self, pattern, x_obs):
        self._check_pattern(pattern)
        mean, cov = self.strata[pattern]
        k = len(mean) - 1
        m, c = gaussian_conditional(mean, cov, list(range(k)), [k],
                                    np.asarray(x_obs, dtype=float))
        return _make_prediction("gaussian", m[0], c[0, 0])

    def _predict_block(self, pattern, block):
        self._check_pattern(pattern)
        mean, cov = self.strata[pattern]
        k = len(mean) - 1
        if k == 0:
            return np.full(block.shape[0], mean[0])
        gain = np.linalg.solve(cov[:k, :k], cov[:k, k])
        return mean[k] + (block - mean[:k]) @ gain

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION, "kind": "stratified_gaussian",
            "procedure": self.procedure, "target": self.target,
            "outcome_kind": self.outcome_kind,
            "strata": {str(p): {"mean": m.tolist(), "cov": c.tolist()}
                       for p, (m, c) in self.strata.items()},
            "untrainable": {str(p): r for p, r in self.untrainable.items()},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            procedure=d["procedure"], target=d["target"],
            outcome_kind=d["outcome_kind"],
            strata={Pattern.from_string(k): (np.array(v["mean"]), np.array(v["cov"]))
                    for k, v in d["strata"].items()},
            untrainable={Pattern.from_string(k): r
                         for k, r in d["untrainable"].items()},
            metadata=d.get("metadata", {}),
        )


def train_mle_marg(ds: MaskedDataset, cfg: ProcedureConfig,
                   with_indicators: bool, outcome_kind: str = "gaussian") -> Forecaster:
    """Likelihood fit of the joint Gaussian law, marginalised at deployment.

    Without indicators the whole law of (predictors, outcome) is fitted by
    EM and predictions integrate over the missing coordinates (target MU).
    With indicators the law is fitted per observation-pattern stratum
    (target MC); a covariate-mode alternative appends the indicator columns
    to the EM variable set instead.
    """
    if outcome_kind != "gaussian":
        raise InputError("joint-Gaussian marginalisation needs a continuous outcome")
    rows = _outcome_rows(ds) if cfg.restrict_to_observed_y else np.arange(ds.n)
    if rows.size < ds.p + 3:
        raise TrainingError("too few usable rows for the joint-Gaussian fit")
    sub = ds.subset(rows)

    if not with_indicators:
        data = np.column_stack([np.where(sub.mask_x, 0.0, sub.x),
                                np.where(sub.mask_y, 0.0, sub.y)])
        mask = np.column_stack([sub.mask_x, sub.mask_y])
        fit = em_mvn(data, mask)
        return MarginalisingGaussianForecaster(
            procedure="mle_m", target="MU", outcome_kind="gaussian",
            mean=fit.mean, cov=fit.cov,
            metadata={"em_iterations": fit.iterations, "loglik": fit.loglik,
                      "n_train": int(rows.size)},
        )

    if not cfg.mlemi_stratified:
        # covariate mode: indicators of the missable columns join the law
        missable = [j for j in range(sub.p) if sub.mask_x[:, j].any()]
        data = np.column_stack([
            np.where(sub.mask_x, 0.0, sub.x),
            sub.mask_x[:, missable].astype(float),
            np.where(sub.mask_y, 0.0, sub.y),
        ])
        mask = np.column_stack([
            sub.mask_x, np.zeros((sub.n, len(missable)), bool), sub.mask_y,
        ])
        fit = em_mvn(data, mask)
        return _IndicatorCovariateForecaster(
            procedure="mlemi_m", target="MC", outcome_kind="gaussian",
            mean=fit.mean, cov=fit.cov, missable=tuple(missable),
            metadata={"mode": "covariate", "n_train": int(rows.size)},
        )

    strata, untrainable = {}, {}
    by_pattern = {}
    for i in range(sub.n):
        by_pattern.setdefault(sub.pattern(i), []).append(i)
    for pattern, idx in by_pattern.items():
        obs = list(pattern.observed_indices)
        idx = np.asarray(idx)
        data = np.column_stack([sub.x[idx][:, obs], sub.y[idx]])
        mask = np.column_stack([np.zeros((idx.size, len(obs)), bool),
                                sub.mask_y[idx]])
        keep = ~mask.all(axis=1)
        if keep.sum() < len(obs) + 3:
            untrainable[pattern] = f"{int(keep.sum())} rows < {len(obs) + 3} needed"
            continue
        try:
            fit = em_mvn(data, mask)
        except InputError as exc:
            untrainable[pattern] = str(exc)
            continue
        strata[pattern] = (fit.mean, fit.cov)
    if not strata:
        raise TrainingError("mlemi_m: no trainable stratum")
    return StratifiedGaussianForecaster(
        procedure="mlemi_m", target="MC", outcome_kind="gaussian",
        strata=strata, untrainable=untrainable,
        metadata={"mode": "stratified", "n_train": int(rows.size)},
    )


@dataclass
class _IndicatorCovariateForecaster(Forecaster):
    """Covariate-mode alternative: indicators live inside the Gaussian law."""

    procedure: str = "mlemi_m"
    target: str | None = "MC"
    outcome_kind: str = "gaussian"
    mean: np.ndarray = None
    cov: np.ndarray = None
    missable: tuple = ()
    metadata: dict = field(default_factory=dict)

    def predict(self, pattern, x_obs):
        p = len(self.mean) - 1 - len(self.missable)
        obs = list(pattern.observed_indices)
        ind_idx = [p + k for k in range(len(self.missable))]
        evidence_idx = obs + ind_idx
        evidence = np.concatenate([
            np.asarray(x_obs, dtype=float),
            [float(pattern.bits[j]) for j in self.missable],
        ])
        m, c = gaussian_conditional(self.mean, self.cov, evidence_idx,
                                    [len(self.mean) - 1], evidence)
        return _make_prediction("gaussian", m[0], c[0, 0])

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION, "kind": "indicator_covariate_gaussian",
            "procedure": self.procedure, "target": self.target,
            "outcome_kind": self.outcome_kind, "mean": self.mean.tolist(),
            "cov": self.cov.tolist(), "missable": list(self.missable),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(procedure=d["procedure"], target=d["target"],
                   outcome_kind=d["outcome_kind"], mean=np.array(d["mean"]),
                   cov=np.array(d["cov"]), missable=tuple(d["missable"]),
                   metadata=d.get("metadata", {}))


# ---------------------------------------------------------------------------
# multiple imputation family (mi, mimi)
# ---------------------------------------------------------------------------

def _mice_complete(data, mask, rng, n_iter):
    """One chained-equations pass: Bayesian-linear draws column by column."""
    n, d = data.shape
    cols = [j for j in range(d) if mask[:, j].any()]
    filled = np.where(mask, 0.0, data)
    for j in cols:
        pool = data[~mask[:, j], j]
        filled[mask[:, j], j] = rng.choice(pool, size=int(mask[:, j].sum()))
    for _ in range(max(n_iter, 1)):
        for j in cols:
            others = [k for k in range(d) if k != j]
            obs = ~mask[:, j]
            if obs.sum() < len(others) + 3:
                raise TrainingError(
                    f"column {j}: {int(obs.sum())} observed rows cannot support "
                    "the imputation model"
                )
            design = _with_intercept(filled[:, others])
            fit = ols(design[obs], data[obs, j])
            coef, sigma2 = posterior_draw(fit, rng)
            miss = mask[:, j]
            filled[miss, j] = design[miss] @ coef + \
                np.sqrt(sigma2) * rng.standard_normal(int(miss.sum()))
    return filled


def _predictor_moments(xblock):
    mean = xblock.mean(axis=0)
    centered = xblock - mean
    cov = centered.T @ centered / xblock.shape[0]
    return mean, 0.5 * (cov + cov.T)


def _conditional_mean_fill(block, pattern, mean, cov):
    """Fill the missing coordinates of rows sharing one pattern."""
    obs = list(pattern.observed_indices)
    mis = list(pattern.missing_indices)
    n = block.shape[0]
    full = np.empty((n, len(mean)))
    if obs:
        full[:, obs] = block
    if not mis:
        return full
    if not obs:
        full[:, mis] = mean[mis]
        return full
    s_oo = cov[np.ix_(obs, obs)] + 1e-12 * np.eye(len(obs))
    gain = np.linalg.solve(s_oo, cov[np.ix_(obs, mis)])
    full[:, mis] = mean[mis] + (block - mean[obs]) @ gain
    return full


@dataclass
class MultipleImputationForecaster(Forecaster):
    """Per-imputation outcome fits plus deployment fill moments.

    Missing predictors at deployment are filled by the conditional mean
    under each imputation's Gaussian moments (stratum moments for the
    pattern-conditional variant), predictions averaged across imputations.
    """

    procedure: str = "mi"
    target: str | None = "MU"
    outcome_kind: str = "gaussian"
    p: int = 0
    indicator_cols: tuple = ()          # predictor indices with indicators
    interactions: bool = False
    kept_design_cols: tuple = ()        # column subset after pruning
    imputations: list = field(default_factory=list)
    # each imputation: {"fit": fit, "fill": {pattern-or-"all": (mean, cov)}}
    metadata: dict = field(default_factory=dict)

    def _design_row_block(self, filled, pattern, n):
        cols = [np.ones(n), *(filled[:, j] for j in range(self.p))]
        for j in self.indicator_cols:
            bit = float(pattern.bits[j])
            cols.append(np.full(n, bit))
            if self.interactions:
                cols.extend(bit * filled[:, k] for k in range(self.p))
        design = np.column_stack(cols)
        return design[:, list(self.kept_design_cols)]

    def _fill_for(self, imp, pattern):
        if self.target == "MC":
            key = str(pattern)
            if key in imp["fill"]:
                return imp["fill"][key]
        return imp["fill"]["all"]

    def predict(self, pattern, x_obs):
        block = np.asarray(x_obs, dtype=float)[None, :]
        points, variances = [], []
        for imp in self.imputations:
            mean, cov = self._fill_for(imp, pattern)
            filled = _conditional_mean_fill(block, pattern, mean, cov)
            design = self._design_row_block(filled, pattern, 1)
            points.append(_points(imp["fit"], design, self.outcome_kind)[0])
            if self.outcome_kind == "gaussian":
                variances.append(imp["fit"].resid_var)
        points = np.asarray(points)
        if self.outcome_kind == "gaussian":
            within = float(np.mean(variances))
            between = float(points.var(ddof=1)) * (1.0 + 1.0 / len(points))
            return _make_prediction("gaussian", points.mean(), within + between)
        return _make_prediction("bernoulli", points.mean())

    def _predict_block(self, pattern, block):
        acc = np.zeros(block.shape[0])
        for imp in self.imputations:
            mean, cov = self._fill_for(imp, pattern)
            filled = _conditional_mean_fill(block, pattern, mean, cov)
            design = self._design_row_block(filled, pattern, block.shape[0])
            acc += _points(imp["fit"], design, self.outcome_kind)
        return acc / len(self.imputations)

    def to_dict(self):
        imps = []
        for imp in self.imputations:
            imps.append({
                "fit": _fit_to_dict(imp["fit"]),
                "fill": {k: {"mean": m.tolist(), "cov": c.tolist()}
                         for k, (m, c) in imp["fill"].items()},
            })
        return {
            "format_version": FORMAT_VERSION, "kind": "multiple_imputation",
            "procedure": self.procedure, "target": self.target,
            "outcome_kind": self.outcome_kind, "p": self.p,
            "indicator_cols": list(self.indicator_cols),
            "interactions": self.interactions,
            "kept_design_cols": list(self.kept_design_cols),
            "imputations": imps, "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        imps = []
        for imp in d["imputations"]:
            imps.append({
                "fit": _fit_from_dict(imp["fit"]),
                "fill": {k: (np.array(v["mean"]), np.array(v["cov"]))
                         for k, v in imp["fill"].items()},
            })
        return cls(
            procedure=d["procedure"], target=d["target"],
            outcome_kind=d["outcome_kind"], p=d["p"],
            indicator_cols=tuple(d["indicator_cols"]),
            interactions=d["interactions"],
            kept_design_cols=tuple(d["kept_design_cols"]),
            imputations=imps, metadata=d.get("metadata", {}),
        )


def _train_imputation_family(ds, cfg, outcome_kind, rng, with_indicators):
    _check_outcome_kind(outcome_kind)
    rng = np.random.default_rng(rng)
    rows = _outcome_rows(ds) if cfg.restrict_to_observed_y else np.arange(ds.n)
    if rows.size < ds.p + 4:
        raise TrainingError("too few usable rows for imputation")
    sub = ds.subset(rows)

    data = np.column_stack([np.where(sub.mask_x, 0.0, sub.x),
                            np.where(sub.mask_y, 0.0, sub.y)])
    mask = np.column_stack([sub.mask_x, sub.mask_y])

    missable = tuple(j for j in range(ds.p) if sub.mask_x[:, j].any())
    indicator_cols = missable if with_indicators else ()
    interactions = bool(with_indicators and cfg.mimi_interactions)

    patterns = {}
    for i in range(sub.n):
        patterns.setdefault(sub.pattern(i), []).append(i)

    imputations = []
    kept = None
    child_rngs = rng.spawn(cfg.m_imputations)
    for m, child in enumerate(child_rngs):
        filled = _mice_complete(data, mask, child, cfg.mice_iterations)
        xs, ys = filled[:, :ds.p], filled[:, ds.p]

        cols = [np.ones(sub.n), *(xs[:, j] for j in range(ds.p))]
        names = ["intercept", *sub.column_names]
        for j in indicator_cols:
            mj = sub.mask_x[:, j].astype(float)
            cols.append(mj)
            names.append(f"m[{sub.column_names[j]}]")
            if interactions:
                for k in range(ds.p):
                    cols.append(mj * xs[:, k])
                    names.append(f"m[{sub.column_names[j]}]*{sub.column_names[k]}")
        design = np.column_stack(cols)
        if kept is None:
            kept = tuple(int(c) for c in independent_columns(design))
            if len(kept) < design.shape[1]:
                log.info("imputation design pruned to %d/%d columns",
                         len(kept), design.shape[1])
        fit = _fit(design[:, list(kept)], ys, outcome_kind,
                   columns=[names[c] for c in kept])

        fill = {"all": _predictor_moments(xs)}
        if with_indicators:
            for pattern, idx in patterns.items():
                if len(idx) >= ds.p + 2:
                    fill[str(pattern)] = _predictor_moments(xs[np.asarray(idx)])
        imputations.append({"fit": fit, "fill": fill})

    return MultipleImputationForecaster(
        procedure="mimi" if with_indicators else "mi",
        target="MC" if with_indicators else "MU",
        outcome_kind=outcome_kind, p=ds.p,
        indicator_cols=indicator_cols, interactions=interactions,
        kept_design_cols=kept, imputations=imputations,
        metadata={
            "m_imputations": cfg.m_imputations,
            "mice_iterations": cfg.mice_iterations,
            "restrict_to_observed_y": cfg.restrict_to_observed_y,
            "n_train": int(rows.size),
        },
    )


def train_mi(ds: MaskedDataset, cfg: ProcedureConfig,
             outcome_kind: str = "gaussian", rng=0) -> Forecaster:
    """Multiple imputation, plain outcome model; prediction pooling = mean."""
    return _train_imputation_family(ds, cfg, outcome_kind, rng,
                                    with_indicators=False)


def train_mimi(ds: MaskedDataset, cfg: ProcedureConfig,
               outcome_kind: str = "gaussian", rng=0) -> Forecaster:
    """Multiple imputation with missingness indicators in the outcome model
    (indicator main effects, plus indicator-by-predictor interactions unless
    disabled)."""
    return _train_imputation_family(ds, cfg, outcome_kind, rng,
                                    with_indicators=True)


# ---------------------------------------------------------------------------
# impute-then-regress (itr)
# ---------------------------------------------------------------------------

@dataclass
class ImputeThenRegressForecaster(Forecaster):
    procedure: str = "itr"
    target: str | None = "MC"
    outcome_kind: str = "gaussian"
    p: int = 0
    impute: str = "conditional_mean"
    fill_mean: np.ndarray = None      # predictor moments (conditional_mean)
    fill_cov: np.ndarray = None
    fill_values: np.ndarray = None    # per-column constants (zero / means)
    indicator_cols: tuple = ()
    interactions: bool = False
    kept_design_cols: tuple = ()
    fit: object = None
    metadata: dict = field(default_factory=dict)

    def _fill_block(self, pattern, block):
        if self.impute == "conditional_mean":
            return _conditional_mean_fill(block, pattern, self.fill_mean,
                                          self.fill_cov)
        full = np.empty((block.shape[0], self.p))
        obs = list(pattern.observed_indices)
        if obs:
            full[:, obs] = block
        for j in pattern.missing_indices:
            full[:, j] = self.fill_values[j]
        return full

    def _design(self, filled, pattern, n):
        cols = [np.ones(n), *(filled[:, j] for j in range(self.p))]
        for j in self.indicator_cols:
            bit = float(pattern.bits[j])
            cols.append(np.full(n, bit))
            if self.interactions:
                cols.extend(bit * filled[:, k] for k in range(self.p))
        return np.column_stack(cols)[:, list(self.kept_design_cols)]

    def predict(self, pattern, x_obs):
        block = np.asarray(x_obs, dtype=float)[None, :]
        filled = self._fill_block(pattern, block)
        point = _points(self.fit, self._design(filled, pattern, 1),
                        self.outcome_kind)[0]
        var = self.fit.resid_var if self.outcome_kind == "gaussian" else 0.0
        return _make_prediction(self.outcome_kind, point, var)

    def _predict_block(self, pattern, block):
        filled = self._fill_block(pattern, block)
        return _points(self.fit, self._design(filled, pattern, block.shape[0]),
                       self.outcome_kind)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION, "kind": "impute_then_regress",
            "procedure": self.procedure, "target": self.target,
            "outcome_kind": self.outcome_kind, "p": self.p,
            "impute": self.impute,
            "fill_mean": None if self.fill_mean is None else self.fill_mean.tolist(),
            "fill_cov": None if self.fill_cov is None else self.fill_cov.tolist(),
            "fill_values": None if self.fill_values is None else self.fill_values.tolist(),
            "indicator_cols": list(self.indicator_cols),
            "interactions": self.interactions,
            "kept_design_cols": list(self.kept_design_cols),
            "fit": _fit_to_dict(self.fit), "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda v: None if v is None else np.array(v)
        return cls(
            procedure=d["procedure"], target=d["target"],
            outcome_kind=d["outcome_kind"], p=d["p"], impute=d["impute"],
            fill_mean=arr(d["fill_mean"]), fill_cov=arr(d["fill_cov"]),
            fill_values=arr(d["fill_values"]),
            indicator_cols=tuple(d["indicator_cols"]),
            interactions=d["interactions"],
            kept_design_cols=tuple(d["kept_design_cols"]),
            fit=_fit_from_dict(d["fit"]), metadata=d.get("metadata", {}),
        )


def train_itr(ds: MaskedDataset, impute_fn: str = "conditional_mean",
              learner: str = "linear_with_indicator_interactions",
              outcome_kind: str = "gaussian") -> Forecaster:
    """Deterministic fill of missing cells followed by a single fit.

    The fill is one of zero / unconditional column mean / Gaussian
    conditional mean; the learner optionally includes missingness
    indicators with interactions, which is what makes the procedure
    pattern-aware. Exactly collinear columns created by deterministic
    fills (an indicator times its own filled column reproduces the fill
    function) are pruned before fitting.
    """
    _check_outcome_kind(outcome_kind)
    if impute_fn not in ("zero", "unconditional_mean", "conditional_mean"):
        raise InputError(f"unknown impute_fn {impute_fn!r}")
    if learner not in ("linear", "linear_with_indicator_interactions"):
        raise InputError(f"unknown learner {learner!r}")
    rows = _outcome_rows(ds)
    if rows.size < ds.p + 3:
        raise TrainingError("too few outcome-observed rows")
    sub = ds.subset(rows)

    fill_mean = fill_cov = fill_values = None
    if impute_fn == "zero":
        fill_values = np.zeros(ds.p)
    elif impute_fn == "unconditional_mean":
        fill_values = np.array([
            sub.x[~sub.mask_x[:, j], j].mean() if (~sub.mask_x[:, j]).any() else 0.0
            for j in range(ds.p)
        ])
    else:
        fit = em_mvn(np.where(sub.mask_x, 0.0, sub.x), sub.mask_x)
        fill_mean, fill_cov = fit.mean, fit.cov

    with_ind = learner == "linear_with_indicator_interactions"
    indicator_cols = tuple(j for j in range(ds.p) if sub.mask_x[:, j].any()) \
        if with_ind else ()

    fc = ImputeThenRegressForecaster(
        procedure="itr", target="MC" if with_ind else None,
        outcome_kind=outcome_kind, p=ds.p, impute=impute_fn,
        fill_mean=fill_mean, fill_cov=fill_cov, fill_values=fill_values,
        indicator_cols=indicator_cols, interactions=with_ind,
        kept_design_cols=(), fit=None,
        metadata={"impute": impute_fn, "learner": learner, "n_train": int(rows.size)},
    )
    # training design: fill each row under its own pattern
    by_pattern = {}
    for i in range(sub.n):
        by_pattern.setdefault(sub.pattern(i), []).append(i)
    filled = np.empty((sub.n, ds.p))
    for pattern, idx in by_pattern.items():
        idx = np.asarray(idx)
        obs = list(pattern.observed_indices)
        filled[idx] = fc._fill_block(pattern, sub.x[idx][:, obs])
    cols = [np.ones(sub.n), *(filled[:, j] for j in range(ds.p))]
    for j in indicator_cols:
        mj = sub.mask_x[:, j].astype(float)
        cols.append(mj)
        if with_ind:
            cols.extend(mj * filled[:, k] for k in range(ds.p))
    design = np.column_stack(cols)
    kept = tuple(int(c) for c in independent_columns(design))
    fc.kept_design_cols = kept
    fc.fit = _fit(design[:, list(kept)], sub.y, outcome_kind)
    return fc


# ---------------------------------------------------------------------------
# dispatch + serialization
# ---------------------------------------------------------------------------

def train(ds: MaskedDataset, cfg: ProcedureConfig,
          outcome_kind: str = "gaussian", rng=0) -> Forecaster:
    """Train the procedure named by the config."""
    if cfg.name == "ps":
        return train_ps(ds, outcome_kind)
    if cfg.name == "ccs":
        return train_ccs(ds, outcome_kind)
    if cfg.name == "cca":
        return train_cca(ds, outcome_kind)
    if cfg.name == "mi":
        return train_mi(ds, cfg, outcome_kind, rng)
    if cfg.name == "mimi":
        return train_mimi(ds, cfg, outcome_kind, rng)
    if cfg.name == "mle_m":
        return train_mle_marg(ds, cfg, with_indicators=False, outcome_kind=outcome_kind)
    if cfg.name == "mlemi_m":
        return train_mle_marg(ds, cfg, with_indicators=True, outcome_kind=outcome_kind)
    if cfg.name == "itr":
        return train_itr(ds, cfg.itr_impute, cfg.itr_learner, outcome_kind)
    raise InputError(f"unknown procedure {cfg.name!r}")


_KINDS = {
    "pattern_submodels": PatternSubmodelForecaster,
    "marginalising_gaussian": MarginalisingGaussianForecaster,
    "stratified_gaussian": StratifiedGaussianForecaster,
    "indicator_covariate_gaussian": _IndicatorCovariateForecaster,
    "multiple_imputation": MultipleImputationForecaster,
    "impute_then_regress": ImputeThenRegressForecaster,
}


def forecaster_from_dict(d: dict) -> Forecaster:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported forecaster format version {version!r}")
    kind = d.get("kind")
    if kind not in _KINDS:
        raise InputError(f"unknown forecaster kind {kind!r}")
    return _KINDS[kind].from_dict(d)


def save_forecaster(fc: Forecaster, path) -> None:
    with open(path, "w") as fh:
        json.dump(fc.to_dict(), fh, indent=1)


def load_forecaster(path) -> Forecaster:
    with open(path) as fh:
        return forecaster_from_dict(json.load(fh))
