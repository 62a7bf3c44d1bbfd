"""Reference forecasters computed exactly from the generative law.

The missingness-unconditional (MU) predictor conditions on observed
predictor values only and is available in closed form (Gaussian
conditioning). The missingness-conditional (MC) predictor additionally
conditions on the observation pattern; under a logistic hazard it has no
closed form, so its moments are computed by reweighting the conditional
Gaussian density with the hazard and integrating with tensorised
Gauss-Hermite quadrature (at most two dimensions: the missing predictor
and the outcome).

With the change of variables v = m + sqrt(2) L t (L the Cholesky factor of
the conditional covariance), an expectation E[g(V) w(V)] becomes
pi^(-d/2) * sum_k w_k g(v_k) w(v_k); the pi factors cancel in the
moment ratios computed here.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .core import Forecaster, GaussianPrediction, MaskedDataset, Pattern
from .datagen import GenerativeSpec
from .errors import InputError, NumericError, UnsupportedPatternError
from .estimators import gaussian_conditional

DEFAULT_NODES = 64
MIN_PATTERN_PROB = 1e-12
_NORMALIZER_FLOOR = 1e-300


@lru_cache(maxsize=8)
def _gh_nodes(n: int):
    t, w = np.polynomial.hermite.hermgauss(n)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def conditional_gaussian(spec: GenerativeSpec, pattern: Pattern,
                         x_obs: np.ndarray) -> GaussianPrediction:
    """Exact law of the outcome given the observed predictor coordinates."""
    if pattern.p != 2:
        raise InputError("generative law has exactly two predictors")
    mean = spec.joint_mean()
    cov = spec.joint_cov()
    obs = list(pattern.observed_indices)
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.shape != (len(obs),):
        raise InputError(f"expected {len(obs)} observed values, got {x_obs.shape}")
    m, c = gaussian_conditional(mean, cov, obs_idx=obs, mis_idx=[2], x_obs=x_obs)
    return GaussianPrediction(mean=float(m[0]), variance=float(c[0, 0]))


def pattern_probability(spec: GenerativeSpec, pattern: Pattern,
                        n_nodes: int = DEFAULT_NODES) -> float:
    """Marginal probability of the pattern under the generative law.

    The hazard logit is a scalar Gaussian variable, so one-dimensional
    quadrature suffices.
    """
    if pattern.p != 2:
        raise InputError("generative law has exactly two predictors")
    if pattern.bits[1] == 1:
        return 0.0  # second predictor is never missing
    m1 = pattern.bits[0]
    if np.isneginf(spec.miss_logit.alpha0):
        return 1.0 if m1 == 0 else 0.0
    ml = spec.miss_logit
    w_vec = np.array([ml.a_x1, ml.a_x2, ml.a_y])
    mu_eta = ml.alpha0 + float(w_vec @ spec.joint_mean())
    var_eta = float(w_vec @ spec.joint_cov() @ w_vec)
    if var_eta <= 0:
        p1 = float(expit(mu_eta))
    else:
        t, w = _gh_nodes(n_nodes)
        eta = mu_eta + np.sqrt(2.0 * var_eta) * t
        p1 = float((w * expit(eta)).sum() / np.sqrt(np.pi))
    return p1 if m1 == 1 else 1.0 - p1


def mc_predict(spec: GenerativeSpec, pattern: Pattern, x_obs: np.ndarray,
               n_nodes: int = DEFAULT_NODES) -> GaussianPrediction:
    """Moments of the outcome given observed values AND the pattern.

    The density of (missing predictor, outcome) given the observed values is
    reweighted by the hazard term for the queried pattern and integrated;
    a vanishing normaliser raises with advice to increase the node count.
    """
    if pattern.p != 2:
        raise InputError("generative law has exactly two predictors")
    prob = pattern_probability(spec, pattern, n_nodes)
    if prob < MIN_PATTERN_PROB:
        raise InputError(
            f"pattern {pattern} has probability {prob:.3g} under the generative law; "
            "the pattern-conditional target is undefined on null patterns"
        )
    x_obs = np.asarray(x_obs, dtype=float)
    if np.isneginf(spec.miss_logit.alpha0):
        return conditional_gaussian(spec, pattern, x_obs)

    m1 = pattern.bits[0]
    ml = spec.miss_logit
    mean = spec.joint_mean()
    cov = spec.joint_cov()
    obs = list(pattern.observed_indices)
    mis = [k for k in (0, 1) if k not in obs] + [2]  # missing predictors, then y
    if x_obs.shape != (len(obs),):
        raise InputError(f"expected {len(obs)} observed values, got {x_obs.shape}")
    cm, cc = gaussian_conditional(mean, cov, obs_idx=obs, mis_idx=mis, x_obs=x_obs)
    chol = np.linalg.cholesky(cc + 1e-14 * np.eye(len(mis)))
    t, w = _gh_nodes(n_nodes)

    if len(mis) == 1:
        # full predictor evidence: integrate over the outcome only
        y = cm[0] + np.sqrt(2.0) * chol[0, 0] * t
        eta = ml.alpha0 + ml.a_x1 * x_obs[0] + ml.a_x2 * x_obs[1] + ml.a_y * y
        weight = w * (expit(eta) if m1 == 1 else expit(-eta))
        yv = y
    else:
        # missing x1: tensor grid over (x1, y) given x2
        ti, tj = np.meshgrid(t, t, indexing="ij")
        z = np.stack([ti.ravel(), tj.ravel()])
        v = cm[:, None] + np.sqrt(2.0) * (chol @ z)
        x1, yv = v[0], v[1]
        eta = ml.alpha0 + ml.a_x1 * x1 + ml.a_x2 * x_obs[0] + ml.a_y * yv
        weight = (w[:, None] * w[None, :]).ravel() * (expit(eta) if m1 == 1 else expit(-eta))

    total = float(weight.sum())
    if not np.isfinite(total) or total < _NORMALIZER_FLOOR:
        raise NumericError(
            "quadrature normaliser underflowed; increase n_nodes or check the query"
        )
    mean_y = float((weight * yv).sum() / total)
    var_y = float((weight * yv * yv).sum() / total - mean_y**2)
    return GaussianPrediction(mean=mean_y, variance=max(var_y, 0.0))


@dataclass
class OracleForecaster(Forecaster):
    """Reference forecaster evaluated directly on the generative law."""

    spec: GenerativeSpec = None
    target: str = "MU"
    n_nodes: int = DEFAULT_NODES
    outcome_kind: str = "gaussian"

    def __post_init__(self):
        if self.spec is None:
            raise InputError("spec is required")
        if self.target not in ("MU", "MC"):
            raise InputError(f"target must be MU or MC, got {self.target!r}")
        self.procedure = f"oracle_{self.target.lower()}"

    def predict(self, pattern: Pattern, x_obs: np.ndarray) -> GaussianPrediction:
        if self.target == "MU":
            return conditional_gaussian(self.spec, pattern, x_obs)
        return mc_predict(self.spec, pattern, x_obs, self.n_nodes)

    def _check_pattern(self, pattern: Pattern) -> None:
        if self.target == "MC" and \
                pattern_probability(self.spec, pattern, self.n_nodes) < MIN_PATTERN_PROB:
            raise UnsupportedPatternError(pattern, "null pattern under the generative law")

    def _predict_block(self, pattern: Pattern, x_obs_block: np.ndarray) -> np.ndarray:
        x_obs_block = np.asarray(x_obs_block, dtype=float)
        if self.target == "MU":
            return _mu_means_block(self.spec, pattern, x_obs_block)
        return _mc_means_block(self.spec, pattern, x_obs_block, self.n_nodes)


def _mu_means_block(spec, pattern, block):
    mean = spec.joint_mean()
    cov = spec.joint_cov()
    obs = list(pattern.observed_indices)
    if not obs:
        return np.full(block.shape[0], mean[2])
    s_oo = cov[np.ix_(obs, obs)]
    s_yo = cov[np.ix_([2], obs)]
    gain = np.linalg.solve(s_oo, s_yo.T).ravel()
    return mean[2] + (block - mean[obs]) @ gain


def _mc_means_block(spec, pattern, block, n_nodes):
    """Vectorised pattern-conditional means for rows sharing one pattern."""
    n = block.shape[0]
    prob = pattern_probability(spec, pattern, n_nodes)
    if prob < MIN_PATTERN_PROB:
        raise UnsupportedPatternError(pattern, "null pattern under the generative law")
    if np.isneginf(spec.miss_logit.alpha0):
        return _mu_means_block(spec, pattern, block)
    ml = spec.miss_logit
    mean = spec.joint_mean()
    cov = spec.joint_cov()
    obs = list(pattern.observed_indices)
    mis = [k for k in (0, 1) if k not in obs] + [2]
    m1 = pattern.bits[0]
    t, w = _gh_nodes(n_nodes)

    s_oo = cov[np.ix_(obs, obs)] if obs else None
    if obs:
        gain = np.linalg.solve(s_oo, cov[np.ix_(obs, mis)]).T
        cond_cov = cov[np.ix_(mis, mis)] - gain @ cov[np.ix_(obs, mis)]
        cond_means = mean[mis] + (block - mean[obs]) @ gain.T
    else:
        cond_cov = cov[np.ix_(mis, mis)]
        cond_means = np.tile(mean[mis], (n, 1))
    chol = np.linalg.cholesky(0.5 * (cond_cov + cond_cov.T) + 1e-14 * np.eye(len(mis)))

    if len(mis) == 1:
        y = cond_means[:, [0]] + np.sqrt(2.0) * chol[0, 0] * t[None, :]
        eta = ml.alpha0 + ml.a_y * y
        if 0 in obs:
            eta = eta + ml.a_x1 * block[:, [obs.index(0)]]
        if 1 in obs:
            eta = eta + ml.a_x2 * block[:, [obs.index(1)]]
        weight = w[None, :] * (expit(eta) if m1 == 1 else expit(-eta))
        yv = y
    else:
        ti, tj = np.meshgrid(t, t, indexing="ij")
        z = np.stack([ti.ravel(), tj.ravel()])
        v = np.sqrt(2.0) * (chol @ z)                       # (2, k)
        x1 = cond_means[:, [0]] + v[0][None, :]
        yv = cond_means[:, [1]] + v[1][None, :]
        eta = ml.alpha0 + ml.a_x1 * x1 + ml.a_y * yv
        if 1 in obs:
            eta = eta + ml.a_x2 * block[:, [obs.index(1)]]
        weight = (w[:, None] * w[None, :]).ravel()[None, :] * \
            (expit(eta) if m1 == 1 else expit(-eta))

    total = weight.sum(axis=1)
    if not np.all(np.isfinite(total)) or np.any(total < _NORMALIZER_FLOOR):
        raise NumericError("quadrature normaliser underflowed; increase n_nodes")
    return (weight * yv).sum(axis=1) / total


def oracle_risk(spec: GenerativeSpec, target: str, test: MaskedDataset,
                n_nodes: int = DEFAULT_NODES) -> float:
    """Mean squared error of the reference forecaster on a test set."""
    if test.mask_y.any():
        raise InputError("test set must carry the true outcome for every row")
    oracle = OracleForecaster(spec=spec, target=target, n_nodes=n_nodes)
    preds = oracle.predict_dataset(test)
    return float(np.mean((test.y - preds) ** 2))
