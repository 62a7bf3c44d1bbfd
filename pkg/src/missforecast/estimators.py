"""Numerical estimation kernels.

Dense-matrix routines sized for small design matrices (d <= ~20): least
squares with residual variance, Newton logistic regression with step
halving, EM for a multivariate Gaussian under arbitrary missingness, and
posterior draws from the noninformative Bayesian linear model used by the
imputation engine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import (
    InputError,
    NumericError,
    SeparationError,
    SingularDesignError,
)

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray            # one entry per design column
    resid_var: float
    n_used: int
    xtx_inv: np.ndarray         # (X'X)^-1, symmetric; feeds posterior draws

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.coef


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float

    def predict_prob(self, x: np.ndarray) -> np.ndarray:
        return expit(np.asarray(x, dtype=float) @ self.coef)


@dataclass(frozen=True)
class MvnFit:
    mean: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    loglik_path: np.ndarray = field(repr=False, default=None)


def _column_label(columns, j):
    if columns is not None and j < len(columns):
        return columns[j]
    return j


def check_full_rank(x: np.ndarray, columns=None) -> None:
    """Raise SingularDesignError naming the first dependent column."""
    x = np.asarray(x, dtype=float)
    if x.shape[1] == 0:
        raise InputError("design matrix has no columns")
    _, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > _RANK_TOL * scale * max(x.shape)))
    if rank < x.shape[1]:
        raise SingularDesignError(_column_label(columns, int(piv[rank])))


def independent_columns(x: np.ndarray) -> np.ndarray:
    """Indices (sorted) of a maximal linearly independent column subset."""
    x = np.asarray(x, dtype=float)
    if x.shape[1] == 0:
        return np.array([], dtype=int)
    _, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > _RANK_TOL * scale * max(x.shape)))
    return np.sort(piv[:rank])


def ols(x: np.ndarray, y: np.ndarray, columns=None) -> LinearFit:
    """Least squares fit of a full design matrix (caller supplies intercept).

    resid_var is RSS / (n - q) with q design columns; requires n > q and a
    full-rank design (rank deficiency raises naming the offending column).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2:
        raise InputError("design must be 2-D")
    n, q = x.shape
    if y.shape != (n,):
        raise InputError(f"y length {y.shape} != {n}")
    if n <= q:
        raise InputError(f"need n > q, got n={n}, q={q}")
    check_full_rank(x, columns)
    qmat, rmat = np.linalg.qr(x)
    coef = scipy.linalg.solve_triangular(rmat, qmat.T @ y)
    resid = y - x @ coef
    rss = float(resid @ resid)
    rinv = scipy.linalg.solve_triangular(rmat, np.eye(q))
    xtx_inv = rinv @ rinv.T
    return LinearFit(
        coef=coef,
        resid_var=rss / (n - q),
        n_used=n,
        xtx_inv=0.5 * (xtx_inv + xtx_inv.T),
    )


def _bernoulli_deviance(y, eta):
    # -2 loglik, numerically stable via logaddexp
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta))


def irls_logistic(
    x: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 50,
    columns=None,
) -> LogisticFit:
    """Newton-Raphson on the Bernoulli log-likelihood with step halving.

    Stops when the gradient max-norm drops below ``tol``. A diverging
    coefficient norm with near-zero deviance signals separation and raises.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise InputError("y must be binary 0/1")
    n, q = x.shape
    if n <= q:
        raise InputError(f"need n > q, got n={n}, q={q}")
    check_full_rank(x, columns)

    coef = np.zeros(q)
    eta = x @ coef
    dev = _bernoulli_deviance(y, eta)
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        grad = x.T @ (y - p)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            converged = True
            break
        w = p * (1.0 - p)
        h = x.T @ (x * np.maximum(w, 1e-10)[:, None])
        try:
            step = scipy.linalg.solve(h, grad, assume_a="pos")
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(f"logistic Hessian solve failed: {exc}") from exc
        # step halving keeps the deviance monotone
        scale = 1.0
        for _ in range(30):
            cand = coef + scale * step
            eta_cand = x @ cand
            dev_cand = _bernoulli_deviance(y, eta_cand)
            if dev_cand <= dev + 1e-10:
                break
            scale *= 0.5
        coef, eta, dev = cand, eta_cand, dev_cand
        if np.max(np.abs(coef)) > 1e3 or (dev < 1e-6 and np.max(np.abs(eta)) > 25):
            raise SeparationError(
                "diverging coefficients: data are (quasi-)separated, the MLE is infinite"
            )
    p = expit(eta)
    grad_norm = float(np.max(np.abs(x.T @ (y - p))))
    return LogisticFit(coef=coef, converged=converged or grad_norm <= tol,
                       iterations=it, grad_norm=grad_norm)


# ---------------------------------------------------------------------------
# EM for the multivariate Gaussian with missing entries
# ---------------------------------------------------------------------------

def gaussian_conditional(mean, cov, obs_idx, mis_idx, x_obs):
    """Mean and covariance of the missing block given the observed one."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if len(obs_idx) == 0:
        return mean[mis_idx].copy(), cov[np.ix_(mis_idx, mis_idx)].copy()
    s_oo = cov[np.ix_(obs_idx, obs_idx)]
    s_mo = cov[np.ix_(mis_idx, obs_idx)]
    try:
        solve = scipy.linalg.cho_solve(scipy.linalg.cho_factor(s_oo), np.eye(len(obs_idx)))
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"observed-block covariance is singular: {exc}") from exc
    gain = s_mo @ solve
    cond_mean = mean[mis_idx] + gain @ (np.asarray(x_obs) - mean[obs_idx])
    cond_cov = cov[np.ix_(mis_idx, mis_idx)] - gain @ s_mo.T
    return cond_mean, 0.5 * (cond_cov + cond_cov.T)


def _observed_loglik(x, groups, mean, cov):
    ll = 0.0
    for obs_idx, rows in groups:
        if len(obs_idx) == 0:
            continue
        xo = x[rows][:, obs_idx]
        mo = mean[obs_idx]
        s_oo = cov[np.ix_(obs_idx, obs_idx)]
        chol = scipy.linalg.cho_factor(s_oo)
        logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
        dev = xo - mo
        sol = scipy.linalg.cho_solve(chol, dev.T)
        quad = np.sum(dev.T * sol, axis=0)
        k = len(obs_idx)
        ll += float(np.sum(-0.5 * (k * np.log(2 * np.pi) + logdet + quad)))
    return ll


def em_mvn(
    x: np.ndarray,
    mask: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> MvnFit:
    """Maximum-likelihood Gaussian fit under missingness via EM.

    Rows with no observed cell are dropped; every column must be observed at
    least twice. The observed-data log-likelihood is checked to be
    nondecreasing at every step. A covariance losing positive definiteness is
    ridge-repaired (1e-10 * I) with a warning; persistent failure raises.
    """
    x = np.array(x, dtype=float)
    mask = np.array(mask, dtype=bool)
    if x.ndim != 2 or mask.shape != x.shape:
        raise InputError("x and mask must be matching 2-D arrays")
    keep = ~mask.all(axis=1)
    x, mask = x[keep], mask[keep]
    n, d = x.shape
    if n < 2:
        raise InputError("need at least two usable rows")
    col_obs = (~mask).sum(axis=0)
    if (col_obs < 2).any():
        bad = int(np.argmin(col_obs))
        raise InputError(f"column {bad} observed fewer than twice")
    x = np.where(mask, 0.0, x)

    # group rows by observation pattern once
    groups = []
    pat_codes = (mask * (1 << np.arange(d))).sum(axis=1)
    for code in np.unique(pat_codes):
        rows = np.where(pat_codes == code)[0]
        obs_idx = np.where(~mask[rows[0]])[0]
        mis_idx = np.where(mask[rows[0]])[0]
        groups.append((obs_idx, mis_idx, rows))
    ll_groups = [(obs, rows) for obs, _, rows in groups]

    # init: observed-cell means and variances, zero cross terms
    mean = np.array([x[~mask[:, j], j].mean() for j in range(d)])
    var0 = np.array([max(x[~mask[:, j], j].var(), 1e-8) for j in range(d)])
    cov = np.diag(var0)

    def repaired(c):
        try:
            scipy.linalg.cho_factor(c)
            return c, False
        except scipy.linalg.LinAlgError:
            c2 = c + 1e-10 * np.eye(d)
            try:
                scipy.linalg.cho_factor(c2)
            except scipy.linalg.LinAlgError as exc:
                raise NumericError(f"covariance repair failed: {exc}") from exc
            warnings.warn("EM covariance lost positive definiteness; ridge-repaired")
            return c2, True

    cov, _ = repaired(cov)
    ll_old = _observed_loglik(x, ll_groups, mean, cov)
    path = [ll_old]
    it = 0
    for it in range(1, max_iter + 1):
        filled = x.copy()
        second = np.zeros((d, d))
        for obs_idx, mis_idx, rows in groups:
            if len(mis_idx) == 0:
                continue
            if len(obs_idx) == 0:
                filled[np.ix_(rows, mis_idx)] = mean[mis_idx]
                second[np.ix_(mis_idx, mis_idx)] += len(rows) * cov[np.ix_(mis_idx, mis_idx)]
                continue
            s_oo = cov[np.ix_(obs_idx, obs_idx)]
            s_mo = cov[np.ix_(mis_idx, obs_idx)]
            chol = scipy.linalg.cho_factor(s_oo)
            gain = scipy.linalg.cho_solve(chol, s_mo.T).T
            dev = x[rows][:, obs_idx] - mean[obs_idx]
            cond_means = mean[mis_idx] + dev @ gain.T
            filled[np.ix_(rows, mis_idx)] = cond_means
            cond_cov = cov[np.ix_(mis_idx, mis_idx)] - gain @ s_mo.T
            second[np.ix_(mis_idx, mis_idx)] += len(rows) * cond_cov
        mean = filled.mean(axis=0)
        centered = filled - mean
        cov_new = (centered.T @ centered + second) / n
        cov_new = 0.5 * (cov_new + cov_new.T)
        cov, _ = repaired(cov_new)
        ll_new = _observed_loglik(x, ll_groups, mean, cov)
        if ll_new < ll_old - 1e-8 * (1.0 + abs(ll_old)):
            raise NumericError(
                f"EM log-likelihood decreased at iteration {it}: {ll_old} -> {ll_new}"
            )
        path.append(ll_new)
        if ll_new - ll_old <= tol:
            ll_old = ll_new
            break
        ll_old = ll_new
    return MvnFit(mean=mean, cov=cov, loglik=ll_old, iterations=it,
                  loglik_path=np.array(path))


def posterior_draw(fit: LinearFit, rng: np.random.Generator):
    """One draw of (coef, sigma^2) from the noninformative-prior posterior.

    sigma^2 ~ resid_var * df / chi2(df) with df = n_used - q, then
    coef ~ N(fit.coef, sigma^2 * (X'X)^-1).
    """
    q = fit.coef.shape[0]
    df = fit.n_used - q
    if df <= 0:
        raise InputError(f"posterior draw needs n_used > q (df={df})")
    if fit.resid_var == 0.0:
        return fit.coef.copy(), 0.0
    sigma2 = fit.resid_var * df / rng.chisquare(df)
    chol = np.linalg.cholesky(fit.xtx_inv + 1e-14 * np.eye(q))
    coef = fit.coef + np.sqrt(sigma2) * (chol @ rng.standard_normal(q))
    return coef, float(sigma2)
