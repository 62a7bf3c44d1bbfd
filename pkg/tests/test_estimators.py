import numpy as np
import pytest
import scipy.optimize
import scipy.stats
from scipy.special import expit, logit

from missforecast.errors import InputError, SeparationError, SingularDesignError
from missforecast.estimators import (
    em_mvn,
    gaussian_conditional,
    irls_logistic,
    ols,
    posterior_draw,
)


def design(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1:
        x = x.T
    return np.column_stack([np.ones(x.shape[0]), x])


# ---------------------------------------------------------------------------
# ols
# ---------------------------------------------------------------------------

def test_ols_exact_line():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    fit = ols(design(x), 2.0 * x)
    assert np.allclose(fit.coef, [0.0, 2.0], atol=1e-12)
    assert fit.resid_var == pytest.approx(0.0, abs=1e-20)


def test_ols_intercept_only():
    y = np.array([1.0, 3.0, 5.0])
    fit = ols(np.ones((3, 1)), y)
    assert fit.coef[0] == pytest.approx(y.mean())


def test_ols_matches_pinv_reference():
    rng = np.random.default_rng(7)
    x = np.column_stack([np.ones(50), rng.standard_normal((50, 3))])
    y = rng.standard_normal(50)
    fit = ols(x, y)
    ref = np.linalg.pinv(x) @ y  # independent normal-equations route
    assert np.max(np.abs(fit.coef - ref)) < 1e-10


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(3)
    x = np.column_stack([np.ones(80), rng.standard_normal((80, 4))])
    y = rng.standard_normal(80)
    fit = ols(x, y)
    resid = y - x @ fit.coef
    scale = np.abs(x.T @ y).max() + 1.0
    assert np.max(np.abs(x.T @ resid)) <= 1e-8 * scale


def test_ols_rank_deficiency_names_column():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(20)
    x = np.column_stack([np.ones(20), a, 2.0 * a])
    with pytest.raises(SingularDesignError) as exc:
        ols(x, rng.standard_normal(20), columns=("const", "a", "twice_a"))
    assert exc.value.column in ("a", "twice_a")


def test_ols_requires_more_rows_than_columns():
    with pytest.raises(InputError):
        ols(np.ones((2, 2)), np.zeros(2))


# ---------------------------------------------------------------------------
# irls_logistic
# ---------------------------------------------------------------------------

def test_logistic_independent_predictor():
    rng = np.random.default_rng(11)
    n = 4000
    x = rng.standard_normal(n)
    y = (rng.random(n) < 0.25).astype(float)
    fit = irls_logistic(design(x), y)
    assert fit.converged
    assert fit.coef[0] == pytest.approx(logit(y.mean()), abs=0.05)
    assert abs(fit.coef[1]) < 0.1
    # intercept-only MLE hits the prevalence exactly
    only = irls_logistic(np.ones((y.size, 1)), y)
    assert only.coef[0] == pytest.approx(logit(y.mean()), abs=1e-8)


def test_logistic_separation_raises():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(SeparationError):
        irls_logistic(design(x), y)


def test_logistic_recovers_known_coefficients():
    rng = np.random.default_rng(42)
    n = 100_000
    x = rng.standard_normal((n, 2))
    truth = np.array([0.5, -1.0, 2.0])
    y = (rng.random(n) < expit(design(x) @ truth)).astype(float)
    fit = irls_logistic(design(x), y)
    assert fit.converged
    # within 3 standard errors of the truth (and tightly at this n)
    p = fit.predict_prob(design(x))
    w = p * (1 - p)
    info = design(x).T @ (design(x) * w[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    assert np.all(np.abs(fit.coef - truth) < 3 * se)
    assert np.max(np.abs(fit.coef - truth)) < 0.05


def test_logistic_matches_independent_optimizer():
    rng = np.random.default_rng(5)
    n = 400
    x = design(rng.standard_normal((n, 2)))
    y = (rng.random(n) < expit(x @ np.array([0.3, 0.8, -0.5]))).astype(float)
    fit = irls_logistic(x, y)

    def negll(beta):
        eta = x @ beta
        return np.sum(np.logaddexp(0.0, eta) - y * eta)

    ref = scipy.optimize.minimize(negll, np.zeros(3), method="BFGS",
                                  options={"gtol": 1e-10}).x
    assert np.max(np.abs(fit.coef - ref)) < 1e-5


def test_logistic_deviance_monotone():
    rng = np.random.default_rng(9)
    n = 300
    x = design(rng.standard_normal((n, 3)))
    y = (rng.random(n) < expit(x @ np.array([0.2, 1.0, -1.0, 0.5]))).astype(float)
    fit = irls_logistic(x, y)
    assert fit.converged and fit.grad_norm <= 1e-8


# ---------------------------------------------------------------------------
# em_mvn
# ---------------------------------------------------------------------------

def mvn_loglik_reference(x, mask, mean, cov):
    """Independent per-row marginal-Gaussian evaluation."""
    ll = 0.0
    for i in range(x.shape[0]):
        obs = np.where(~mask[i])[0]
        if obs.size == 0:
            continue
        ll += scipy.stats.multivariate_normal.logpdf(
            x[i, obs], mean[obs], cov[np.ix_(obs, obs)]
        )
    return ll


def test_em_complete_data_is_sample_moments():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((200, 3)) @ np.diag([1.0, 2.0, 0.5]) + [1.0, -1.0, 0.0]
    mask = np.zeros_like(x, dtype=bool)
    fit = em_mvn(x, mask)
    assert np.allclose(fit.mean, x.mean(axis=0), atol=1e-10)
    assert np.allclose(fit.cov, np.cov(x.T, bias=True), atol=1e-10)


def test_em_recovers_truth_under_mcar():
    rng = np.random.default_rng(2024)
    n = 10_000
    truth_mean = np.array([0.5, -0.2, 1.0])
    a = rng.standard_normal((3, 3))
    truth_cov = a @ a.T + np.eye(3)
    x = rng.multivariate_normal(truth_mean, truth_cov, size=n)
    mask = rng.random((n, 3)) < 0.3
    mask[mask.all(axis=1)] = False
    fit = em_mvn(x, mask)
    assert np.max(np.abs(fit.mean - truth_mean)) < 0.05
    assert np.max(np.abs(fit.cov - truth_cov)) < 0.2


def test_em_loglik_matches_independent_evaluator():
    rng = np.random.default_rng(77)
    n = 300
    x = rng.multivariate_normal([0, 0, 0], [[1, 0.5, 0.2], [0.5, 1, 0.3], [0.2, 0.3, 1]], size=n)
    mask = rng.random((n, 3)) < 0.25
    mask[mask.all(axis=1)] = False
    fit = em_mvn(x, mask)
    xs = np.where(mask, 0.0, x)
    ref = mvn_loglik_reference(xs, mask, fit.mean, fit.cov)
    assert fit.loglik == pytest.approx(ref, abs=1e-8)


def test_em_loglik_monotone_fuzz():
    rng = np.random.default_rng(31415)
    for _ in range(100):
        n = int(rng.integers(20, 120))
        d = int(rng.integers(2, 5))
        a = rng.standard_normal((d, d))
        cov = a @ a.T + 0.5 * np.eye(d)
        x = rng.multivariate_normal(rng.standard_normal(d), cov, size=n)
        mask = rng.random((n, d)) < rng.uniform(0.05, 0.45)
        for j in range(d):  # keep every column observed at least twice
            obs = np.where(~mask[:, j])[0]
            if obs.size < 2:
                mask[: 2, j] = False
        fit = em_mvn(x, mask)
        gains = np.diff(fit.loglik_path)
        assert np.all(gains >= -1e-8 * (1.0 + np.abs(fit.loglik_path[:-1])))


def test_em_rejects_underobserved_column():
    x = np.random.default_rng(0).standard_normal((10, 2))
    mask = np.zeros_like(x, dtype=bool)
    mask[1:, 1] = True
    with pytest.raises(InputError):
        em_mvn(x, mask)


# ---------------------------------------------------------------------------
# posterior_draw
# ---------------------------------------------------------------------------

def test_posterior_draw_degenerate():
    x = design(np.array([0.0, 1.0, 2.0, 3.0]))
    fit = ols(x, 2.0 * np.array([0.0, 1.0, 2.0, 3.0]))
    coef, sigma2 = posterior_draw(fit, np.random.default_rng(0))
    assert sigma2 == 0.0
    assert np.allclose(coef, fit.coef)


def test_posterior_draw_moments():
    rng = np.random.default_rng(123)
    n = 200
    x = design(rng.standard_normal((n, 2)))
    y = x @ np.array([1.0, 0.5, -0.5]) + rng.standard_normal(n)
    fit = ols(x, y)
    draws = np.array([posterior_draw(fit, rng)[0] for _ in range(100_00)])
    sig2 = np.array([posterior_draw(fit, rng)[1] for _ in range(100_00)])
    assert np.max(np.abs(draws.mean(axis=0) - fit.coef)) < 0.01
    df = fit.n_used - fit.coef.size
    expected = fit.resid_var * df / (df - 2)
    assert sig2.mean() == pytest.approx(expected, rel=0.05)


def test_gaussian_conditional_schur():
    mean = np.array([1.0, 2.0, 3.0])
    cov = np.array([[2.0, 0.6, 0.4], [0.6, 1.5, 0.5], [0.4, 0.5, 1.0]])
    m, c = gaussian_conditional(mean, cov, obs_idx=[2], mis_idx=[0, 1], x_obs=[4.0])
    gain = cov[np.ix_([0, 1], [2])] / cov[2, 2]
    assert np.allclose(m, mean[[0, 1]] + (gain * (4.0 - 3.0)).ravel())
    assert np.allclose(c, cov[np.ix_([0, 1], [0, 1])] - gain @ gain.T * cov[2, 2])
