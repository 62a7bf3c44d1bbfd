"""Synthetic data generation for the five missingness scenarios.

Two correlated Gaussian predictors and a linear-Gaussian outcome; only the
first predictor can go missing, through a logistic hazard whose active
inputs are dictated by the scenario:

    S1  constant hazard
    S2  hazard on the always-observed predictor (x2)
    S3  hazard on the missable predictor itself (x1)
    S4  hazard on the missable predictor and the outcome (x1, y)
    S5  hazard on the outcome only (y)

The outcome's own missingness is an independent Bernoulli coin. The hazard
intercept is calibrated by Monte Carlo + bisection so the expected
missingness proportion hits a requested target; a target of zero disables
the mechanism entirely (intercept -inf).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .core import MaskedDataset
from .errors import InputError, NumericError
from .mechanisms import DiscreteJoint, Variable

SCENARIOS = ("S1", "S2", "S3", "S4", "S5")

# which hazard slopes are active per scenario: (x1, x2, y)
_ACTIVE = {
    "S1": (False, False, False),
    "S2": (False, True, False),
    "S3": (True, False, False),
    "S4": (True, False, True),
    "S5": (False, False, True),
}

NO_MISSINGNESS = -np.inf

# fixed calibration stream, disjoint from every data-generation seed
CALIBRATION_SEED = 0x7C3A11B
CALIBRATION_DRAWS = 10**6


@dataclass(frozen=True)
class MissLogit:
    """Coefficients of the hazard logit for the missable predictor."""

    alpha0: float
    a_x1: float = 0.0
    a_x2: float = 0.0
    a_y: float = 0.0


@dataclass(frozen=True)
class GenerativeSpec:
    mu_x: np.ndarray
    sigma_x: np.ndarray
    beta: np.ndarray            # intercept, slope on x1, slope on x2
    sigma2_y: float
    scenario: str
    miss_logit: MissLogit
    y_miss_prob: float = 0.0

    def __post_init__(self):
        mu = np.asarray(self.mu_x, dtype=float)
        sx = np.asarray(self.sigma_x, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if mu.shape != (2,) or sx.shape != (2, 2) or beta.shape != (3,):
            raise InputError("expect 2 predictors: mu_x (2,), sigma_x (2,2), beta (3,)")
        try:
            np.linalg.cholesky(sx)
        except np.linalg.LinAlgError:
            raise InputError("sigma_x must be positive definite") from None
        if not self.sigma2_y > 0:
            raise InputError(f"sigma2_y must be > 0, got {self.sigma2_y}")
        if self.scenario not in SCENARIOS:
            raise InputError(f"unknown scenario {self.scenario!r}")
        if not (0.0 <= self.y_miss_prob < 1.0):
            raise InputError(f"y_miss_prob must lie in [0,1), got {self.y_miss_prob}")
        active = _ACTIVE[self.scenario]
        slopes = (self.miss_logit.a_x1, self.miss_logit.a_x2, self.miss_logit.a_y)
        for on, slope, label in zip(active, slopes, ("a_x1", "a_x2", "a_y")):
            if not on and slope != 0.0:
                raise InputError(
                    f"scenario {self.scenario} forbids a nonzero {label}"
                )
        mu.setflags(write=False)
        sx.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "mu_x", mu)
        object.__setattr__(self, "sigma_x", sx)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def default(cls, scenario: str, alpha0: float = NO_MISSINGNESS,
                slope: float = 1.5, y_miss_prob: float = 0.0) -> "GenerativeSpec":
        """Standardised correlated predictors, unit-slope outcome model, and
        a hazard slope of ``slope`` on each scenario-active parent."""
        if scenario not in SCENARIOS:
            raise InputError(f"unknown scenario {scenario!r}")
        ax1, ax2, ay = (slope if on else 0.0 for on in _ACTIVE[scenario])
        return cls(
            mu_x=np.zeros(2),
            sigma_x=np.array([[1.0, 0.5], [0.5, 1.0]]),
            beta=np.array([0.0, 1.0, 1.0]),
            sigma2_y=1.0,
            scenario=scenario,
            miss_logit=MissLogit(alpha0=alpha0, a_x1=ax1, a_x2=ax2, a_y=ay),
            y_miss_prob=y_miss_prob,
        )

    def with_alpha0(self, alpha0: float) -> "GenerativeSpec":
        return replace(self, miss_logit=replace(self.miss_logit, alpha0=alpha0))

    def with_y_miss(self, y_miss_prob: float) -> "GenerativeSpec":
        return replace(self, y_miss_prob=y_miss_prob)

    # joint law of (x1, x2, y)
    def joint_mean(self) -> np.ndarray:
        b0, b1, b2 = self.beta
        return np.array([
            self.mu_x[0], self.mu_x[1],
            b0 + b1 * self.mu_x[0] + b2 * self.mu_x[1],
        ])

    def joint_cov(self) -> np.ndarray:
        b = self.beta[1:]
        sx = self.sigma_x
        cxy = sx @ b
        cyy = float(b @ sx @ b) + self.sigma2_y
        out = np.empty((3, 3))
        out[:2, :2] = sx
        out[:2, 2] = cxy
        out[2, :2] = cxy
        out[2, 2] = cyy
        return out

    def hazard_logit(self, x1, x2, y):
        ml = self.miss_logit
        return ml.alpha0 + ml.a_x1 * x1 + ml.a_x2 * x2 + ml.a_y * y

    def fingerprint(self) -> tuple:
        """Hashable identity of everything except the hazard intercept."""
        ml = self.miss_logit
        return (
            self.scenario, tuple(self.mu_x), tuple(map(tuple, self.sigma_x)),
            tuple(self.beta), self.sigma2_y, ml.a_x1, ml.a_x2, ml.a_y,
        )


def derive_rng(master_seed: int, *key) -> np.random.Generator:
    """Independent stream for a work unit, pure function of (seed, key)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def draw_complete(spec: GenerativeSpec, n: int, rng) -> np.ndarray:
    """n complete (x1, x2, y) rows; deterministic given the generator state."""
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(rng)
    chol = np.linalg.cholesky(spec.sigma_x)
    x = rng.standard_normal((n, 2)) @ chol.T + spec.mu_x
    eps = rng.standard_normal(n) * np.sqrt(spec.sigma2_y)
    y = spec.beta[0] + x @ spec.beta[1:] + eps
    return np.column_stack([x, y])


def apply_missingness(rows: np.ndarray, spec: GenerativeSpec, rng) -> MaskedDataset:
    """Mask the first predictor by the scenario hazard; x2 is always observed."""
    rows = np.asarray(rows, dtype=float)
    rng = np.random.default_rng(rng)
    n = rows.shape[0]
    if np.isneginf(spec.miss_logit.alpha0):
        m1 = np.zeros(n, dtype=bool)
    else:
        eta = spec.hazard_logit(rows[:, 0], rows[:, 1], rows[:, 2])
        m1 = rng.random(n) < expit(eta)
    mask_x = np.column_stack([m1, np.zeros(n, dtype=bool)])
    mask_y = (rng.random(n) < spec.y_miss_prob) if spec.y_miss_prob > 0 \
        else np.zeros(n, dtype=bool)
    return MaskedDataset(
        x=rows[:, :2], mask_x=mask_x, y=rows[:, 2], mask_y=mask_y,
        column_names=("x1", "x2"),
    )


_calibration_cache: dict[tuple, float] = {}


def calibrate_intercept(spec: GenerativeSpec, target_prop: float,
                        n_draws: int = CALIBRATION_DRAWS,
                        seed: int = CALIBRATION_SEED) -> float:
    """Hazard intercept giving the requested expected missingness proportion.

    Monte Carlo estimate of E[expit(alpha0 + s)] on a fixed calibration
    sample, solved for alpha0 by bisection on [-30, 30]. A target of 0
    returns the disabled-mechanism sentinel.
    """
    if not (0.0 <= target_prop <= 0.7):
        raise InputError(f"target proportion must lie in [0, 0.7], got {target_prop}")
    if target_prop == 0.0:
        return NO_MISSINGNESS
    key = (spec.fingerprint(), float(target_prop), n_draws, seed)
    if key in _calibration_cache:
        return _calibration_cache[key]
    rows = draw_complete(spec, n_draws, derive_rng(seed, 0))
    ml = spec.miss_logit
    s = ml.a_x1 * rows[:, 0] + ml.a_x2 * rows[:, 1] + ml.a_y * rows[:, 2]

    lo, hi = -30.0, 30.0
    f_lo = float(expit(lo + s).mean()) - target_prop
    f_hi = float(expit(hi + s).mean()) - target_prop
    if f_lo > 0 or f_hi < 0:
        raise NumericError(f"target {target_prop} outside attainable range")
    alpha0 = 0.0
    for _ in range(200):
        alpha0 = 0.5 * (lo + hi)
        f = float(expit(alpha0 + s).mean()) - target_prop
        if abs(f) <= 1e-6:
            break
        if f > 0:
            hi = alpha0
        else:
            lo = alpha0
    else:
        raise NumericError("intercept bisection did not converge in 200 iterations")
    _calibration_cache[key] = alpha0
    return alpha0


def make_pair(spec: GenerativeSpec, target_prop: float, n_train: int,
              n_test: int, seed: int):
    """Independent train/test datasets at a calibrated missingness level.

    The training set carries outcome missingness per ``spec.y_miss_prob``;
    the test set always retains its true outcomes (scoring needs them) while
    keeping its own predictor-missingness mask for deployment queries.
    """
    alpha0 = calibrate_intercept(spec, target_prop)
    spec = spec.with_alpha0(alpha0)
    ss = np.random.SeedSequence(seed)
    r_train_draw, r_train_miss, r_test_draw, r_test_miss = ss.spawn(4)
    train = apply_missingness(
        draw_complete(spec, n_train, np.random.default_rng(r_train_draw)),
        spec, np.random.default_rng(r_train_miss),
    )
    test_spec = spec.with_y_miss(0.0)
    test = apply_missingness(
        draw_complete(spec, n_test, np.random.default_rng(r_test_draw)),
        test_spec, np.random.default_rng(r_test_miss),
    )
    return train, test


# ---------------------------------------------------------------------------
# Discretisation for mechanism classification
# ---------------------------------------------------------------------------

def discretize_joint(spec: GenerativeSpec, n_bins: int = 4,
                     n_draws: int = 10**6, seed: int = 0) -> DiscreteJoint:
    """Empirical finite joint over quantile-binned (x1, x2, y) plus the
    missingness indicators, for feeding the mechanism classifier.

    Binning a continuous conditioning variable leaks a little dependence
    through within-bin variation, so classification of these joints needs a
    looser tolerance than exact tables; sampling noise at 1e6 draws adds
    ~1e-3 per conditional.
    """
    if n_bins < 2:
        raise InputError("need at least 2 bins")
    rng = derive_rng(seed, 1)
    rows = draw_complete(spec, n_draws, rng)
    ds = apply_missingness(rows, spec, rng)
    m1 = ds.mask_x[:, 0].astype(int)
    my = ds.mask_y.astype(int)

    codes = np.empty((n_draws, 3), dtype=int)
    for j in range(3):
        qs = np.quantile(rows[:, j], np.linspace(0, 1, n_bins + 1)[1:-1])
        codes[:, j] = np.searchsorted(qs, rows[:, j])

    shape = (n_bins, n_bins, n_bins, 2, 2, 2)
    flat = np.ravel_multi_index(
        (codes[:, 0], codes[:, 1], codes[:, 2], m1, np.zeros(n_draws, int), my),
        shape,
    )
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    probs = counts / counts.sum()
    probs /= probs.sum()  # guard the sum-to-one invariant against float drift
    variables = (
        Variable("x1", tuple(range(n_bins))),
        Variable("x2", tuple(range(n_bins))),
        Variable("y", tuple(range(n_bins))),
        Variable("m1", (0, 1)),
        Variable("m2", (0, 1)),
        Variable("my", (0, 1)),
    )
    return DiscreteJoint(
        variables, probs, predictors=("x1", "x2"), outcome="y",
        indicators={"x1": "m1", "x2": "m2", "y": "my"},
    )
