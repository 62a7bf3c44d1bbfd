"""Bundled synthetic analogue of an emergency-department triage dataset.

678 rows, binary severity outcome with exactly 147 positives (21.7%), four
predictors (age always observed; three binary clinical signs that can go
missing) and exactly eight observation patterns with fixed counts. Rows
with a severe outcome are more likely to land in the incomplete patterns,
so the observation pattern carries real signal. Values are synthetic and
deterministic given the seed; only the marginal shape mimics the kind of
data the pipeline is meant to ingest.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import MaskedDataset

APP_SEED = 20260318
N_ROWS = 678
N_CASES = 147

COLUMNS = ("age", "ams", "hypox", "coag")

# (age, ams, hypox, coag) bits; 0 = observed, 1 = missing
PATTERN_COUNTS = (
    ((0, 0, 0, 0), 424),
    ((0, 0, 1, 0), 93),
    ((0, 0, 0, 1), 78),
    ((0, 1, 0, 0), 45),
    ((0, 0, 1, 1), 15),
    ((0, 1, 1, 0), 11),
    ((0, 1, 0, 1), 10),
    ((0, 1, 1, 1), 2),
)


def trauma_analogue(seed: int = APP_SEED) -> MaskedDataset:
    assert sum(c for _, c in PATTERN_COUNTS) == N_ROWS
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(678,)))
    n = N_ROWS

    age = np.exp(rng.normal(np.log(39.0), 0.42, size=n))
    age = np.clip(np.round(age), 18, 92)
    z_age = (age - age.mean()) / age.std()

    ams = (rng.random(n) < expit(-2.45 + 0.35 * z_age)).astype(float)
    hypox = (rng.random(n) < expit(-2.70 + 0.15 * z_age)).astype(float)
    coag = (rng.random(n) < expit(-2.60 + 0.55 * z_age)).astype(float)

    score = -1.75 + 0.45 * z_age + 1.10 * ams + 0.40 * hypox + 0.90 * coag
    # exact-count outcome draw: keep the N_CASES rows most above their uniform
    u = rng.random(n)
    order = np.argsort(expit(score) - u)[::-1]
    y = np.zeros(n)
    y[order[:N_CASES]] = 1.0

    # informative pattern allocation: severe rows attract the incomplete
    # patterns (most strongly those hiding the clinical signs)
    mask = np.zeros((n, 4), dtype=bool)
    remaining = np.arange(n)
    for bits, count in sorted(PATTERN_COUNTS, key=lambda t: -sum(t[0])):
        if sum(bits) == 0:
            continue
        w = np.exp(0.9 * y[remaining] + 0.25 * ams[remaining] * bits[1]
                   + 0.25 * hypox[remaining] * bits[2])
        w /= w.sum()
        take = rng.choice(remaining.size, size=count, replace=False, p=w)
        rows = remaining[take]
        mask[rows] = np.array(bits, dtype=bool)
        remaining = np.delete(remaining, take)

    x = np.column_stack([age, ams, hypox, coag])
    x[mask] = np.nan
    return MaskedDataset(
        x=x, mask_x=mask, y=y, mask_y=np.zeros(n, dtype=bool),
        column_names=COLUMNS,
    )
