"""Prediction with missing predictors: mechanism checks, pattern-aware
training procedures, reference forecasters, simulation sweeps and an
application pipeline."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    BernoulliPrediction,
    Forecaster,
    GaussianPrediction,
    MaskedDataset,
    Pattern,
    enumerate_patterns,
    partition,
    read_csv,
    write_csv,
)
from .datagen import GenerativeSpec, calibrate_intercept, make_pair  # noqa: F401
from .mechanisms import (  # noqa: F401
    DiscreteJoint,
    MechanismReport,
    ccs_counterexample,
    check_ci,
    classify,
    verify_lattice,
)
from .oracle import OracleForecaster, conditional_gaussian, mc_predict, oracle_risk  # noqa: F401
from .procedures import (  # noqa: F401
    ProcedureConfig,
    load_forecaster,
    save_forecaster,
    train,
    train_cca,
    train_ccs,
    train_itr,
    train_mi,
    train_mimi,
    train_mle_marg,
    train_ps,
)
from .evaluation import bootstrap_ci, brier, loocv, mse, stratify  # noqa: F401
