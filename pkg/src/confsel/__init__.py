"""Confounder selection by penalized joint likelihood, with doubly robust
treatment effect estimation.

The selector shares one covariate coefficient vector between a Gaussian
outcome model and a logistic treatment model, so a covariate associated
with either mechanism can be retained, and boosts the penalty on
covariates that barely predict the outcome.  The selected set feeds a
propensity-score-residual regression of the outcome, giving a doubly
robust effect estimate with thresholded-bootstrap uncertainty.
"""

__version__ = "0.1.0"

from .ate import AteEstimate, DrFit, dr_estimate, threshold_eta, thresholded_bootstrap
from .data import Dataset, Scaler, load_csv, standardize, unstandardize
from .estimators import ConfounderSelector, DoublyRobustATE, check_Xyd
from .exceptions import (
    ConfselError,
    DataError,
    DegenerateColumnError,
    DegenerateDofError,
    DivergenceError,
    InputError,
    NumericalError,
    RankDeficiencyError,
    SchemaError,
    SelectionError,
    StudyError,
    ValidationError,
)
from .glm import LinearFit, LogisticFit, logistic_irls, ols
from .likelihood import (
    JointObjective,
    ParamVector,
    nll,
    nll_grad,
    penalized_nll,
    profile_sigma2,
    sem_alpha_star,
    sem_generate,
    sem_score_mc,
)
from .penalties import (
    PenaltyFn,
    PenaltySpec,
    boosting_weights,
    check_penalty_conditions,
    lasso_penalty,
    make_penalty,
    nu_from_pilots,
    scad_penalty,
)
from .selector import (
    GcvPoint,
    OptimizerConfig,
    PenalizedFit,
    SelectionResult,
    effective_dof,
    fit_outcome_only,
    fit_penalized,
    fit_treatment_only,
    gcv,
    select,
)
from .simulate import (
    RepResult,
    Scenario,
    StudyResult,
    Term,
    builtin_scenarios,
    generate,
    no_shrinkage_experiment,
    run_study,
    selection_zero_rate,
)

__all__ = [
    "AteEstimate",
    "ConfounderSelector",
    "ConfselError",
    "DataError",
    "Dataset",
    "DegenerateColumnError",
    "DegenerateDofError",
    "DivergenceError",
    "DoublyRobustATE",
    "DrFit",
    "GcvPoint",
    "InputError",
    "JointObjective",
    "LinearFit",
    "LogisticFit",
    "NumericalError",
    "OptimizerConfig",
    "ParamVector",
    "PenalizedFit",
    "PenaltyFn",
    "PenaltySpec",
    "RankDeficiencyError",
    "RepResult",
    "Scaler",
    "Scenario",
    "SchemaError",
    "SelectionError",
    "SelectionResult",
    "StudyError",
    "StudyResult",
    "Term",
    "ValidationError",
    "boosting_weights",
    "builtin_scenarios",
    "check_Xyd",
    "check_penalty_conditions",
    "dr_estimate",
    "effective_dof",
    "fit_outcome_only",
    "fit_penalized",
    "fit_treatment_only",
    "gcv",
    "generate",
    "lasso_penalty",
    "load_csv",
    "logistic_irls",
    "make_penalty",
    "nll",
    "nll_grad",
    "no_shrinkage_experiment",
    "nu_from_pilots",
    "ols",
    "penalized_nll",
    "profile_sigma2",
    "run_study",
    "scad_penalty",
    "select",
    "selection_zero_rate",
    "sem_alpha_star",
    "sem_generate",
    "sem_score_mc",
    "standardize",
    "threshold_eta",
    "thresholded_bootstrap",
    "unstandardize",
]
