"""Scikit-learn style estimator facade.

``ConfounderSelector`` is a fit/transform feature selector driven by the
penalized joint likelihood; ``DoublyRobustATE`` runs the full two-step
pipeline (selection, then the propensity-residual regression with a
thresholded bootstrap).  Both follow the get_params/set_params protocol so
they compose with model-selection tooling, pipelines operating on the
covariate matrix, and ``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ate import dr_estimate, thresholded_bootstrap
from .data import Dataset
from .exceptions import ValidationError
from .selector import OptimizerConfig, select


def check_Xyd(X, y, d):
    """Validate a (covariates, outcome, treatment) triple.

    Returns float arrays; the treatment must be binary 0/1.
    """
    X = check_array(X, dtype=float, ensure_2d=True)
    y = np.asarray(y, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    if y.shape[0] != X.shape[0] or d.shape[0] != X.shape[0]:
        raise ValidationError(
            f"inconsistent lengths: X has {X.shape[0]} rows, "
            f"y has {y.shape[0]}, d has {d.shape[0]}"
        )
    if not np.isin(d, (0.0, 1.0)).all():
        raise ValidationError("treatment must be coded 0/1")
    return X, y, d


def _dataset_from_arrays(X, y, d, feature_names=None) -> Dataset:
    names = (
        tuple(str(c) for c in feature_names)
        if feature_names is not None
        else tuple(f"x{j+1}" for j in range(X.shape[1]))
    )
    return Dataset(y=y, d=d, x=X, names=names)


class ConfounderSelector(TransformerMixin, BaseEstimator):
    """Select covariates by penalizing the shared-coefficient joint
    likelihood of outcome and treatment.

    Parameters
    ----------
    penalty : {"scad", "lasso"}
    scad_a : float
        Shape of the SCAD penalty (> 2).
    cfg : OptimizerConfig, optional
        Optimizer and tuning-grid settings; defaults are sensible.

    Attributes
    ----------
    support_ : bool array of shape (n_features,)
    selected_ : int array of selected column indices
    coef_ : covariate coefficients on the original scale (exact zeros off
        the support)
    lambda_ : chosen tuning parameter
    gcv_path_ : list of (lambda, score, dof) points
    """

    def __init__(self, penalty: str = "scad", scad_a: float = 3.7,
                 cfg: OptimizerConfig | None = None):
        self.penalty = penalty
        self.scad_a = scad_a
        self.cfg = cfg

    def fit(self, X, y, d):
        X, y, d = check_Xyd(X, y, d)
        ds = _dataset_from_arrays(X, y, d)
        res = select(ds, family=self.penalty, cfg=self.cfg, scad_a=self.scad_a)
        self.n_features_in_ = X.shape[1]
        self.result_ = res
        self.selected_ = res.selected
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        self.support_[res.selected] = True
        self.coef_ = res.eta_hat.alpha
        self.treatment_coef_ = res.eta_hat.beta_d
        self.lambda_ = res.lambda_hat
        self.gcv_path_ = res.gcv_path
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        return self

    def get_support(self, indices: bool = False):
        check_is_fitted(self, "support_")
        return self.selected_ if indices else self.support_

    def transform(self, X):
        check_is_fitted(self, "support_")
        X = check_array(X, dtype=float, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"X has {X.shape[1]} features; fitted on {self.n_features_in_}"
            )
        return X[:, self.support_]


class DoublyRobustATE(BaseEstimator):
    """Average treatment effect by selection plus propensity-residual
    regression, with thresholded-bootstrap uncertainty.

    Attributes after ``fit``: ``ate_`` (point estimate), ``sd_``
    (bootstrap SD), ``ci_`` (95% normal interval), ``selector_`` (the
    fitted :class:`ConfounderSelector`), ``gamma_`` (outcome-model
    nuisance coefficients).
    """

    def __init__(
        self,
        penalty: str = "scad",
        scad_a: float = 3.7,
        cfg: OptimizerConfig | None = None,
        n_boot: int = 200,
        seed: int = 0,
        workers: int = 1,
    ):
        self.penalty = penalty
        self.scad_a = scad_a
        self.cfg = cfg
        self.n_boot = n_boot
        self.seed = seed
        self.workers = workers

    def fit(self, X, y, d):
        X, y, d = check_Xyd(X, y, d)
        ds = _dataset_from_arrays(X, y, d)
        selector = ConfounderSelector(
            penalty=self.penalty, scad_a=self.scad_a, cfg=self.cfg
        ).fit(X, y, d)
        est = thresholded_bootstrap(
            ds,
            family=self.penalty,
            cfg=self.cfg,
            b_boot=self.n_boot,
            seed=self.seed,
            scad_a=self.scad_a,
            workers=self.workers,
            selection=selector.result_,
        )
        self.selector_ = selector
        self.estimate_ = est
        self.dr_fit_ = dr_estimate(ds, selector.selected_)
        self.ate_ = est.theta_hat
        self.sd_ = est.sd_tb
        self.ci_ = (est.ci_lo, est.ci_hi)
        self.gamma_ = est.gamma_hat
        self.n_features_in_ = X.shape[1]
        return self

    def predict_outcome(self, X, d):
        """Fitted conditional mean ``theta * (d - pi(x)) + g(x)`` on new
        data, using the propensity and outcome models from ``fit``."""
        check_is_fitted(self, "ate_")
        X = check_array(X, dtype=float, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"X has {X.shape[1]} features; fitted on {self.n_features_in_}"
            )
        return self.dr_fit_.predict_outcome(X, d)

    def summary(self) -> dict:
        check_is_fitted(self, "ate_")
        return {
            "ate": self.ate_,
            "sd": self.sd_,
            "ci_95": list(self.ci_),
            "n_boot": self.estimate_.n_boot,
            "n_skipped": self.estimate_.n_skipped,
            "selected": self.selector_.selected_.tolist(),
            "lambda": self.selector_.lambda_,
            "seed": self.seed,
        }
