"""Doubly robust treatment effect estimation and thresholded bootstrap.

The effect is estimated by a propensity-score-residual regression: fit a
logistic propensity model on the selected covariates, replace the
treatment indicator by its residual ``s = d - pi_hat``, and regress the
outcome on (intercept, s, selected covariates).  Because the residual is
orthogonal to the propensity design at the logistic MLE, misspecifying
the outcome regression does not bias the effect coefficient, and vice
versa (double robustness).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special
from joblib import Parallel, delayed

from .data import Dataset
from .exceptions import DivergenceError, NumericalError, ValidationError
from .glm import logistic_irls, ols
from .likelihood import ParamVector
from .penalties import boosting_weights
from .selector import OptimizerConfig, SelectionResult, _LqaEngine, _State, select


@dataclass(frozen=True)
class DrFit:
    """Doubly robust fit: effect, nuisance coefficients and residuals."""

    theta: float
    gamma: np.ndarray
    s: np.ndarray
    pi_hat: np.ndarray
    selected: np.ndarray
    pi_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def predict_outcome(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Conditional mean ``theta * (d - pi(x)) + g(x)`` on new rows."""
        x_sel = np.asarray(x, dtype=float)[:, self.selected]
        d = np.asarray(d, dtype=float).ravel()
        design_pi = np.column_stack([np.ones(x_sel.shape[0]), x_sel])
        pi = scipy.special.expit(design_pi @ self.pi_coef)
        g = self.gamma[0] + x_sel @ self.gamma[1:]
        return self.theta * (d - pi) + g


@dataclass(frozen=True)
class AteEstimate:
    """Point estimate with thresholded-bootstrap uncertainty."""

    theta_hat: float
    sd_tb: float
    ci_lo: float
    ci_hi: float
    n_boot: int
    gamma_hat: np.ndarray
    selected: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    boot_thetas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_skipped: int = 0
    lambda_hat: float | None = None
    seed: int | None = None


def _drop_collinear(x_sel: np.ndarray, names) -> np.ndarray:
    """Indices of a maximal well-conditioned column subset (QR pivoting)."""
    if x_sel.shape[1] == 0:
        return np.zeros(0, dtype=int)
    _, r, piv = scipy.linalg.qr(x_sel, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(x_sel.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < x_sel.shape[1]:
        dropped = np.sort(piv[rank:])
        warnings.warn(
            "dropping collinear selected columns: "
            f"{[names[j] for j in dropped]}",
            RuntimeWarning,
        )
    return np.sort(piv[:rank])


def dr_estimate(ds: Dataset, selected, separation_ridge: float | None = None) -> DrFit:
    """Doubly robust effect estimate using the selected covariates.

    With an empty selection the propensity model is intercept-only and
    the estimate reduces to the difference in arm means.  By default a
    separated propensity fit propagates as :class:`DivergenceError`;
    setting ``separation_ridge`` retries with that ridge instead (used by
    the simulation harness, where comparator selections can be large
    enough to separate).
    """
    if not ds.both_arms():
        raise ValidationError("both treatment arms are required")
    selected = np.asarray(
        sorted(int(j) for j in np.asarray(selected, dtype=int)), dtype=int
    )
    x_sel = ds.x[:, selected]
    kept = _drop_collinear(x_sel, [ds.names[j] for j in selected])
    selected = selected[kept]
    x_sel = x_sel[:, kept]
    n = ds.n
    ones = np.ones(n)

    design_pi = np.column_stack([ones, x_sel])
    try:
        fit_pi = logistic_irls(design_pi, ds.d, ridge=0.0)
    except DivergenceError as err:
        if separation_ridge is None:
            raise DivergenceError(
                f"{err} (propensity fit on {len(selected)} selected covariates; "
                "a smaller selection or a ridge may help)"
            ) from err
        ridge = float(separation_ridge)
        while True:
            try:
                fit_pi = logistic_irls(design_pi, ds.d, ridge=ridge)
                break
            except DivergenceError:
                ridge *= 10.0
                if ridge > 1e-1 * n:
                    raise
    s = ds.d - fit_pi.fitted_probs

    design_out = np.column_stack([ones, s, x_sel])
    fit_out = ols(design_out, ds.y, ridge=0.0)
    gamma = np.concatenate(([fit_out.coef[0]], fit_out.coef[2:]))
    return DrFit(
        theta=float(fit_out.coef[1]),
        gamma=gamma,
        s=s,
        pi_hat=fit_pi.fitted_probs,
        selected=selected,
        pi_coef=fit_pi.coef,
    )


def threshold_eta(eta: ParamVector, n: int) -> ParamVector:
    """Zero every covariate coefficient with |alpha_j| <= 1/sqrt(n).

    The unpenalized block (intercepts, treatment coefficient) is left
    untouched.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    cut = 1.0 / np.sqrt(n)
    alpha = np.where(np.abs(eta.alpha) > cut, eta.alpha, 0.0)
    return eta.with_alpha(alpha)


def _bootstrap_indices(rng: np.random.Generator, d: np.ndarray, max_redraw: int):
    n = d.shape[0]
    for _ in range(max_redraw):
        idx = rng.integers(0, n, size=n)
        sub = d[idx]
        if sub.min() == 0.0 and sub.max() == 1.0:
            return idx
    return None


def _boot_replicate(
    b: int,
    seed: int,
    ds: Dataset,
    x_std: np.ndarray,
    lam_hat: float,
    family: str,
    scad_a: float,
    cfg: OptimizerConfig,
    init: _State,
    max_redraw: int,
    separation_ridge: float | None,
):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))
    idx = _bootstrap_indices(rng, ds.d, max_redraw)
    if idx is None:
        return None
    ds_b_std = Dataset(ds.y[idx], ds.d[idx], x_std[idx], ds.names)
    try:
        nu_b = boosting_weights(ds_b_std)
        engine = _LqaEngine(ds_b_std, "joint", family, scad_a, nu_b, cfg)
        st, _ = engine.fit(lam_hat, init=init, activate=False)
        eta_b = engine.to_param_vector(st)
        # Threshold against the larger of the penalized coefficient and its
        # unpenalized support-refit value: the penalized magnitude of a
        # borderline coordinate sits near the 1/sqrt(n) cut purely through
        # shrinkage, and flip-flopping across replicates would inflate the
        # bootstrap SD with selection noise the estimate does not have.
        sup = np.flatnonzero(eta_b.alpha)
        mags = np.abs(eta_b.alpha)
        if sup.size:
            design = np.column_stack(
                [np.ones(ds.n), ds_b_std.d, ds_b_std.x[:, sup]]
            )
            try:
                refit = ols(design, ds_b_std.y, ridge=0.0)
                mags[sup] = np.maximum(mags[sup], np.abs(refit.coef[2:]))
            except NumericalError:
                pass
        cut = 1.0 / np.sqrt(ds.n)
        alpha_thr = np.where(mags > cut, eta_b.alpha, 0.0)
        fit = dr_estimate(
            ds.subset(idx), np.flatnonzero(alpha_thr), separation_ridge
        )
    except (NumericalError, ValidationError):
        return None
    return float(fit.theta)


def thresholded_bootstrap(
    ds: Dataset,
    family: str = "scad",
    cfg: OptimizerConfig | None = None,
    b_boot: int = 200,
    seed: int = 0,
    scad_a: float = 3.7,
    workers: int = 1,
    selection: SelectionResult | None = None,
    max_redraw: int = 10,
    separation_ridge: float | None = None,
) -> AteEstimate:
    """Point estimate plus bootstrap SD with coefficient thresholding.

    The point estimate comes from the full-data pipeline (selection, then
    the doubly robust regression).  Each bootstrap replicate resamples
    rows, refits the penalized estimator at the full-data lambda (with
    freshly computed boosting weights), zeroes every coefficient at or
    below 1/sqrt(n), reselects and re-estimates the effect.  Replicates
    are independently seeded from (seed, replicate index), so results do
    not depend on the worker count; resamples with a single treatment arm
    are redrawn up to ``max_redraw`` times and then skipped with a count.
    """
    if b_boot < 2:
        raise ValidationError("at least 2 bootstrap replicates are required")
    cfg = cfg or OptimizerConfig()
    if selection is None:
        selection = select(ds, family=family, cfg=cfg, scad_a=scad_a)
    full_fit = dr_estimate(ds, selection.selected, separation_ridge)

    x_std = selection.scaler.transform(ds.x)
    eta_std = selection.eta_std
    init = _State(
        eta_std.beta0_y, eta_std.beta_d, eta_std.beta0_d, eta_std.alpha, eta_std.sigma2
    )

    args = (
        ds,
        x_std,
        selection.lambda_hat,
        family,
        scad_a,
        cfg,
        init,
        max_redraw,
        separation_ridge,
    )
    if workers > 1:
        thetas = Parallel(n_jobs=workers, batch_size="auto")(
            delayed(_boot_replicate)(b, seed, *args) for b in range(b_boot)
        )
    else:
        thetas = [_boot_replicate(b, seed, *args) for b in range(b_boot)]

    ok = np.array([t for t in thetas if t is not None], dtype=float)
    n_skipped = b_boot - ok.size
    if ok.size < 2:
        raise NumericalError(
            f"only {ok.size} usable bootstrap replicates out of {b_boot}"
        )
    sd_tb = float(ok.std(ddof=1))
    theta_hat = full_fit.theta
    return AteEstimate(
        theta_hat=theta_hat,
        sd_tb=sd_tb,
        ci_lo=theta_hat - 1.96 * sd_tb,
        ci_hi=theta_hat + 1.96 * sd_tb,
        n_boot=int(ok.size),
        gamma_hat=full_fit.gamma,
        selected=selection.selected,
        boot_thetas=ok,
        n_skipped=n_skipped,
        lambda_hat=selection.lambda_hat,
        seed=seed,
    )
