"""Penalized optimization of the joint likelihood, GCV tuning and selection.

The optimizer is a local quadratic approximation (LQA) scheme: Newton steps
on the smooth likelihood part with the penalty replaced by the quadratic
``p'(|a_j|) / (|a_j| + delta) * a_j^2 / 2`` at the current iterate.  The
same diagonal matrix defines the effective degrees of freedom used by GCV,
so one mechanism serves both fitting and tuning.  Coordinates at zero are
kept out of the Newton system; a score (KKT) sweep each iteration re-admits
any zero coordinate whose gradient exceeds its penalty level, which is what
makes warm starts down the lambda grid work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .data import Dataset, Scaler, standardize
from .exceptions import (
    DegenerateDofError,
    DivergenceError,
    RankDeficiencyError,
    SelectionError,
    ValidationError,
)
from .glm import logistic_irls, ols
from .likelihood import SIGMA2_FLOOR, ParamVector
from .penalties import PenaltyFn, boosting_weights, make_penalty

MODES = ("joint", "outcome", "treatment")


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs of the LQA optimizer and the lambda grid.

    ``dof_cap_ratio`` bounds the effective-dof region in which GCV values
    are trusted for picking lambda: the (1 - dof/n)^-2 correction is only
    meaningful well away from interpolation, and in p >> n problems the
    raw criterion develops a spurious dip as dof approaches n.  Points
    beyond the cap stay on the recorded path but cannot win the argmin.

    ``dispersion`` controls the outcome-noise scale during optimization:
    "unit" fixes it at 1 (quasi-likelihood scaling), "profile" replaces it
    by the residual mean square after every step (the exact Gaussian
    update), and "auto" (default) profiles only the unpenalized fit.
    Profiling the penalized fit lets a strong outcome signal inflate the
    fitted noise and thereby mute the whole Gaussian likelihood part,
    which suppresses outcome-only predictors and flattens GCV, so the
    penalized path runs at unit dispersion by default.
    """

    max_iter: int = 200
    tol: float = 1e-6
    zero_eps: float = 1e-8
    lqa_delta: float = 1e-8
    lambda_grid: np.ndarray | None = None
    n_lambdas: int = 50
    lambda_min_ratio: float = 1e-4
    dof_cap_ratio: float = 0.1
    stall_eps: float = 0.005
    stall_window: int = 8
    champion_eps: float = 0.05
    dispersion: str = "auto"
    flood_jump: int = 3
    flood_min_support: int = 8

    def __post_init__(self):
        if self.tol <= 0 or self.zero_eps <= 0 or self.lqa_delta <= 0:
            raise ValidationError("tol, zero_eps and lqa_delta must be positive")
        if not 0 < self.dof_cap_ratio <= 1:
            raise ValidationError("dof_cap_ratio must be in (0, 1]")
        if self.stall_window < 1 or self.stall_eps < 0:
            raise ValidationError("stall_window must be >= 1 and stall_eps >= 0")
        if self.dispersion not in ("auto", "profile", "unit"):
            raise ValidationError("dispersion must be auto, profile or unit")
        if self.lambda_grid is not None:
            grid = np.sort(np.asarray(self.lambda_grid, dtype=float))[::-1]
            if grid.size == 0 or (grid < 0).any():
                raise ValidationError("lambda grid must be nonempty and nonnegative")
            object.__setattr__(self, "lambda_grid", grid)


@dataclass(frozen=True)
class PenalizedFit:
    """Result of one penalized fit at a fixed lambda."""

    eta: ParamVector
    objective: float
    converged: bool
    n_iter: int
    mode: str = "joint"


@dataclass(frozen=True)
class GcvPoint:
    lam: float
    gcv: float
    dof: float


@dataclass
class SelectionResult:
    """Fit at the GCV-chosen lambda plus the whole tuning path.

    ``eta_hat`` is on the original covariate scale; ``eta_std`` keeps the
    standardized-scale coefficients (the bootstrap thresholds those).
    """

    eta_hat: ParamVector
    selected: np.ndarray
    lambda_hat: float
    gcv_path: list[GcvPoint]
    converged: bool
    iterations: int
    mode: str = "joint"
    names: tuple[str, ...] = ()
    nu: np.ndarray | None = None
    scaler: Scaler | None = None
    eta_std: ParamVector | None = None

    @property
    def selected_names(self) -> tuple[str, ...]:
        return tuple(self.names[j] for j in self.selected)


class _State:
    """Mutable optimizer state: free intercept/treatment block, alpha, sigma2."""

    __slots__ = ("b0y", "bd", "b0d", "alpha", "s2")

    def __init__(self, b0y=0.0, bd=0.0, b0d=0.0, alpha=None, s2=1.0):
        self.b0y = float(b0y)
        self.bd = float(bd)
        self.b0d = float(b0d)
        self.alpha = np.zeros(0) if alpha is None else np.asarray(alpha, float).copy()
        self.s2 = float(s2)

    def copy(self) -> "_State":
        return _State(self.b0y, self.bd, self.b0d, self.alpha, self.s2)


class _LqaEngine:
    """Shared machinery for joint / outcome-only / treatment-only fits on
    one dataset.  Caches column statistics so warm-started path fits and
    bootstrap refits stay cheap."""

    def __init__(self, ds: Dataset, mode: str, family: str, scad_a: float,
                 nu: np.ndarray, cfg: OptimizerConfig):
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}")
        self.ds = ds
        self.mode = mode
        self.family = family
        self.scad_a = scad_a
        self.nu = np.asarray(nu, dtype=float)
        if self.nu.shape[0] != ds.r2:
            raise ValidationError("nu must have one weight per covariate")
        self.cfg = cfg
        self.has_gauss = mode in ("joint", "outcome")
        self.has_bern = mode in ("joint", "treatment")
        self.n = ds.n
        self.x_sumsq = (ds.x**2).sum(axis=0)
        self.n_beta = {"joint": 3, "outcome": 2, "treatment": 1}[mode]

    def _profiling(self, lam: float) -> bool:
        if not self.has_gauss:
            return False
        if self.cfg.dispersion == "profile":
            return True
        return self.cfg.dispersion == "auto" and lam == 0.0

    # -- model pieces -------------------------------------------------
    def _mu(self, st: _State, xa: np.ndarray) -> np.ndarray:
        return st.b0y + st.bd * self.ds.d + xa

    def _logit(self, st: _State, xa: np.ndarray) -> np.ndarray:
        return st.b0d + xa

    def objective(self, st: _State, pen: PenaltyFn) -> float:
        xa = self.ds.x @ st.alpha
        val = 0.0
        if self.has_gauss:
            r = self.ds.y - self._mu(st, xa)
            val += 0.5 * self.n * np.log(2 * np.pi * st.s2) + (r @ r) / (2 * st.s2)
        if self.has_bern:
            lo = self._logit(st, xa)
            val += float(np.logaddexp(0.0, lo).sum() - self.ds.d @ lo)
        val += self.n * float(self.nu @ pen.value(st.alpha))
        return float(val)

    def alpha_score(self, st: _State, resid, probs) -> np.ndarray:
        """Gradient of the unpenalized NLL with respect to alpha."""
        g = np.zeros(self.ds.r2)
        if self.has_gauss:
            g -= (self.ds.x.T @ resid) / st.s2
        if self.has_bern:
            g += self.ds.x.T @ (probs - self.ds.d)
        return g

    def initial_state(self, profile: bool = False) -> _State:
        st = _State(alpha=np.zeros(self.ds.r2))
        y, d, n = self.ds.y, self.ds.d, self.n
        if self.has_gauss:
            dbar = d.mean()
            vard = np.maximum(((d - dbar) ** 2).sum(), 1e-30)
            st.bd = float(((d - dbar) @ (y - y.mean())) / vard)
            st.b0y = float(y.mean() - st.bd * dbar)
            if profile:
                r = y - st.b0y - st.bd * d
                st.s2 = max(float(r @ r) / n, SIGMA2_FLOOR)
            else:
                st.s2 = 1.0
        if self.has_bern:
            dbar = float(np.clip(d.mean(), 1e-12, 1 - 1e-12))
            st.b0d = float(np.log(dbar / (1 - dbar)))
        return st

    def lambda_max(self) -> float:
        """Smallest lambda at which the all-zero alpha satisfies the entry
        conditions, so the path can start from an empty support."""
        st = self.initial_state(profile=self._profiling(1.0))
        xa = np.zeros(self.n)
        resid = self.ds.y - self._mu(st, xa) if self.has_gauss else None
        probs = scipy.special.expit(self._logit(st, xa)) if self.has_bern else None
        score = self.alpha_score(st, resid, probs)
        with np.errstate(divide="ignore"):
            vals = np.abs(score) / (self.n * np.maximum(self.nu, 1e-300))
        lam = float(np.max(vals))
        return lam if lam > 0 else 1e-8

    # -- fitting ------------------------------------------------------
    def fit(
        self,
        lam: float,
        init: _State | None = None,
        activate: bool = True,
    ) -> tuple[_State, dict]:
        """One penalized fit.  With ``activate=False`` zero coordinates stay
        zero (restricted refit on the warm start's support; used by the
        bootstrap, where score-sweep re-entries on resampled data are the
        main source of instability)."""
        cfg = self.cfg
        pen = make_penalty(self.family, lam, self.scad_a)
        profile = self._profiling(lam)
        st = init.copy() if init is not None else self.initial_state(profile)
        if self.has_gauss and not profile:
            st.s2 = 1.0
        elif profile and init is not None:
            self._profile_sigma2(st)
        if lam == 0.0 and self.ds.r2 + self.n_beta >= self.n:
            raise ValidationError(
                "unpenalized fit requires more rows than free parameters"
            )
        n, x, y, d = self.n, self.ds.x, self.ds.y, self.ds.d
        entry = n * self.nu * lam  # |score| level at which a zero enters
        obj = self.objective(st, pen)
        rel_change = np.inf
        converged = False
        n_iter = 0

        for it in range(1, cfg.max_iter + 1):
            n_iter = it
            xa = x @ st.alpha
            resid = y - self._mu(st, xa) if self.has_gauss else None
            probs = scipy.special.expit(self._logit(st, xa)) if self.has_bern else None
            g_alpha = self.alpha_score(st, resid, probs)

            zero = st.alpha == 0.0
            if activate:
                viol = zero & (np.abs(g_alpha) > entry * (1 + 1e-10) + 1e-14)
            else:
                viol = np.zeros(st.alpha.shape[0], dtype=bool)
            if rel_change < cfg.tol and not viol.any():
                converged = True
                n_iter = it - 1
                break

            if viol.any():
                obj = self._activate(st, pen, viol, g_alpha, entry, probs, obj)
                xa = x @ st.alpha
                resid = y - self._mu(st, xa) if self.has_gauss else None
                probs = (
                    scipy.special.expit(self._logit(st, xa)) if self.has_bern else None
                )

            new_obj = self._newton_step(st, pen, lam, resid, probs, obj)

            # absorb coordinates whose quadratic weight has exploded
            act = np.flatnonzero(st.alpha)
            if act.size:
                w_lqa = (
                    self.nu[act]
                    * pen.deriv_abs(np.abs(st.alpha[act]))
                    / (np.abs(st.alpha[act]) + cfg.lqa_delta)
                )
                kill = act[w_lqa > 1.0 / cfg.zero_eps]
                if kill.size:
                    st.alpha[kill] = 0.0
                    new_obj = None
            if profile:
                self._profile_sigma2(st)
                new_obj = None
            if new_obj is None:
                new_obj = self.objective(st, pen)
            rel_change = abs(new_obj - obj) / (abs(obj) + 1.0)
            obj = new_obj

        small = (st.alpha != 0) & (np.abs(st.alpha) < cfg.zero_eps)
        if small.any():
            st.alpha[small] = 0.0
        if profile:
            self._profile_sigma2(st)
        final_obj = self.objective(st, pen)
        return st, {"objective": final_obj, "converged": converged, "n_iter": n_iter}

    def _profile_sigma2(self, st: _State) -> None:
        r = self.ds.y - self._mu(st, self.ds.x @ st.alpha)
        st.s2 = max(float(r @ r) / self.n, SIGMA2_FLOOR)

    def _activate(self, st, pen, viol, g_alpha, entry, probs, obj):
        """Admit KKT-violating zero coordinates with a one-dimensional
        soft-threshold step, guarded by the true objective."""
        idx = np.flatnonzero(viol)
        h = np.zeros(idx.size)
        if self.has_gauss:
            h += self.x_sumsq[idx] / st.s2
        if self.has_bern:
            w = probs * (1 - probs)
            h += (self.ds.x[:, idx] ** 2 * w[:, None]).sum(axis=0)
        h = np.maximum(h, 1e-12)
        seed = -np.sign(g_alpha[idx]) * (np.abs(g_alpha[idx]) - entry[idx]) / h
        for _ in range(31):
            st.alpha[idx] = seed
            cand = self.objective(st, pen)
            if cand <= obj + 1e-12 * (1 + abs(obj)):
                return cand
            seed *= 0.5
        st.alpha[idx] = 0.0
        return obj

    def _newton_step(self, st, pen, lam, resid, probs, obj):
        cfg = self.cfg
        n, x, d = self.n, self.ds.x, self.ds.d
        act = np.flatnonzero(st.alpha)
        nb = self.n_beta
        k = nb + act.size
        h = np.zeros((k, k))
        g = np.full(k, 0.0)
        xa_cols = x[:, act]

        if self.has_gauss:
            dg = np.column_stack([np.ones(n), d, xa_cols])
            gg = dg.T @ dg / st.s2
            sl = np.concatenate(([0, 1], nb + np.arange(act.size))).astype(int)
            h[np.ix_(sl, sl)] += gg
            gv = -(dg.T @ resid) / st.s2
            g[sl] += gv
        if self.has_bern:
            w = probs * (1 - probs)
            db = np.column_stack([np.ones(n), xa_cols])
            gb = (db * w[:, None]).T @ db
            pos_b = 2 if self.mode == "joint" else 0
            sl = np.concatenate(([pos_b], nb + np.arange(act.size))).astype(int)
            h[np.ix_(sl, sl)] += gb
            gv = db.T @ (probs - d)
            g[sl] += gv

        if act.size:
            w_lqa = (
                self.nu[act]
                * pen.deriv_abs(np.abs(st.alpha[act]))
                / (np.abs(st.alpha[act]) + cfg.lqa_delta)
            )
            ar = nb + np.arange(act.size)
            h[ar, ar] += n * w_lqa
            g[ar] += n * w_lqa * st.alpha[act]

        h[np.diag_indices_from(h)] += 1e-10 * max(1.0, float(np.abs(np.diag(h)).max()))
        try:
            delta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(h), -g)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(h, -g, rcond=None)[0]

        base = (st.b0y, st.bd, st.b0d, st.alpha[act].copy())
        scale = 1.0
        for _ in range(31):
            self._apply_step(st, act, base, delta, scale)
            cand = self.objective(st, pen)
            if cand <= obj + 1e-12 * (1 + abs(obj)):
                return cand
            scale *= 0.5
        # restore and give up on this direction
        self._apply_step(st, act, base, delta, 0.0)
        cand = self.objective(st, pen)
        if cand <= obj + 1e-9 * (1 + abs(obj)):
            return cand
        raise DivergenceError("penalized Newton step failed after 30 halvings")

    def _apply_step(self, st, act, base, delta, scale):
        b0y, bd, b0d, alpha_act = base
        if self.mode == "joint":
            st.b0y = b0y + scale * delta[0]
            st.bd = bd + scale * delta[1]
            st.b0d = b0d + scale * delta[2]
        elif self.mode == "outcome":
            st.b0y = b0y + scale * delta[0]
            st.bd = bd + scale * delta[1]
        else:
            st.b0d = b0d + scale * delta[0]
        st.alpha[act] = alpha_act + scale * delta[self.n_beta :]

    def to_param_vector(self, st: _State) -> ParamVector:
        st2 = st.copy()
        if not self.has_gauss:
            # fill unused outcome block with intercept-only values
            ybar = self.ds.y.mean()
            st2.b0y, st2.bd = float(ybar), 0.0
            r = self.ds.y - ybar
            st2.s2 = max(float(r @ r) / self.n, SIGMA2_FLOOR)
        else:
            # always report the residual variance at the returned fit,
            # whether or not the optimizer ran at unit dispersion
            self._profile_sigma2(st2)
        if not self.has_bern:
            p = float(np.clip(self.ds.d.mean(), 1e-12, 1 - 1e-12))
            st2.b0d = float(np.log(p / (1 - p)))
        return ParamVector(st2.b0y, st2.bd, st2.b0d, st2.alpha.copy(), st2.s2)


def fit_penalized(
    ds: Dataset,
    family: str = "scad",
    lam: float = 0.0,
    nu: np.ndarray | None = None,
    cfg: OptimizerConfig | None = None,
    scad_a: float = 3.7,
    init: ParamVector | None = None,
    mode: str = "joint",
) -> PenalizedFit:
    """Minimize the penalized objective at a fixed lambda.

    Operates on the dataset as given (no internal standardization; see
    :func:`select` for the full pipeline).  Returns the fit with an honest
    ``converged`` flag; non-convergence at ``max_iter`` is not an error.
    """
    cfg = cfg or OptimizerConfig()
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    nu = np.ones(ds.r2) if nu is None else np.asarray(nu, dtype=float)
    engine = _LqaEngine(ds, mode, family, scad_a, nu, cfg)
    st0 = None
    if init is not None:
        st0 = _State(init.beta0_y, init.beta_d, init.beta0_d, init.alpha, init.sigma2)
    st, info = engine.fit(lam, init=st0)
    return PenalizedFit(
        eta=engine.to_param_vector(st),
        objective=info["objective"],
        converged=info["converged"],
        n_iter=info["n_iter"],
        mode=mode,
    )


# ---------------------------------------------------------------------------
# Effective degrees of freedom and GCV
# ---------------------------------------------------------------------------


def _trace_inv_spd(m: np.ndarray) -> float:
    try:
        c, low = scipy.linalg.cho_factor(m, lower=True)
        inv, info = scipy.linalg.lapack.dpotri(c, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError
        return float(np.trace(inv))
    except np.linalg.LinAlgError:
        return float(np.trace(np.linalg.inv(m)))


def effective_dof(x: np.ndarray, dvec: np.ndarray) -> float:
    """trace of ``X (X'X + diag(dvec))^{-1} X'`` computed exactly.

    Entries of ``dvec`` may be zero (unpenalized coordinates, e.g. the flat
    tail of SCAD) or enormous (coordinates at exactly zero); both are
    handled without forming ill-conditioned inverses.  When there are more
    columns than rows the computation moves to observation space via
    ``tr[(I + X D^{-1} X')^{-1}]`` after projecting out the unpenalized
    columns.
    """
    x = np.asarray(x, dtype=float)
    dvec = np.asarray(dvec, dtype=float)
    n, p = x.shape
    free = dvec <= 0.0
    if free.all():
        return float(np.linalg.matrix_rank(x))
    if p <= n:
        m = x.T @ x + np.diag(dvec)
        try:
            sol = scipy.linalg.cho_solve(scipy.linalg.cho_factor(m), x.T @ x)
        except np.linalg.LinAlgError:
            sol = np.linalg.solve(m, x.T @ x)
        return float(np.trace(sol))
    n_free = int(free.sum())
    if n_free:
        q, r = np.linalg.qr(x[:, free])
        rd = np.abs(np.diag(r))
        if rd.min() <= 1e-10 * max(rd.max(), 1.0):
            raise DegenerateDofError("unpenalized columns are collinear")
        xp = x[:, ~free] - q @ (q.T @ x[:, ~free])
    else:
        xp = x[:, ~free]
    u = xp / np.sqrt(dvec[~free])
    qt = u @ u.T
    qt[np.diag_indices_from(qt)] += 1.0
    return float(n_free + n - _trace_inv_spd(qt))


def gcv(
    ds: Dataset,
    eta: ParamVector,
    penalty: PenaltyFn,
    nu: np.ndarray,
    cfg: OptimizerConfig | None = None,
    mode: str = "joint",
) -> GcvPoint:
    """Generalized cross-validation score of a fitted parameter vector.

    The numerator is the outcome residual sum of squares over n (model
    fit with design (intercept, treatment, covariates)); for
    treatment-only fits it is the deviance over n.  The effective number
    of parameters runs over the covariate block only, through the same
    quadratic-approximation matrix the optimizer uses.
    """
    cfg = cfg or OptimizerConfig()
    n = ds.n
    nu = np.asarray(nu, dtype=float)
    w_pen = nu * penalty.deriv_abs(np.abs(eta.alpha)) / (
        np.abs(eta.alpha) + cfg.lqa_delta
    )
    if mode in ("joint", "outcome"):
        resid = ds.y - (eta.beta0_y + eta.beta_d * ds.d + ds.x @ eta.alpha)
        numer = float(resid @ resid) / n
        x_eff = ds.x
    elif mode == "treatment":
        lo = eta.beta0_d + ds.x @ eta.alpha
        dev = 2.0 * float(np.logaddexp(0.0, lo).sum() - ds.d @ lo)
        numer = dev / n
        w_irls = scipy.special.expit(lo)
        w_irls = w_irls * (1 - w_irls)
        x_eff = ds.x * np.sqrt(w_irls)[:, None]
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    dof = effective_dof(x_eff, n * w_pen)
    denom = 1.0 - dof / n
    if denom <= 1e-8:
        raise DegenerateDofError(
            f"effective dof {dof:.2f} reaches the sample size {n}; lambda too small"
        )
    return GcvPoint(lam=penalty.spec.lam, gcv=numer / denom**2, dof=dof)


# ---------------------------------------------------------------------------
# Path selection
# ---------------------------------------------------------------------------


def _rescale_eta(eta: ParamVector, scaler: Scaler | None) -> ParamVector:
    if scaler is None:
        return eta
    alpha = eta.alpha / scaler.sd
    shift = float((eta.alpha * scaler.mean / scaler.sd).sum())
    return ParamVector(
        beta0_y=eta.beta0_y - shift,
        beta_d=eta.beta_d,
        beta0_d=eta.beta0_d - shift,
        alpha=alpha,
        sigma2=eta.sigma2,
    )


def default_lambda_grid(lam_max: float, cfg: OptimizerConfig) -> np.ndarray:
    return np.geomspace(lam_max, lam_max * cfg.lambda_min_ratio, cfg.n_lambdas)


def _refit_gcv(
    ds: Dataset,
    support: np.ndarray,
    penalty: PenaltyFn,
    nu: np.ndarray,
    cfg: OptimizerConfig,
    mode: str,
) -> GcvPoint:
    """GCV of the unpenalized refit on a candidate support.

    Ranking supports by the criterion at the shrunken path estimate lets
    marginally-shrunk noise coordinates lower the numerator at almost no
    effective-dof price, which drags the argmin into overselection once
    p is large.  Evaluating the same formula at the least-squares refit on
    the support (the estimate the downstream effect stage actually uses)
    restores the fit/complexity tradeoff.

    For the joint mode the numerator is the joint deviance (outcome
    residual sum of squares at unit dispersion plus twice the treatment
    negative log-likelihood) and the effective dof adds both model
    blocks.  A weak confounder then registers through whichever model it
    predicts, which is the point of the shared parametrization; a
    criterion built on the outcome alone cannot see a confounder that
    barely moves the outcome fit.
    """
    n = ds.n
    x_a = ds.x[:, support]
    gauss = bern = None
    if mode in ("joint", "outcome"):
        design = np.column_stack([np.ones(n), ds.d, x_a])
        try:
            gauss = ols(design, ds.y, ridge=0.0)
        except (RankDeficiencyError, np.linalg.LinAlgError):
            gauss = ols(design, ds.y, ridge=1e-8 * n)
    if mode in ("joint", "treatment"):
        design = np.column_stack([np.ones(n), x_a])
        try:
            bern = logistic_irls(design, ds.d, ridge=0.0)
        except DivergenceError:
            bern = logistic_irls(design, ds.d, ridge=1e-4 * n)

    numer = 0.0
    dof = 0.0
    lam = penalty.spec.lam
    if gauss is not None:
        numer += gauss.rss / n
        alpha = np.zeros(ds.r2)
        alpha[support] = gauss.coef[2:]
        w_pen = nu * penalty.deriv_abs(np.abs(alpha)) / (np.abs(alpha) + cfg.lqa_delta)
        dof += effective_dof(ds.x, n * w_pen)
    if bern is not None:
        numer += -2.0 * bern.loglik / n
        alpha = np.zeros(ds.r2)
        alpha[support] = bern.coef[1:]
        w_pen = nu * penalty.deriv_abs(np.abs(alpha)) / (np.abs(alpha) + cfg.lqa_delta)
        w_irls = bern.fitted_probs * (1.0 - bern.fitted_probs)
        x_eff = ds.x * np.sqrt(w_irls)[:, None]
        dof += effective_dof(x_eff, n * w_pen)
    denom = 1.0 - dof / n
    if denom <= 1e-8:
        raise DegenerateDofError(
            f"effective dof {dof:.2f} reaches the sample size {n}"
        )
    return GcvPoint(lam=lam, gcv=numer / denom**2, dof=dof)


def _select_std(
    ds_std: Dataset,
    family: str,
    cfg: OptimizerConfig,
    scad_a: float,
    nu: np.ndarray,
    mode: str,
) -> tuple[_State, dict, list[GcvPoint], float, _LqaEngine]:
    """Warm-started lambda path with GCV scoring, on standardized data.

    Each visited lambda is scored by :func:`_refit_gcv` on the support of
    the penalized fit.  The joint path is scanned deep, because the
    boosting weights spread entry points over several decades of lambda;
    scanning stops at a support flood (``flood_jump`` or more coordinates
    entering in one step beyond ``flood_min_support`` actives, the noise
    edge), at the trusted-dof cap, or at the end of the grid, and the
    chosen lambda is the last qualified champion: a point only takes the
    lead by beating the incumbent by a relative ``champion_eps``.  The
    margin is what keeps the handful of best-of-p noise coordinates, whose
    refit always buys a little fit, from dragging the choice into the
    noise edge.  The unweighted comparator paths use conventional argmin
    tuning and additionally stop once ``stall_window`` consecutive points
    fail to improve the best score by ``stall_eps``.
    """
    engine = _LqaEngine(ds_std, mode, family, scad_a, nu, cfg)
    grid = cfg.lambda_grid
    if grid is None:
        grid = default_lambda_grid(engine.lambda_max(), cfg)
    dof_cap = cfg.dof_cap_ratio * ds_std.n
    joint = mode == "joint"
    window = len(grid) + 1 if joint else cfg.stall_window
    margin = cfg.champion_eps if joint else 0.0
    path: list[GcvPoint] = []
    fits: list[tuple[_State, dict]] = []
    usable: list[int] = []
    state = None
    n_over = 0
    best = np.inf
    champion = np.inf
    champion_idx = None
    stall = 0
    prev_support = 0
    for lam in grid:
        st, info = engine.fit(float(lam), init=state)
        state = st
        support = np.flatnonzero(st.alpha)
        pen = make_penalty(family, float(lam), scad_a)
        try:
            point = _refit_gcv(ds_std, support, pen, nu, cfg, mode)
            over_cap = point.dof > dof_cap
        except (DegenerateDofError, np.linalg.LinAlgError):
            point = GcvPoint(lam=float(lam), gcv=np.inf, dof=np.nan)
            over_cap = True
        flood = (
            support.size >= cfg.flood_min_support
            and support.size - prev_support >= cfg.flood_jump
        )
        prev_support = support.size
        path.append(point)
        fits.append((st.copy(), info))
        if flood:
            break
        if over_cap:
            n_over += 1
            stall += 1
            if n_over >= 2 or stall >= window:
                break
            continue
        n_over = 0
        usable.append(len(path) - 1)
        if point.gcv < champion * (1.0 - margin):
            champion = point.gcv
            champion_idx = len(path) - 1
        if point.gcv < best * (1.0 - cfg.stall_eps):
            best = point.gcv
            stall = 0
        else:
            stall += 1
            if stall >= window:
                break
    if not usable:
        raise SelectionError(
            "no usable lambda on the grid (all degenerate or past the dof cap); "
            "widen the grid upward"
        )
    if joint and champion_idx is not None:
        i_hat = champion_idx
    else:
        i_hat = min(usable, key=lambda i: (path[i].gcv, i))
    st_hat, info_hat = fits[i_hat]
    return st_hat, info_hat, path, float(grid[i_hat]), engine


def select(
    ds: Dataset,
    family: str = "scad",
    cfg: OptimizerConfig | None = None,
    scad_a: float = 3.7,
    nu: np.ndarray | None = None,
    mode: str = "joint",
) -> SelectionResult:
    """Standardize, compute boosting weights, fit the lambda path and pick
    the GCV minimizer.

    Reported coefficients are mapped back to the original covariate scale;
    the selected set is exactly the nonzero coefficients at the chosen
    lambda.
    """
    cfg = cfg or OptimizerConfig()
    ds_std, scaler = standardize(ds)
    if nu is None:
        nu = boosting_weights(ds_std) if mode == "joint" else np.ones(ds.r2)
    st, info, path, lam_hat, engine = _select_std(
        ds_std, family, cfg, scad_a, nu, mode
    )
    eta_std = engine.to_param_vector(st)
    return SelectionResult(
        eta_hat=_rescale_eta(eta_std, scaler),
        selected=eta_std.support,
        lambda_hat=lam_hat,
        gcv_path=path,
        converged=info["converged"],
        iterations=info["n_iter"],
        mode=mode,
        names=ds.names,
        nu=nu,
        scaler=scaler,
        eta_std=eta_std,
    )


def fit_outcome_only(
    ds: Dataset,
    family: str = "scad",
    cfg: OptimizerConfig | None = None,
    scad_a: float = 3.7,
) -> SelectionResult:
    """Comparator that penalizes the outcome model only (treatment
    unpenalized, plain penalty weights)."""
    return select(ds, family, cfg, scad_a, nu=np.ones(ds.r2), mode="outcome")


def fit_treatment_only(
    ds: Dataset,
    family: str = "scad",
    cfg: OptimizerConfig | None = None,
    scad_a: float = 3.7,
) -> SelectionResult:
    """Comparator that penalizes the propensity model only, tuned by the
    deviance analogue of GCV."""
    return select(ds, family, cfg, scad_a, nu=np.ones(ds.r2), mode="treatment")
