"""Penalty families, boosting weights and penalty-condition checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import ValidationError
from .glm import logistic_irls, ols

NU_FLOOR = 1e-4  # floor on |alpha_y| before inversion; caps nu at 1/NU_FLOOR


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with tuning parameter and per-coordinate weights."""

    family: str
    lam: float
    scad_a: float = 3.7
    nu: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in ("lasso", "scad"):
            raise ValidationError(f"unknown penalty family {self.family!r}")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.family == "scad" and not self.scad_a > 2:
            raise ValidationError("SCAD shape parameter must exceed 2")
        if self.nu is not None:
            nu = np.asarray(self.nu, dtype=float)
            if not np.isfinite(nu).all() or (nu < 0).any():
                raise ValidationError("weights must be finite and nonnegative")
            object.__setattr__(self, "nu", nu)


class PenaltyFn:
    """A symmetric penalty with value and derivative, vectorized over t.

    ``value`` is even with ``value(0) == 0`` and nondecreasing on t >= 0;
    ``deriv`` is the signed derivative, defined for t != 0.
    """

    def __init__(self, spec: PenaltySpec):
        self.spec = spec

    def value(self, t):
        raise NotImplementedError

    def deriv(self, t):
        """Signed derivative d/dt value(t); equals sign(t) * deriv_abs(|t|)."""
        t = np.asarray(t, dtype=float)
        return np.sign(t) * self.deriv_abs(np.abs(t))

    def deriv_abs(self, u):
        """Derivative of value on the positive half line, evaluated at u >= 0.

        At u == 0 this returns the right limit, which is what the
        optimizer's entry conditions need.
        """
        raise NotImplementedError


class LassoPenalty(PenaltyFn):
    def value(self, t):
        return self.spec.lam * np.abs(np.asarray(t, dtype=float))

    def deriv_abs(self, u):
        u = np.asarray(u, dtype=float)
        return np.full_like(u, self.spec.lam)


class ScadPenalty(PenaltyFn):
    """Smoothly clipped absolute deviation.

    Linear with slope lam up to lam, quadratically clipped on
    (lam, a*lam], constant (a+1)*lam^2/2 beyond a*lam, so large
    coefficients are not shrunk.
    """

    def value(self, t):
        lam, a = self.spec.lam, self.spec.scad_a
        u = np.abs(np.asarray(t, dtype=float))
        mid = (2 * a * lam * u - u**2 - lam**2) / (2 * (a - 1))
        out = np.where(
            u <= lam, lam * u, np.where(u <= a * lam, mid, (a + 1) * lam**2 / 2)
        )
        return out if out.ndim else float(out)

    def deriv_abs(self, u):
        lam, a = self.spec.lam, self.spec.scad_a
        u = np.asarray(u, dtype=float)
        if lam == 0:
            return np.zeros_like(u)
        clipped = np.maximum(a * lam - u, 0.0) / ((a - 1) * lam)
        out = lam * np.where(u <= lam, 1.0, clipped)
        return out if out.ndim else float(out)


def lasso_penalty(lam: float) -> PenaltyFn:
    return LassoPenalty(PenaltySpec("lasso", lam))


def scad_penalty(lam: float, a: float = 3.7) -> PenaltyFn:
    return ScadPenalty(PenaltySpec("scad", lam, scad_a=a))


def make_penalty(family: str, lam: float, scad_a: float = 3.7) -> PenaltyFn:
    if family == "lasso":
        return lasso_penalty(lam)
    if family == "scad":
        return scad_penalty(lam, scad_a)
    raise ValidationError(f"unknown penalty family {family!r}")


def default_pilot_ridge(n_rows: int, n_cols: int) -> float:
    """Ridge used by the joint pilot fits: 1e-3*n once the design stops
    being overdetermined, else 0."""
    return 1e-3 * n_rows if n_cols >= n_rows else 0.0


def nu_from_pilots(alpha_y: np.ndarray, alpha_d: np.ndarray) -> np.ndarray:
    """nu_j = 1/(|a_Y,j| (1 + |a_D,j|)) with |a_Y| floored at NU_FLOOR."""
    alpha_y = np.asarray(alpha_y, dtype=float)
    alpha_d = np.asarray(alpha_d, dtype=float)
    return 1.0 / (np.maximum(np.abs(alpha_y), NU_FLOOR) * (1.0 + np.abs(alpha_d)))


def _screen_size(n: int, r2: int) -> int:
    return int(min(max(10, n // 10), 40, r2, max(n // 3, 1)))


def pilot_outcome_coefs(ds: Dataset, k: int | None = None) -> np.ndarray:
    """Least-squares association of each covariate with the outcome.

    When the covariate count is small this is the X-block of the OLS fit
    of y on (intercept, treatment, covariates).  In high dimensions a full
    joint fit is noise; instead the dominant columns (by marginal
    correlation with the treatment-adjusted outcome) are fit jointly and
    every other coefficient is the partial least-squares coefficient of
    that column added to the screened model (Frisch-Waugh residual form).
    """
    n, r2 = ds.n, ds.r2
    k = _screen_size(n, r2) if k is None else min(k, r2)
    base = np.column_stack([np.ones(n), ds.d])
    if r2 + 2 < n and r2 <= k:
        design = np.column_stack([base, ds.x])
        return ols(design, ds.y, ridge=0.0).coef[2:]
    r0 = ds.y - base @ np.linalg.lstsq(base, ds.y, rcond=None)[0]
    margins = np.abs(ds.x.T @ r0)
    top = np.sort(np.argsort(margins)[::-1][:k])
    design_s = np.column_stack([base, ds.x[:, top]])
    q, _ = np.linalg.qr(design_s)
    fit_s = ols(design_s, ds.y, ridge=1e-8 * n)
    resid_s = fit_s.residuals
    x_t = ds.x - q @ (q.T @ ds.x)
    denom = np.maximum((x_t**2).sum(axis=0), 1e-12)
    alpha = (x_t.T @ resid_s) / denom
    alpha[top] = fit_s.coef[2:]
    return alpha


def pilot_treatment_coefs(ds: Dataset, k: int | None = None) -> np.ndarray:
    """Logistic association of each covariate with the treatment.

    Screened analogue of :func:`pilot_outcome_coefs`: a ridge logistic fit
    on the columns most correlated with the treatment, plus a one-step
    (score over profile information) coefficient for every other column.
    """
    n, r2 = ds.n, ds.r2
    k = _screen_size(n, r2) if k is None else min(k, r2)
    if r2 + 1 < n and r2 <= k:
        design = np.column_stack([np.ones(n), ds.x])
        return logistic_irls(design, ds.d, ridge=1e-6 * n).coef[1:]
    margins = np.abs(ds.x.T @ (ds.d - ds.d.mean()))
    top = np.sort(np.argsort(margins)[::-1][:k])
    design_t = np.column_stack([np.ones(n), ds.x[:, top]])
    fit_t = logistic_irls(design_t, ds.d, ridge=1e-6 * n)
    probs = fit_t.fitted_probs
    w = probs * (1.0 - probs)
    sw = np.sqrt(w)
    qb, _ = np.linalg.qr(design_t * sw[:, None])
    xw = ds.x * sw[:, None]
    u = xw - qb @ (qb.T @ xw)
    denom = np.maximum((u**2).sum(axis=0), 1e-12)
    alpha = (ds.x.T @ (ds.d - probs)) / denom
    alpha[top] = fit_t.coef[1:]
    return alpha


def boosting_weights(
    ds: Dataset,
    ridge_y: float | None = None,
    ridge_d: float | None = None,
    method: str = "screened",
    xxt: np.ndarray | None = None,
) -> np.ndarray:
    """Per-coordinate penalty weights nu_j = 1/(|a_Y,j| (1 + |a_D,j|)).

    ``a_Y`` measures each covariate's least-squares association with the
    outcome (net of the treatment), ``a_D`` its logistic association with
    the treatment.  Covariates that barely predict the outcome receive
    large weights, tempered by their treatment association; |a_Y| is
    floored at ``NU_FLOOR`` so the weights stay finite.

    ``method="screened"`` (default) uses the screened partial fits of
    :func:`pilot_outcome_coefs` / :func:`pilot_treatment_coefs`, which
    stay stable when r2 is comparable to or larger than n.  With
    ``method="ridge"`` the pilots are the plain joint ridge fits of y on
    (1, d, X) and d on (1, X) at ``ridge_y`` / ``ridge_d`` (defaulting to
    1e-3*n in the under-determined case); ``xxt`` may pass a precomputed
    Gram ``x @ x.T`` for those.
    """
    n, r2 = ds.n, ds.r2
    if method == "screened":
        alpha_y = pilot_outcome_coefs(ds)
        alpha_d = pilot_treatment_coefs(ds)
    elif method == "ridge":
        if ridge_y is None:
            ridge_y = default_pilot_ridge(n, r2 + 2)
        if ridge_d is None:
            ridge_d = default_pilot_ridge(n, r2 + 1)
        xxt_y = None if xxt is None else xxt + np.outer(ds.d, ds.d)
        design_y = np.column_stack([np.ones(n), ds.d, ds.x])
        alpha_y = ols(design_y, ds.y, ridge=ridge_y, xxt=xxt_y).coef[2:]
        design_d = np.column_stack([np.ones(n), ds.x])
        alpha_d = logistic_irls(design_d, ds.d, ridge=ridge_d, xxt=xxt).coef[1:]
    else:
        raise ValidationError(f"unknown pilot method {method!r}")
    return nu_from_pilots(alpha_y, alpha_d)


@dataclass
class PenaltyConditionReport:
    """Outcome of the penalty-condition checks on a grid.

    ``violations`` lists failed checks; an empty list means the penalty
    behaves as a sparsity penalty should.  Some checks are expected to
    fail for specific families (plain lasso fails the vanishing-derivative
    check; that is recorded, not raised).
    """

    family: str
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_markdown(self) -> str:
        lines = [f"# Penalty condition report: {self.family}", ""]
        for name, detail in self.checks.items():
            status = "FAIL" if name in self.violations else "ok"
            lines.append(f"- `{name}`: {status} ({detail})")
        return "\n".join(lines) + "\n"


def check_penalty_conditions(
    fn: PenaltyFn,
    grid: np.ndarray,
    n_sequence: tuple[int, ...] = (10**2, 10**4, 10**6, 10**8),
) -> PenaltyConditionReport:
    """Check the sparsity-penalty axioms on a grid, plus scaling surrogates.

    The grid must exclude 0.  Checks: value(0) = 0, evenness, monotonicity
    on |t|; that sqrt(n) * max derivative away from zero vanishes along
    lambda_n = c/sqrt(n) (holds for SCAD, recorded as a violation for plain
    lasso); and that pilot-scaled weights make the derivative blow up near
    zero (the sparsity mechanism).
    """
    grid = np.asarray(grid, dtype=float)
    if (grid == 0).any():
        raise ValidationError("grid must exclude 0")
    rep = PenaltyConditionReport(family=fn.spec.family)

    v0 = float(np.asarray(fn.value(0.0)))
    rep.checks["zero_at_origin"] = f"value(0) = {v0:.3e}"
    if v0 != 0.0:
        rep.violations.append("zero_at_origin")

    sym_gap = float(np.max(np.abs(fn.value(grid) - fn.value(-grid))))
    rep.checks["symmetry"] = f"max |value(t) - value(-t)| = {sym_gap:.3e}"
    if sym_gap > 1e-12:
        rep.violations.append("symmetry")

    pos = np.sort(np.abs(grid))
    diffs = np.diff(fn.value(pos))
    rep.checks["monotone"] = f"min increment = {diffs.min():.3e}"
    if (diffs < -1e-12).any():
        rep.violations.append("monotone")

    dvals = fn.deriv(grid)
    rep.checks["deriv_finite"] = f"max |deriv| = {np.abs(dvals).max():.3e}"
    if not np.isfinite(dvals).all():
        rep.violations.append("deriv_finite")

    lam = fn.spec.lam if fn.spec.lam > 0 else 1.0
    t0 = 0.25 * lam if fn.spec.family == "lasso" else 1.0
    seq = []
    for n in n_sequence:
        lam_n = lam / np.sqrt(n)
        fn_n = make_penalty(fn.spec.family, lam_n, getattr(fn.spec, "scad_a", 3.7))
        tgrid = np.linspace(t0, max(10 * lam, 10 * t0), 200)
        seq.append(np.sqrt(n) * float(np.max(fn_n.deriv_abs(tgrid))))
    rep.checks["vanishing_scaled_deriv"] = (
        "sqrt(n)*max deriv on |t|>=t0 along lambda_n=c/sqrt(n): "
        + ", ".join(f"{v:.3g}" for v in seq)
    )
    if seq[-1] > 1e-8:
        rep.violations.append("vanishing_scaled_deriv")

    blow = []
    for n in n_sequence:
        lam_n = lam / np.sqrt(n)
        fn_n = make_penalty(fn.spec.family, lam_n, getattr(fn.spec, "scad_a", 3.7))
        b_n = n ** (-0.25)
        tgrid = np.linspace(b_n * 1e-3, b_n, 200)
        # nu ~ sqrt(n) mimics 1/|pilot| for a coefficient shrinking at root-n rate
        blow.append(np.sqrt(n) * float(np.min(fn_n.deriv_abs(tgrid))))
    rep.checks["weighted_deriv_blowup_near_zero"] = (
        "nu_n * min deriv on (0, B_n): " + ", ".join(f"{v:.3g}" for v in blow)
    )
    if not (np.diff(blow) > 0).all() or blow[-1] < 1e3:
        rep.violations.append("weighted_deriv_blowup_near_zero")

    if fn.spec.family == "scad":
        a, l = fn.spec.scad_a, fn.spec.lam
        tail = float(np.max(np.abs(fn.deriv_abs(np.linspace(a * l, 10 * a * l + 1, 50)))))
        rep.checks["flat_tail"] = f"max deriv on t >= a*lambda = {tail:.3e}"

    return rep
