"""Gaussian and logistic regression solvers.

These back the boosting-weight pilot fits, the propensity model, the
outcome regression of the doubly robust stage, and the comparator
selectors.  Ridge versions switch to an observation-space (Woodbury)
solve when there are more penalized columns than rows, which keeps the
pilot fits cheap inside the bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .exceptions import DivergenceError, RankDeficiencyError, ValidationError

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class LinearFit:
    """Least squares / ridge result with residual diagnostics."""

    coef: np.ndarray
    residuals: np.ndarray
    rss: float


@dataclass(frozen=True)
class LogisticFit:
    """Logistic regression result; ``converged`` reflects the actual stop reason."""

    coef: np.ndarray
    fitted_probs: np.ndarray
    loglik: float
    converged: bool
    n_iter: int = 0


def _penalty_mask(p: int, intercept_col: int | None) -> np.ndarray:
    mask = np.ones(p, dtype=bool)
    if intercept_col is not None:
        mask[intercept_col] = False
    return mask


def ols(
    design: np.ndarray,
    y: np.ndarray,
    ridge: float = 0.0,
    intercept_col: int | None = 0,
    xxt: np.ndarray | None = None,
) -> LinearFit:
    """Least squares with an optional ridge penalty on non-intercept columns.

    Minimizes ``||y - A b||^2 + ridge * ||b[penalized]||^2`` where the
    column ``intercept_col`` (if any) is never penalized.  ``xxt`` may pass
    the precomputed Gram of the penalized block (rows x rows), used by the
    observation-space solve when there are more columns than rows.

    Raises
    ------
    RankDeficiencyError
        If ``ridge == 0`` and the normal equations are singular (including
        the under-determined case ``columns >= rows``).
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if a.shape[0] != y.shape[0]:
        raise ValidationError("design and y have different numbers of rows")
    n, p = a.shape
    if ridge < 0:
        raise ValidationError("ridge must be nonnegative")
    if ridge == 0.0:
        if p >= n + 1 or np.linalg.matrix_rank(a) < p:
            raise RankDeficiencyError(
                f"singular normal equations (n={n}, p={p}); supply ridge > 0"
            )
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    else:
        coef = _ridge_solve(a, y, ridge, _penalty_mask(p, intercept_col), xxt)
    resid = y - a @ coef
    return LinearFit(coef=coef, residuals=resid, rss=float(resid @ resid))


def _ridge_solve(a, y, ridge, pen_mask, xxt=None):
    """Solve the penalized normal equations, observation-space when p > n."""
    n, p = a.shape
    n_unpen = int((~pen_mask).sum())
    if p <= n or n_unpen > 1:
        m = a.T @ a
        m[pen_mask, pen_mask] += ridge
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(m), a.T @ y)
        except np.linalg.LinAlgError:
            return np.linalg.solve(m, a.T @ y)
    # p > n with at most one unpenalized (intercept) column: center it out,
    # then b = Xc'(Xc Xc' + r I)^{-1} yc needs only an n x n factorization.
    if n_unpen == 1:
        icol = int(np.flatnonzero(~pen_mask)[0])
        ones = a[:, icol]
        if not np.allclose(ones, ones[0]) or ones[0] == 0:
            m = a.T @ a
            m[pen_mask, pen_mask] += ridge
            return np.linalg.solve(m, a.T @ y)
        xp = a[:, pen_mask]
        mu = xp.mean(axis=0)
        yc = y - y.mean()
        if xxt is None:
            xxt = xp @ xp.T
        c = xp @ mu
        k = xxt - c[:, None] - c[None, :] + (mu @ mu) + ridge * np.eye(n)
        u = _spd_solve(k, yc)
        b = xp.T @ u - mu * u.sum()
        coef = np.empty(p)
        coef[pen_mask] = b
        coef[icol] = (y.mean() - mu @ b) / ones[0]
        return coef
    if xxt is None:
        xxt = a @ a.T
    u = _spd_solve(xxt + ridge * np.eye(n), y)
    return a.T @ u


def _spd_solve(m, v):
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(m), v)
    except np.linalg.LinAlgError:
        return np.linalg.solve(m, v)


def bernoulli_loglik(d: np.ndarray, probs: np.ndarray) -> float:
    """Log-likelihood with probabilities clamped away from {0, 1}."""
    pc = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(d @ np.log(pc) + (1.0 - d) @ np.log1p(-pc))


def sigmoid(eta: np.ndarray) -> np.ndarray:
    return scipy.special.expit(eta)


def logistic_irls(
    design: np.ndarray,
    d: np.ndarray,
    ridge: float = 0.0,
    intercept_col: int | None = 0,
    max_iter: int = 100,
    tol: float = 1e-10,
    xxt: np.ndarray | None = None,
) -> LogisticFit:
    """Logistic regression by Newton/IRLS with step halving.

    Stops when the relative change in the (penalized) log-likelihood falls
    below ``tol`` and the score is small, or after ``max_iter`` iterations;
    the ``converged`` flag reports which happened.

    Raises
    ------
    DivergenceError
        On complete separation with ``ridge == 0`` (the message recommends
        a ridge), or when step halving cannot find an improving step.
    ValidationError
        If only one treatment class is present.
    """
    a = np.asarray(design, dtype=float)
    d = np.asarray(d, dtype=float)
    n, p = a.shape
    if d.min() == d.max():
        raise ValidationError("both treatment classes must be present")
    pen = _penalty_mask(p, intercept_col) if ridge > 0 else np.zeros(p, dtype=bool)

    beta = np.zeros(p)
    if intercept_col is not None:
        dbar = float(np.clip(d.mean(), PROB_CLIP, 1 - PROB_CLIP))
        denom = a[0, intercept_col] if a[0, intercept_col] != 0 else 1.0
        beta[intercept_col] = np.log(dbar / (1 - dbar)) / denom

    use_dual = ridge > 0 and p > n + 8 and intercept_col is not None
    eta = a @ beta
    probs = sigmoid(eta)

    def objective(b, pr):
        pll = bernoulli_loglik(d, pr)
        if ridge > 0:
            pll -= 0.5 * ridge * float(b[pen] @ b[pen])
        return pll

    obj = objective(beta, probs)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = a.T @ (d - probs)
        if ridge > 0:
            score[pen] -= ridge * beta[pen]
        w = probs * (1.0 - probs)
        step = _irls_step(a, w, score, ridge, pen, intercept_col, use_dual, xxt)

        scale = 1.0
        improved = False
        for _ in range(31):
            cand = beta + scale * step
            probs_c = sigmoid(a @ cand)
            obj_c = objective(cand, probs_c)
            if obj_c >= obj - 1e-14 * (1 + abs(obj)):
                improved = True
                break
            scale *= 0.5
        if not improved:
            raise DivergenceError("logistic step halving failed to improve")

        rel = abs(obj_c - obj) / (abs(obj) + 1.0)
        beta, probs, obj = cand, probs_c, obj_c
        if rel < tol:
            g = a.T @ (d - probs)
            if ridge > 0:
                g[pen] -= ridge * beta[pen]
            if np.abs(g).max() < 1e-9 * max(n, 1):
                converged = True
                break

        if ridge == 0.0 and np.abs(a @ beta).max() > 36.0:
            margin = a @ beta
            if ((d == 1) == (margin > 0)).all():
                raise DivergenceError(
                    "complete separation detected; refit with ridge > 0"
                )

    return LogisticFit(
        coef=beta,
        fitted_probs=np.clip(probs, PROB_CLIP, 1 - PROB_CLIP),
        loglik=bernoulli_loglik(d, probs),
        converged=converged,
        n_iter=it,
    )


def _irls_step(a, w, score, ridge, pen, intercept_col, use_dual, xxt=None):
    n, p = a.shape
    if not use_dual:
        h = (a * w[:, None]).T @ a
        if ridge > 0:
            h[pen, pen] += ridge
        h[np.diag_indices_from(h)] += 1e-12
        return _spd_solve(h, score)
    # p > n: Schur-complement step in observation space.  The intercept is
    # eliminated by weight-centering the penalized block.
    icol = int(np.flatnonzero(~pen)[0]) if (~pen).any() else None
    cols = np.ones(p, dtype=bool)
    if icol is not None:
        cols[icol] = False
    xp = a[:, cols]
    s = float(w.sum())
    xpw = xp.T @ w
    mw = xpw / s
    g0 = score[icol] if icol is not None else 0.0
    gb = score[cols]
    rhs = gb - (g0 / s) * xpw
    # (Xc' W Xc + rI)^{-1} v = [v - Xc' W (r I + Xc Xc' W)^{-1} Xc v] / r
    # implemented symmetrically via K = Xc Xc' + r W^{-1}
    if xxt is None:
        xxt = xp @ xp.T
    c = xp @ mw
    xcxc = xxt - c[:, None] - c[None, :] + (mw @ mw)
    k = xcxc + ridge * np.diag(1.0 / np.maximum(w, 1e-300))
    xc_rhs = xp @ rhs - (mw @ rhs)
    inner = _spd_solve(k, xc_rhs)
    db = (rhs - (xp.T @ inner - mw * inner.sum())) / ridge
    step = np.empty(p)
    step[cols] = db
    if icol is not None:
        step[icol] = (g0 - (w * (xp @ db)).sum()) / s
    return step
