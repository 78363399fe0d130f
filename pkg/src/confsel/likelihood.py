"""Joint negative log-likelihood of outcome and treatment with a shared
covariate coefficient vector.

The outcome model is Gaussian, ``y | d, x ~ N(b0y + bd*d + x'alpha, sigma2)``;
the treatment model is logistic, ``d | x ~ Bernoulli(expit(b0d + x'alpha))``.
The single ``alpha`` appears in both models, so a covariate associated with
either the outcome or the treatment can keep its coefficient away from zero.
The penalty applies to ``alpha`` only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.special

from .data import Dataset
from .exceptions import ValidationError
from .penalties import PenaltyFn

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class ParamVector:
    """Joint-model parameters (beta block, shared alpha, profiled sigma2).

    Zeros in ``alpha`` are stored exactly; ``support`` is derived from the
    stored values so mask and storage cannot disagree.
    """

    beta0_y: float
    beta_d: float
    beta0_d: float
    alpha: np.ndarray
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if not self.sigma2 > 0:
            raise ValidationError("sigma2 must be positive")

    @property
    def r2(self) -> int:
        return self.alpha.shape[0]

    @property
    def support(self) -> np.ndarray:
        """Indices j with alpha_j != 0 (exact comparison, by design)."""
        return np.flatnonzero(self.alpha != 0.0)

    def with_alpha(self, alpha: np.ndarray) -> "ParamVector":
        return replace(self, alpha=np.asarray(alpha, dtype=float))


def _check_dims(eta: ParamVector, ds: Dataset) -> None:
    if eta.r2 != ds.r2:
        raise ValidationError(
            f"parameter has {eta.r2} covariate coefficients, data has {ds.r2}"
        )


def mean_and_logit(eta: ParamVector, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Outcome means and treatment-model linear predictors."""
    xa = ds.x @ eta.alpha
    mu = eta.beta0_y + eta.beta_d * ds.d + xa
    logit = eta.beta0_d + xa
    return mu, logit


def nll(eta: ParamVector, ds: Dataset) -> float:
    """Joint negative log-likelihood at ``eta``.

    Gaussian outcome part plus Bernoulli treatment part; ``sigma2`` is
    taken from ``eta`` (see :func:`profile_sigma2`).
    """
    _check_dims(eta, ds)
    mu, logit = mean_and_logit(eta, ds)
    resid = ds.y - mu
    gauss = 0.5 * ds.n * np.log(2.0 * np.pi * eta.sigma2) + (
        resid @ resid
    ) / (2.0 * eta.sigma2)
    bern = float(np.logaddexp(0.0, logit).sum() - ds.d @ logit)
    return float(gauss + bern)


def nll_grad(eta: ParamVector, ds: Dataset) -> np.ndarray:
    """Gradient of :func:`nll` in the order
    (beta0_y, beta_d, beta0_d, alpha_1..alpha_r2, sigma2)."""
    _check_dims(eta, ds)
    mu, logit = mean_and_logit(eta, ds)
    resid = ds.y - mu
    probs = scipy.special.expit(logit)
    dprob = probs - ds.d
    s2 = eta.sigma2
    g_alpha = -(ds.x.T @ resid) / s2 + ds.x.T @ dprob
    g_sigma2 = ds.n / (2.0 * s2) - (resid @ resid) / (2.0 * s2 * s2)
    return np.concatenate(
        (
            [-resid.sum() / s2, -(ds.d @ resid) / s2, dprob.sum()],
            g_alpha,
            [g_sigma2],
        )
    )


def profile_sigma2(eta: ParamVector, ds: Dataset) -> ParamVector:
    """Replace sigma2 by the residual mean square (its closed-form optimum).

    The joint NLL is nonincreasing under this update.  A perfect fit is
    floored at ``SIGMA2_FLOOR`` with a warning.
    """
    mu, _ = mean_and_logit(eta, ds)
    resid = ds.y - mu
    s2 = float(resid @ resid) / ds.n
    if s2 < SIGMA2_FLOOR:
        warnings.warn(
            "residual variance numerically zero; sigma2 floored", RuntimeWarning
        )
        s2 = SIGMA2_FLOOR
    return replace(eta, sigma2=s2)


def penalized_nll(
    eta: ParamVector,
    ds: Dataset,
    penalty: PenaltyFn | None,
    nu: np.ndarray | None = None,
) -> float:
    """``nll`` plus ``n * sum_j nu_j * p(|alpha_j|)``.

    Only the shared covariate coefficients are penalized; the intercepts
    and the treatment coefficient never are.
    """
    base = nll(eta, ds)
    if penalty is None:
        return base
    weights = np.ones(eta.r2) if nu is None else np.asarray(nu, dtype=float)
    if weights.shape[0] != eta.r2:
        raise ValidationError("penalty weights must have one entry per covariate")
    return base + ds.n * float(weights @ penalty.value(eta.alpha))


@dataclass
class JointObjective:
    """Penalized joint objective bound to one dataset.

    ``value``/``grad`` evaluate the penalized NLL and its gradient over the
    full parameter vector (beta block, alpha, sigma2).  The penalty term of
    the gradient uses the signed derivative, which is 0 at alpha_j = 0
    (the objective is not differentiable there; gradient checks should
    stick to nonzero coordinates).
    """

    ds: Dataset
    penalty: PenaltyFn | None = None
    nu: np.ndarray | None = None

    def value(self, eta: ParamVector) -> float:
        return penalized_nll(eta, self.ds, self.penalty, self.nu)

    def grad(self, eta: ParamVector) -> np.ndarray:
        g = nll_grad(eta, self.ds)
        if self.penalty is not None:
            weights = np.ones(eta.r2) if self.nu is None else self.nu
            g[3 : 3 + eta.r2] += self.ds.n * weights * self.penalty.deriv(eta.alpha)
        return g

    def pack(self, eta: ParamVector) -> np.ndarray:
        return np.concatenate(
            ([eta.beta0_y, eta.beta_d, eta.beta0_d], eta.alpha, [eta.sigma2])
        )

    def unpack(self, vec: np.ndarray) -> ParamVector:
        return ParamVector(
            beta0_y=float(vec[0]),
            beta_d=float(vec[1]),
            beta0_d=float(vec[2]),
            alpha=vec[3:-1].copy(),
            sigma2=float(vec[-1]),
        )


# ---------------------------------------------------------------------------
# Shared-coefficient cancellation in a three-variable linear SEM
# ---------------------------------------------------------------------------
#
# With x -> z -> y and a direct x -> y path (x = e1, z = a12 x + e2,
# y = a13 x + a23 z + e3, unit-variance noises), sharing one coefficient
# between the two working models makes its population value
#
#     alpha* = cov(x, y) + cov(x, z) (1 - beta)   (var(x) = 1)
#            = a13 + a12 a23 + a12 (1 - beta),
#
# the root of the combined-response quasi-score
# E[x (y + (1 - beta) z - alpha x)] = 0.  alpha* vanishes on the
# hypersurface a13 + a12 a23 + a12 (1 - beta) = 0 even though x is a
# genuine confounder there: the two associations cancel.  That surface has
# measure zero in the parameter space.


def sem_alpha_star(a12: float, a13: float, a23: float, beta: float) -> float:
    """Population value of the shared coefficient in the cancellation SEM."""
    return a13 + a12 * a23 + a12 * (1.0 - beta)


def sem_generate(
    a12: float, a13: float, a23: float, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (x, z, y) from the linear SEM with standard normal noises."""
    x = rng.standard_normal(n)
    z = a12 * x + rng.standard_normal(n)
    y = a13 * x + a23 * z + rng.standard_normal(n)
    return x, z, y


def sem_score_mc(
    a12: float,
    a13: float,
    a23: float,
    beta: float,
    alpha: float,
    n: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the combined-response
    quasi-score ``x (y + (1 - beta) z - alpha x)`` at a given alpha."""
    rng = np.random.default_rng(seed)
    x, z, y = sem_generate(a12, a13, a23, n, rng)
    score = x * (y + (1.0 - beta) * z - alpha * x)
    return float(score.mean()), float(score.std(ddof=1) / np.sqrt(n))
