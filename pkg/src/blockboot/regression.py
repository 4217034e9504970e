"""Spatial regression data, score functions, and the M-estimation solver.

The estimator solves sum_i w(s_i) * psi(Y(s_i) - w(s_i)'t) = 0.  The identity
score gives ordinary least squares, solved exactly via the normal equations;
smooth scores are solved by damped Newton started from the OLS solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericError

_COND_LIMIT = 1e12
_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class Score:
    """Odd, continuously differentiable estimating-equation kernel."""

    kind: str
    k: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("identity", "pseudo_huber"):
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.kind == "pseudo_huber" and not (self.k and self.k > 0):
            raise ValueError("pseudo_huber score needs a positive scale k")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_identity:
            return x
        return x / np.sqrt(1.0 + (x / self.k) ** 2)

    def dpsi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_identity:
            return np.ones_like(x)
        return (1.0 + (x / self.k) ** 2) ** -1.5


IDENTITY_SCORE = Score("identity")


def pseudo_huber(k: float) -> Score:
    """Smooth Huber-type score x / sqrt(1 + (x/k)^2) with user scale k."""
    return Score("pseudo_huber", k=k)


@dataclass(frozen=True)
class WeightSpec:
    """Built-in weight functions: an intercept plus q per-site covariates."""

    covariates: int = 0

    def __post_init__(self):
        if self.covariates < 0:
            raise ValueError("covariate count must be nonnegative")

    @property
    def p(self) -> int:
        return 1 + self.covariates

    def matrix(self, sites, covariates=None) -> np.ndarray:
        n = len(np.atleast_2d(sites))
        if self.covariates == 0:
            if covariates is not None and np.size(covariates):
                raise ValueError("intercept-only weights take no covariates")
            return np.ones((n, 1))
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        if x.shape == (1, n) and self.covariates == 1:
            x = x.T
        if x.shape != (n, self.covariates):
            raise ValueError(
                f"covariate array shape {x.shape} does not match "
                f"(n={n}, q={self.covariates})"
            )
        return np.column_stack([np.ones(n), x])


def eval_weights(spec: WeightSpec, site, covariates=()) -> np.ndarray:
    """Weight vector for a single site."""
    vals = np.atleast_1d(np.asarray(covariates, dtype=float))
    if len(vals) != spec.covariates:
        raise ValueError(
            f"expected {spec.covariates} covariates, got {len(vals)}"
        )
    return np.concatenate([[1.0], vals])


@dataclass(frozen=True)
class Dataset:
    """Sites in the scaled region with weight rows and responses."""

    sites: np.ndarray
    W: np.ndarray
    y: np.ndarray
    lam: float
    d: int

    def __post_init__(self):
        sites = np.atleast_2d(np.asarray(self.sites, dtype=float))
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if not (len(sites) == len(W) == len(y)):
            raise ValueError("sites, weights and responses must have equal length")
        if W.shape[1] < 1:
            raise ValueError("weight matrix needs at least one column")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(y))):
            raise ValueError("weights and responses must be finite")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    residuals: np.ndarray
    gram: np.ndarray
    normalizer: np.ndarray
    chi0_hat: float
    iterations: int
    step_norm: float


def _symmetric_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fit(dataset: Dataset, score: Score = IDENTITY_SCORE) -> FitResult:
    """Solve the estimating equation; identity score is exact OLS."""
    W, y = dataset.W, dataset.y
    gram = W.T @ W / dataset.n
    if np.linalg.cond(gram) > _COND_LIMIT:
        raise NumericError("weight Gram matrix is numerically singular")
    beta = np.linalg.solve(W.T @ W, W.T @ y)
    iterations, step_norm = 0, 0.0
    if not score.is_identity:
        beta, iterations, step_norm = _newton(W, y, score, beta)
    residuals = y - W @ beta
    chi0 = float(np.mean(score.dpsi(residuals)))
    normalizer = dataset.lam ** (dataset.d / 2.0) * _symmetric_sqrt(gram)
    return FitResult(beta, residuals, gram, normalizer, chi0, iterations, step_norm)


def _newton(
    W: np.ndarray,
    y: np.ndarray,
    score: Score,
    beta0: np.ndarray,
    shift: Optional[np.ndarray] = None,
):
    """Damped Newton on the (possibly shifted) score equation.

    Solves sum_i w_i psi(y_i - w_i't) = shift; the bootstrap estimating
    equation passes the summed centering constants as the shift.
    """
    shift = np.zeros(W.shape[1]) if shift is None else shift
    beta = beta0.copy()
    resid = y - W @ beta
    fval = W.T @ score.psi(resid) - shift
    fnorm = np.linalg.norm(fval)
    for it in range(1, _NEWTON_MAX_ITER + 1):
        jac = (W * score.dpsi(resid)[:, None]).T @ W
        try:
            step = np.linalg.solve(jac, fval)
        except np.linalg.LinAlgError:
            raise NumericError("singular Jacobian in the M-estimation solver") from None
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_resid = y - W @ cand
            cand_f = W.T @ score.psi(cand_resid) - shift
            if np.linalg.norm(cand_f) <= fnorm or scale < 1e-8:
                break
            scale *= 0.5
        beta, resid, fval, fnorm = cand, cand_resid, cand_f, np.linalg.norm(cand_f)
        step_norm = float(np.max(np.abs(scale * step)))
        if step_norm < _NEWTON_TOL:
            return beta, it, step_norm
    raise NumericError(
        f"M-estimation solver did not converge in {_NEWTON_MAX_ITER} iterations; "
        f"last iterate {beta}, step max-norm {step_norm:.3e}"
    )


def mean_psi_prime(fit_result: FitResult, score: Score) -> float:
    """Empirical plug-in for the mean score derivative at the residuals."""
    val = float(np.mean(score.dpsi(fit_result.residuals)))
    if abs(val) < 1e-8:
        raise NumericError("mean score derivative is numerically zero (degenerate score)")
    return val
