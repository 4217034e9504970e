"""Analytic asymptotic-variance targets for the constant-weight mean case."""

from __future__ import annotations

import math

from .field import CovarianceModel


def sigma_infinity_sq(model: CovarianceModel, design) -> float:
    """Infill-limit scaled variance: (integral of the covariance) x (integral of f^2)."""
    return model.integral(d=2) * design.moment(2)


def sigma_c_mean(model: CovarianceModel, design, c: float) -> float:
    """Scaled variance of the sample mean at infill ratio c (c = inf drops the 1/c term)."""
    if math.isinf(c):
        return sigma_infinity_sq(model, design)
    if not c > 0:
        raise ValueError("infill ratio c must be positive (or infinity)")
    return model.sill / c + sigma_infinity_sq(model, design)
