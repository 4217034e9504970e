"""Spatial sampling designs: densities on the prototype region and site draws.

Densities live in the centred prototype frame (the unit cube
``(-1/2, 1/2]^d`` or the centred unit disk); ``draw`` shifts prototype points
into the anchored frame and multiplies by the region's scaling factor, so the
returned sites lie in the scaled region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NumericError
from .geometry import Region

_QUAD_TOL = 1e-8


def _shift_and_scale(prototype_pts: np.ndarray, region: Region) -> np.ndarray:
    o = np.asarray(region.origin, dtype=float)
    return o + region.lam * (prototype_pts + 0.5)


@dataclass(frozen=True)
class UniformDesign:
    """Uniform density on the prototype region."""

    d: int = 2
    prototype: str = "cube"

    kind = "uniform"

    def __post_init__(self):
        if self.prototype not in ("cube", "disk"):
            raise ValueError(f"unknown prototype {self.prototype!r}")
        if self.prototype == "disk" and self.d != 2:
            raise ValueError("disk designs are implemented for d = 2 only")

    @property
    def _volume(self) -> float:
        return 1.0 if self.prototype == "cube" else math.pi / 4.0

    def density(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if self.prototype == "cube":
            inside = np.all(np.abs(pts) <= 0.5 + 1e-12, axis=1)
        else:
            inside = np.linalg.norm(pts, axis=1) <= 0.5 + 1e-12
        if not np.all(inside):
            raise ValueError("point outside the prototype region")
        return np.full(len(pts), 1.0 / self._volume)

    def moment(self, power: int) -> float:
        """Integral of density**power over the prototype (closed form)."""
        _check_power(power)
        return self._volume ** (1 - power)

    def draw(self, region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_region(self, region)
        if self.prototype == "cube":
            pts = rng.random((n, self.d)) - 0.5
        else:
            pts = _rejection_sample(
                n,
                lambda m: rng.random((m, 2)) - 0.5,
                lambda u: np.linalg.norm(u, axis=1) < 0.5,
            )
        return _shift_and_scale(pts, region)


@dataclass(frozen=True)
class NormalMixtureDesign:
    """Two-component bivariate normal mixture truncated to the unit square.

    The truncated density is renormalized to integrate to one; the normalizer
    is fixed at construction by midpoint tensor quadrature and verified on a
    doubled grid to 1e-8.
    """

    mean1: tuple = (0.0, 0.0)
    mean2: tuple = (0.25, 0.25)
    cov1: float = 1.0
    cov2: float = 2.0
    weight: float = 0.5

    kind = "mixture"
    d = 2
    prototype = "cube"

    def __post_init__(self):
        if not 0 < self.weight < 1:
            raise ValueError("mixing weight must lie in (0, 1)")
        if min(self.cov1, self.cov2) <= 0:
            raise ValueError("covariance scales must be positive")
        object.__setattr__(self, "mean1", tuple(float(v) for v in self.mean1))
        object.__setattr__(self, "mean2", tuple(float(v) for v in self.mean2))

    def _unnormalized(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(len(pts))
        for w, m, c in (
            (self.weight, self.mean1, self.cov1),
            (1.0 - self.weight, self.mean2, self.cov2),
        ):
            d2 = np.sum((pts - np.asarray(m)) ** 2, axis=1)
            out += w * np.exp(-d2 / (2.0 * c)) / (2.0 * math.pi * c)
        return out

    def _grid_integral(self, fn, cells: int) -> float:
        """Midpoint rule for ``fn`` over the centred unit square on a cells^2 grid."""
        edges = np.linspace(-0.5, 0.5, cells + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        xx, yy = np.meshgrid(mids, mids, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return float(np.sum(fn(pts))) / cells**2

    def _settled_integral(self, fn, label: str) -> float:
        """Double the midpoint grid until successive values agree to 1e-8."""
        cells, prev = 256, self._grid_integral(fn, 256)
        while cells < 8192:
            cells *= 2
            cur = self._grid_integral(fn, cells)
            if abs(cur - prev) < _QUAD_TOL:
                return cur
            prev = cur
        raise NumericError(f"mixture {label} quadrature did not converge")

    @cached_property
    def normalizer(self) -> float:
        return self._settled_integral(self._unnormalized, "normalizer")

    def density(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(np.abs(pts) <= 0.5 + 1e-12):
            raise ValueError("point outside the prototype region")
        return self._unnormalized(pts) / self.normalizer

    def moment(self, power: int) -> float:
        """Integral of density**power by midpoint quadrature, grid doubled to 1e-8."""
        _check_power(power)
        return self._settled_integral(lambda pts: self.density(pts) ** power, "moment")

    def draw(self, region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_region(self, region)

        def propose(m: int) -> np.ndarray:
            comp = rng.random(m) < self.weight
            z = rng.standard_normal((m, 2))
            mean = np.where(comp[:, None], self.mean1, self.mean2)
            scale = np.where(comp, math.sqrt(self.cov1), math.sqrt(self.cov2))
            return mean + z * scale[:, None]

        pts = _rejection_sample(
            n, propose, lambda u: np.all(np.abs(u) <= 0.5, axis=1)
        )
        return _shift_and_scale(pts, region)


@dataclass(frozen=True)
class StripDesign:
    """Nonuniform density concentrating half its mass on a thin vertical strip.

    The first coordinate follows a symmetric piecewise density: a tall plateau
    of height a/4 on (0, 1/a), a linear ramp down on (1/a, 2/a), and a low
    plateau of height a/(4(a-3)) out to 1/2.  The second coordinate is uniform.
    Total mass is exactly one for every a > 4.
    """

    a: float

    kind = "strip"
    d = 2
    prototype = "cube"

    def __post_init__(self):
        if not self.a > 4:
            raise ValueError("strip parameter a must exceed 4")

    @cached_property
    def _pieces(self):
        a = self.a
        high = a / 4.0
        low = a / (4.0 * (a - 3.0))
        return high, low, 1.0 / a, 2.0 / a

    def marginal(self, x1) -> np.ndarray:
        """The symmetric piecewise marginal density of the first coordinate."""
        high, low, x_hi, x_lo = self._pieces
        t = np.abs(np.asarray(x1, dtype=float))
        ramp = high + (low - high) * (t - x_hi) / (x_lo - x_hi)
        return np.select(
            [t <= x_hi, t <= x_lo, t <= 0.5], [high, ramp, low], default=0.0
        )

    def density(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(np.abs(pts) <= 0.5 + 1e-12):
            raise ValueError("point outside the prototype region")
        return self.marginal(pts[:, 0])

    def moment(self, power: int) -> float:
        """Closed-form integral of density**power (powers 1..3)."""
        _check_power(power)
        high, low, x_hi, x_lo = self._pieces
        width = x_lo - x_hi
        # integral of (high + (low-high)u)**p over u in [0,1], p = 1..3
        ramp_mean = {
            1: (high + low) / 2.0,
            2: (high**2 + high * low + low**2) / 3.0,
            3: (high**3 + high**2 * low + high * low**2 + low**3) / 4.0,
        }[power]
        one_sided = high**power * x_hi + ramp_mean * width + low**power * (0.5 - x_lo)
        return 2.0 * one_sided

    def cdf(self, x1) -> np.ndarray:
        """CDF of the first-coordinate marginal on [-1/2, 1/2]."""
        t = np.asarray(x1, dtype=float)
        return 0.5 + np.sign(t) * self._one_sided_cdf(np.abs(t)) / 2.0

    def _one_sided_cdf(self, t: np.ndarray) -> np.ndarray:
        high, low, x_hi, x_lo = self._pieces
        a = self.a
        g_mid = 0.5 + (high + low) / a  # mass of |x1| <= 2/a
        ramp_curv = a * (low - high)
        mid = 0.5 + 2.0 * high * (t - x_hi) + ramp_curv * (t - x_hi) ** 2
        return np.select(
            [t <= x_hi, t <= x_lo],
            [2.0 * high * t, mid],
            default=np.minimum(g_mid + 2.0 * low * (t - x_lo), 1.0),
        )

    def _one_sided_inverse(self, u: np.ndarray) -> np.ndarray:
        high, low, x_hi, x_lo = self._pieces
        a = self.a
        g_mid = 0.5 + (high + low) / a
        ramp_curv = a * (low - high)  # negative
        c = u - 0.5
        # stable smaller root of ramp_curv*x^2 + 2*high*x - c = 0
        disc = np.sqrt(np.maximum(4.0 * high**2 + 4.0 * ramp_curv * c, 0.0))
        ramp_x = np.divide(2.0 * c, 2.0 * high + disc, out=np.zeros_like(c), where=(c > 0))
        return np.select(
            [u <= 0.5, u <= g_mid],
            [u / (2.0 * high), x_hi + ramp_x],
            default=np.minimum(x_lo + (u - g_mid) / (2.0 * low), 0.5),
        )

    def inverse_cdf(self, u) -> np.ndarray:
        """Quantile function of the first-coordinate marginal."""
        v = np.asarray(u, dtype=float)
        if np.any((v < 0) | (v > 1)):
            raise ValueError("quantile argument outside [0, 1]")
        return np.sign(2.0 * v - 1.0) * self._one_sided_inverse(np.abs(2.0 * v - 1.0))

    def draw(self, region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_region(self, region)
        x1 = self.inverse_cdf(rng.random(n))
        x2 = rng.random(n) - 0.5
        return _shift_and_scale(np.column_stack([x1, x2]), region)


def _check_power(power: int) -> None:
    if power not in (1, 2, 3):
        raise ValueError("density moments are implemented for powers 1, 2, 3")


def _check_region(design, region: Region) -> None:
    if region.prototype != design.prototype or region.d != design.d:
        raise ValueError(
            f"design ({design.kind}, d={design.d}, {design.prototype}) is not "
            f"defined on the region prototype ({region.prototype}, d={region.d})"
        )


def _rejection_sample(n: int, propose, accept) -> np.ndarray:
    """Accumulate ``n`` accepted proposals; error if acceptance collapses."""
    kept = []
    got, tried = 0, 0
    while got < n:
        m = max(2 * (n - got), 1024)
        pts = propose(m)
        ok = accept(pts)
        kept.append(pts[ok])
        got += int(np.count_nonzero(ok))
        tried += m
        if tried >= max(10 * n, 10_000) and got < 1e-3 * tried:
            raise NumericError(
                f"rejection sampler acceptance rate below 1e-3 ({got}/{tried})"
            )
    return np.concatenate(kept)[:n]


_DESIGN_KINDS = {
    "uniform": UniformDesign,
    "mixture": NormalMixtureDesign,
    "strip": StripDesign,
}


def make_design(kind: str, **params):
    """Factory used by configuration loading."""
    try:
        cls = _DESIGN_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown design kind {kind!r}") from None
    return cls(**params)


def draw_sites(design, region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` sites in the scaled region according to the design density."""
    if n < 1:
        raise ValueError("site count must be positive")
    return design.draw(region, n, rng)
