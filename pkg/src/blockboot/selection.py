"""Empirical block-size selection by subregion variance matching.

For each candidate block size the full-region scaled-variance estimate is
compared against scaled-variance estimates recomputed on small congruent
subregions (each treated as a sampling region of its own, with the candidate
mapped to the subregion scale by the square-root rule).  The candidate
minimizing the mean squared mismatch wins; the winner is mapped back to the
full-region scale and snapped to the candidate list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bootstrap import BootstrapPlan, build_geometry, run_bootstrap
from .errors import NumericError
from .geometry import Region, scale_region
from .regression import IDENTITY_SCORE, Dataset, Score, fit

_MIN_SUBREGION_SITES = 10


@dataclass(frozen=True)
class SelectionConfig:
    candidates: tuple
    subregion_count: int = 4
    subregion_side: Optional[float] = None
    pilot_rule: object = "median"  # "median" or a fixed block side
    M_pilot: int = 200
    M_sub: int = 200
    component: int = 0
    aggregate: bool = False

    def __post_init__(self):
        cands = tuple(sorted(float(c) for c in self.candidates))
        if not cands:
            raise ValueError("candidate list must be nonempty")
        object.__setattr__(self, "candidates", cands)

    def pilot_size(self) -> float:
        if self.pilot_rule == "median":
            return self.candidates[(len(self.candidates) - 1) // 2]
        return float(self.pilot_rule)


@dataclass(frozen=True)
class SelectionResult:
    chosen: float
    per_component: tuple
    mse: np.ndarray  # (candidates, p) mean squared mismatch
    pilot_estimate: np.ndarray
    pilot_size: float
    subregions_used: int
    subregions_skipped: int


def _subregion_corners(region: Region, side: float, count: int) -> list:
    """Corners of congruent subregion squares, lexicographic, first ``count``."""
    o = np.asarray(region.origin, dtype=float)
    per_axis = max(1, int(math.floor(region.lam / side + 1e-9)))
    corners = [
        o + np.asarray(j, dtype=float) * side
        for j in itertools.product(range(per_axis), repeat=region.d)
    ]
    return corners[:count]


def select_block_size(
    dataset: Dataset,
    fit_result,
    region: Region,
    config: SelectionConfig,
    rng: np.random.Generator,
    score: Score = IDENTITY_SCORE,
    variant: str = "gbbb",
) -> SelectionResult:
    """Pick a block size from the candidate list (ties go to the smaller size)."""
    if region.prototype != "cube":
        raise ValueError("block-size selection is implemented for cube regions")
    if region.d != 2:
        raise NumericError(
            "the square-root subregion rescaling rule is calibrated for d = 2"
        )
    lam = region.lam
    side = config.subregion_side if config.subregion_side is not None else lam / 2.0
    if not 0 < side < lam:
        raise ValueError("subregion side must lie in (0, lambda)")
    corners = _subregion_corners(region, side, config.subregion_count)
    scale = math.sqrt(side / lam)
    p = dataset.p
    cands = config.candidates

    streams = iter(rng.spawn(1 + len(corners) * len(cands)))

    pilot_b = config.pilot_size()
    pilot_geo = build_geometry(region, pilot_b, dataset.sites)
    pilot_plan = BootstrapPlan(variant=variant, b=pilot_b, M=config.M_pilot)
    pilot = run_bootstrap(
        dataset, fit_result, pilot_plan, pilot_geo, rng=next(streams), score=score
    )
    psi_hat = pilot.scaled_var

    sq_err = np.zeros((len(cands), p))
    used = np.zeros(len(cands), dtype=int)
    skipped = 0
    for corner in corners:
        rel = dataset.sites - corner
        inside = np.all((rel >= 0.0) & (rel < side), axis=1)
        if np.count_nonzero(inside) < _MIN_SUBREGION_SITES:
            skipped += 1
            for _ in cands:
                next(streams)
            continue
        sub_region = scale_region("cube", region.d, side)
        sub_data = Dataset(
            sites=rel[inside], W=dataset.W[inside], y=dataset.y[inside],
            lam=side, d=region.d,
        )
        sub_fit = fit(sub_data, score)
        for ci, cand in enumerate(cands):
            stream = next(streams)
            b_sub = cand * scale
            try:
                geo = build_geometry(sub_region, b_sub, sub_data.sites)
                plan = BootstrapPlan(variant=variant, b=b_sub, M=config.M_sub)
                out = run_bootstrap(sub_data, sub_fit, plan, geo, rng=stream, score=score)
            except (ValueError, NumericError):
                sq_err[ci] += np.inf
                used[ci] += 1
                continue
            sq_err[ci] += (out.scaled_var - psi_hat) ** 2
            used[ci] += 1
    if not used.any():
        raise NumericError("every subregion was skipped (fewer than 10 sites each)")

    mse = sq_err / np.maximum(used, 1)[:, None]
    rescale = math.sqrt(lam / side)

    def winner(column: np.ndarray) -> float:
        if not np.isfinite(column).any():
            raise NumericError("no candidate block size was feasible on the subregions")
        # the subregion-scale winner, mapped back by the square-root rule
        return _snap(cands[int(np.argmin(column))] * scale * rescale, cands)

    per_component = tuple(winner(mse[:, j]) for j in range(p))
    chosen = winner(mse.sum(axis=1) if config.aggregate else mse[:, config.component])
    return SelectionResult(
        chosen=chosen,
        per_component=per_component,
        mse=mse,
        pilot_estimate=psi_hat,
        pilot_size=pilot_b,
        subregions_used=len(corners) - skipped,
        subregions_skipped=skipped,
    )


def _snap(value: float, candidates: tuple) -> float:
    dists = [abs(value - c) for c in candidates]
    return candidates[int(np.argmin(dists))]
