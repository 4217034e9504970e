"""Block resampling engines for irregularly spaced spatial regression data.

Four variants share one mechanism.  The sampling region is partitioned into
cells of side ``b``; for every cell an offset is drawn uniformly from an
admissible set, and the congruent copy of the cell anchored at that offset
supplies the resampled observations:

* ``gbbb``            offsets on the unit integer lattice (template grid);
* ``gbbb-cb``         same offsets, but full cubic blocks for every cell;
* ``gbbb-nonoverlap`` offsets on the coarse lattice of multiples of ``b``;
* ``dssbb``           offsets at the sampling sites themselves.

Bootstrap responses are rebuilt from relocated residuals around the fitted
model, and the bootstrap estimating equation subtracts exact per-cell
centering constants (offset averages of block score sums) so that it is
unbiased at the fitted coefficients.

Weights travel with the observation: a resampled site keeps the weight row
of the original site.  For purely location-dependent weights this equals
evaluating the weight function at the relocated position; for
covariate-dependent weights it keeps each covariate attached to its
observation, which is the only reading that makes regression resampling
well defined.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .errors import NumericError
from .geometry import (
    BlockPartition,
    Region,
    SiteIndex,
    TemplateIndexSet,
    build_site_index,
    partition,
    sites_in_translate,
    template_positions,
)
from .regression import IDENTITY_SCORE, Dataset, FitResult, Score, _newton

VARIANTS = ("gbbb", "gbbb-cb", "gbbb-nonoverlap", "dssbb")

EXACT_ENUMERATION_LIMIT = 100_000

# chunk offsets so the (m, n, d) broadcast stays within ~64 MB
_CHUNK_ENTRIES = 4_000_000

_GRAM_RCOND = 1e-12


class ReplicateFailure(Exception):
    """A single bootstrap replicate could not be solved (not fatal)."""


@dataclass(frozen=True)
class BootstrapPlan:
    """Resampling configuration shared by all engines."""

    variant: str
    b: float
    M: int = 1000
    ci_method: str = "normal"
    level: float = 0.90
    seed: int = 0
    exact_mode: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown bootstrap variant {self.variant!r}")
        if not self.b > 0:
            raise ValueError("block side must be positive")
        if self.M < 1:
            raise ValueError("resample count must be at least 1")
        if not 0 < self.level < 1:
            raise ValueError("confidence level must lie in (0, 1)")
        if self.ci_method not in ("normal", "percentile"):
            raise ValueError(f"unknown CI method {self.ci_method!r}")


@dataclass(frozen=True)
class BlockGeometry:
    """Partition, template grid and site index for one (region, b, sites)."""

    region: Region
    b: float
    partition: BlockPartition
    templates: Optional[TemplateIndexSet]
    index: SiteIndex


def build_geometry(region: Region, b: float, sites) -> BlockGeometry:
    try:
        templates = template_positions(region, b)
    except ValueError:
        templates = None
    return BlockGeometry(
        region=region,
        b=b,
        partition=partition(region, b),
        templates=templates,
        index=build_site_index(sites, b, region),
    )


def admissible_offsets(variant: str, geometry: BlockGeometry, sites) -> np.ndarray:
    """Anchor points the variant may translate blocks to (uniform draw set)."""
    region, b = geometry.region, geometry.b
    if variant in ("gbbb", "gbbb-cb"):
        if geometry.templates is None or len(geometry.templates) == 0:
            raise ValueError(f"empty admissible offset set for {variant} with b={b}")
        return geometry.templates.positions.astype(float)
    if variant == "gbbb-nonoverlap":
        o = np.asarray(region.origin, dtype=float)
        lo_ax = np.ceil(o / b - 1e-9).astype(int)
        hi_ax = np.floor((o + region.lam) / b + 1e-9).astype(int)
        grid = np.array(
            list(itertools.product(*[range(a, z + 1) for a, z in zip(lo_ax, hi_ax)])),
            dtype=float,
        )
        corners = grid * b
        corners = corners[region.cube_inside(corners, b)]
        if len(corners) == 0:
            raise ValueError(f"empty admissible offset set for {variant} with b={b}")
        return corners
    if variant == "dssbb":
        pts = np.atleast_2d(np.asarray(sites, dtype=float))
        anchors = pts[geometry.region.cube_inside(pts, b)]
        if len(anchors) == 0:
            raise ValueError(f"empty admissible offset set for dssbb with b={b}")
        return anchors
    raise ValueError(f"unknown bootstrap variant {variant!r}")


@dataclass(frozen=True)
class Resample:
    """One drawn resample: per-cell offsets and the site ids they capture."""

    variant: str
    offset_indices: np.ndarray
    offsets: np.ndarray
    block_site_ids: tuple

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(ids) for ids in self.block_site_ids])

    @property
    def n_star(self) -> int:
        return int(self.counts.sum())


def _cube_site_ids(index: SiteIndex, sites: np.ndarray, offset: np.ndarray, b: float):
    cand = index.candidates(offset, offset + b)
    if len(cand) == 0:
        return cand
    rel = sites[cand] - offset
    return np.sort(cand[np.all((rel >= 0.0) & (rel < b), axis=1)])


def _resample_from_indices(
    geometry: BlockGeometry, sites: np.ndarray, offsets: np.ndarray,
    idx_row: np.ndarray, variant: str,
) -> Resample:
    cubic = variant == "gbbb-cb"
    drawn = offsets[idx_row]
    ids = []
    for cell, off in zip(geometry.partition.cells, drawn):
        if cubic:
            ids.append(_cube_site_ids(geometry.index, sites, off, geometry.b))
        else:
            ids.append(sites_in_translate(geometry.index, sites, cell, off))
    return Resample(variant, np.asarray(idx_row), drawn, tuple(ids))


def draw_blocks(
    plan: BootstrapPlan, geometry: BlockGeometry, sites, rng: np.random.Generator
) -> Resample:
    """Draw one resample: an independent uniform offset for every cell."""
    pts = np.atleast_2d(np.asarray(sites, dtype=float))
    offsets = admissible_offsets(plan.variant, geometry, pts)
    idx = rng.integers(0, len(offsets), size=geometry.partition.n_cells)
    return _resample_from_indices(geometry, pts, offsets, idx, plan.variant)


def _translate_tables(
    geometry: BlockGeometry, sites: np.ndarray, offsets: np.ndarray,
    values: np.ndarray, cubic: bool,
):
    """Counts and column sums of ``values`` over every (cell, offset) block.

    Returns ``counts`` of shape (K, m) and ``sums`` of shape (K, m, c).
    Complete cells (and every cell in cubic mode) share the plain-cube
    tables, which collapses the work to one pass over the offsets.
    """
    part, b, region = geometry.partition, geometry.b, geometry.region
    n, m = len(sites), len(offsets)
    K, c = part.n_cells, values.shape[1]
    counts = np.zeros((K, m))
    sums = np.zeros((K, m, c))
    boundary = [
        (k, cell) for k, cell in enumerate(part.cells) if not (cubic or cell.complete)
    ]
    chunk = max(1, _CHUNK_ENTRIES // max(n, 1))
    for start in range(0, m, chunk):
        off = offsets[start : start + chunk]
        rel = sites[None, :, :] - off[:, None, :]
        cube = np.all((rel >= 0.0) & (rel < b), axis=2)
        a = cube.astype(float)
        cube_counts, cube_sums = a.sum(axis=1), a @ values
        sel = slice(start, start + len(off))
        for k, cell in enumerate(part.cells):
            if cubic or cell.complete:
                counts[k, sel] = cube_counts
                sums[k, sel] = cube_sums
        for k, cell in boundary:
            mask = np.all((rel >= 0.0) & (rel < cell.span), axis=2)
            if region.prototype == "disk":
                shifted = (rel + cell.lo).reshape(-1, region.d)
                mask &= region.contains(shifted).reshape(mask.shape)
            a = mask.astype(float)
            counts[k, sel] = a.sum(axis=1)
            sums[k, sel] = a @ values
    return counts, sums


def block_count_table(geometry: BlockGeometry, sites, offsets, cubic_blocks=False):
    """Site counts of every candidate block, shape (cells, offsets)."""
    pts = np.atleast_2d(np.asarray(sites, dtype=float))
    counts, _ = _translate_tables(geometry, pts, offsets, np.zeros((len(pts), 0)), cubic_blocks)
    return counts


def block_response_sums(geometry: BlockGeometry, dataset: Dataset, offsets, cubic_blocks=False):
    """Raw response sums of every candidate block, shape (cells, offsets)."""
    _, sums = _translate_tables(
        geometry, dataset.sites, offsets, dataset.y[:, None], cubic_blocks
    )
    return sums[:, :, 0]


def centering_constants(
    geometry: BlockGeometry,
    dataset: Dataset,
    fit_result: FitResult,
    score: Score,
    offsets,
    cubic_blocks: bool = False,
) -> np.ndarray:
    """Exact per-cell centering: each cell's block score sum averaged over all offsets."""
    q = dataset.W * score.psi(fit_result.residuals)[:, None]
    _, sums = _translate_tables(geometry, dataset.sites, offsets, q, cubic_blocks)
    return sums.mean(axis=1)


@dataclass(frozen=True)
class PseudoData:
    """Bootstrap observations: relocated sites with travelling weights/errors."""

    sites: np.ndarray
    W: np.ndarray
    y: np.ndarray
    errors: np.ndarray
    cell_of: np.ndarray


def assemble_pseudo_data(
    resample: Resample, fit_result: FitResult, dataset: Dataset, geometry: BlockGeometry
) -> PseudoData:
    """Relocate each drawn block's sites into its cell and rebuild responses."""
    rows_s, rows_w, rows_z, rows_cell = [], [], [], []
    for k, (cell, ids) in enumerate(zip(geometry.partition.cells, resample.block_site_ids)):
        if len(ids) == 0:
            continue
        rows_s.append(dataset.sites[ids] - resample.offsets[k] + cell.lo)
        rows_w.append(dataset.W[ids])
        rows_z.append(fit_result.residuals[ids])
        rows_cell.append(np.full(len(ids), k))
    if not rows_s:
        d, p = dataset.sites.shape[1], dataset.p
        return PseudoData(
            np.zeros((0, d)), np.zeros((0, p)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
        )
    W = np.concatenate(rows_w)
    z = np.concatenate(rows_z)
    return PseudoData(
        sites=np.concatenate(rows_s),
        W=W,
        y=W @ fit_result.beta_hat + z,
        errors=z,
        cell_of=np.concatenate(rows_cell),
    )


def solve_bootstrap(
    pseudo: PseudoData, centering: np.ndarray, score: Score, beta_hat: np.ndarray
) -> np.ndarray:
    """Solve the centered bootstrap estimating equation for one replicate."""
    if len(pseudo.y) == 0:
        raise ReplicateFailure("empty resample (N* = 0)")
    shift = centering.sum(axis=0)
    W, y = pseudo.W, pseudo.y
    if score.is_identity:
        gram = W.T @ W
        scale = np.trace(gram) / len(gram)
        if not np.linalg.det(gram) > (_GRAM_RCOND * scale) ** len(gram):
            raise ReplicateFailure("singular bootstrap Gram matrix")
        return np.linalg.solve(gram, W.T @ y - shift)
    try:
        beta, _, _ = _newton(W, y, score, np.asarray(beta_hat, dtype=float), shift=shift)
    except NumericError as exc:
        raise ReplicateFailure(str(exc)) from None
    return beta


def mean_case_closed_form(
    resample: Resample, dataset: Dataset, response_sums: np.ndarray
) -> float:
    """Mean-case identity: bootstrap mean minus the ratio of offset-averaged block sums.

    Exact match with the solver only on resamples whose total count equals the
    sum of expected block counts; used as an independent oracle, never as the
    production path.
    """
    if dataset.p != 1 or not np.allclose(dataset.W, 1.0):
        raise ValueError("mean-case closed form requires the intercept-only model")
    n_star = resample.n_star
    if n_star == 0:
        raise ReplicateFailure("empty resample (N* = 0)")
    ybar_star = sum(float(dataset.y[ids].sum()) for ids in resample.block_site_ids) / n_star
    mu_tilde = float(response_sums.mean(axis=1).sum()) / n_star
    return ybar_star - mu_tilde


def _all_index_combos(m: int, cells: int) -> np.ndarray:
    total = m**cells
    if total > EXACT_ENUMERATION_LIMIT:
        raise ValueError(
            f"exact mode infeasible: {m}^{cells} = {total} resamples exceeds "
            f"{EXACT_ENUMERATION_LIMIT}"
        )
    return np.array(list(itertools.product(range(m), repeat=cells)), dtype=int)


def _unpack_symmetric(packed: np.ndarray, p: int, iu) -> np.ndarray:
    out = np.zeros(packed.shape[:-1] + (p, p))
    out[..., iu[0], iu[1]] = packed
    out[..., iu[1], iu[0]] = packed
    return out


class _IdentityEngine:
    """Per-(cell, offset) sufficient statistics for identity-score replicates.

    With the identity score a replicate's estimating equation is linear, so a
    block contributes only its weight Gram sum and weighted-residual sum; a
    replicate then reduces to gathering precomputed rows and one p x p solve.
    """

    def __init__(self, dataset, fit_result, geometry, offsets, cubic):
        W, res = dataset.W, fit_result.residuals
        p = dataset.p
        iu = np.triu_indices(p)
        values = np.column_stack([W * res[:, None], W[:, iu[0]] * W[:, iu[1]]])
        counts, sums = _translate_tables(geometry, dataset.sites, offsets, values, cubic)
        self.p = p
        self.iu = iu
        self.counts = counts
        self.score_sums = sums[:, :, :p]
        self.gram_packed = sums[:, :, p:]
        self.chat = self.score_sums.mean(axis=1)
        self.expected_counts = counts.mean(axis=1)
        self.beta_hat = fit_result.beta_hat

    def replicate_solutions(self, idx_matrix: np.ndarray):
        ks = np.arange(self.counts.shape[0])[None, :]
        n_stars = self.counts[ks, idx_matrix].sum(axis=1)
        gram = _unpack_symmetric(
            self.gram_packed[ks, idx_matrix].sum(axis=1), self.p, self.iu
        )
        qsum = self.score_sums[ks, idx_matrix].sum(axis=1)
        rhs = gram @ self.beta_hat + qsum - self.chat.sum(axis=0)
        scale = np.trace(gram, axis1=-2, axis2=-1) / self.p
        ok = np.linalg.det(gram) > (_GRAM_RCOND * scale) ** self.p
        betas = np.full((len(idx_matrix), self.p), np.nan)
        if np.any(ok):
            betas[ok] = np.linalg.solve(gram[ok], rhs[ok][..., None])[..., 0]
        return betas, ok, n_stars


@dataclass(frozen=True)
class BootstrapOutput:
    """Replicate-level results of one bootstrap run."""

    replicates: np.ndarray
    var_estimate: np.ndarray
    scaled_var: np.ndarray
    ci: np.ndarray
    n_star_mean: float
    failure_count: int
    total: int
    level: float
    variant: str
    b: float

    @property
    def warning(self) -> bool:
        return self.failure_count > 0.01 * self.total


def _spread(values: np.ndarray, exact: bool) -> np.ndarray:
    """Componentwise variance: population over an enumeration, sample otherwise."""
    if exact or len(values) < 2:
        return values.var(axis=0, ddof=0)
    return values.var(axis=0, ddof=1)


def run_bootstrap(
    dataset: Dataset,
    fit_result: FitResult,
    plan: BootstrapPlan,
    geometry: BlockGeometry,
    rng: Optional[np.random.Generator] = None,
    score: Score = IDENTITY_SCORE,
) -> BootstrapOutput:
    """Run the plan: M independent resamples (or the exact enumeration).

    ``rng`` overrides the plan seed; this is how experiment drivers inject
    derived streams.  Failed replicates (singular bootstrap Gram matrix,
    solver failure, empty resample) are counted and excluded, never redrawn.
    """
    if abs(plan.b - geometry.b) > 1e-12 * max(1.0, plan.b):
        raise ValueError("plan block side does not match the geometry block side")
    offsets = admissible_offsets(plan.variant, geometry, dataset.sites)
    cells = geometry.partition.n_cells
    if plan.exact_mode:
        idx_matrix = _all_index_combos(len(offsets), cells)
    else:
        if rng is None:
            rng = np.random.default_rng(plan.seed)
        idx_matrix = rng.integers(0, len(offsets), size=(plan.M, cells))
    cubic = plan.variant == "gbbb-cb"

    if score.is_identity:
        engine = _IdentityEngine(dataset, fit_result, geometry, offsets, cubic)
        betas, ok, n_stars = engine.replicate_solutions(idx_matrix)
    else:
        centering = centering_constants(geometry, dataset, fit_result, score, offsets, cubic)
        betas = np.zeros((len(idx_matrix), dataset.p))
        ok = np.zeros(len(idx_matrix), dtype=bool)
        n_stars = np.zeros(len(idx_matrix))
        for r, idx_row in enumerate(idx_matrix):
            resample = _resample_from_indices(
                geometry, dataset.sites, offsets, idx_row, plan.variant
            )
            n_stars[r] = resample.n_star
            pseudo = assemble_pseudo_data(resample, fit_result, dataset, geometry)
            try:
                betas[r] = solve_bootstrap(pseudo, centering, score, fit_result.beta_hat)
                ok[r] = True
            except ReplicateFailure:
                continue

    total = len(idx_matrix)
    failures = int(total - np.count_nonzero(ok))
    if failures == total:
        raise NumericError("all bootstrap replicates failed")
    good = betas[ok]
    var = _spread(good, plan.exact_mode)
    ci = _confidence_interval(good, var, fit_result.beta_hat, plan)
    return BootstrapOutput(
        replicates=good,
        var_estimate=var,
        scaled_var=var * geometry.region.lam**geometry.region.d,
        ci=ci,
        n_star_mean=float(n_stars[ok].mean()),
        failure_count=failures,
        total=total,
        level=plan.level,
        variant=plan.variant,
        b=plan.b,
    )


def _confidence_interval(replicates, var, beta_hat, plan: BootstrapPlan) -> np.ndarray:
    if plan.ci_method == "normal":
        z = norm.ppf(0.5 * (1.0 + plan.level))
        half = z * np.sqrt(var)
        return np.column_stack([beta_hat - half, beta_hat + half])
    lo = (1.0 - plan.level) / 2.0
    qs = np.quantile(replicates, [lo, 1.0 - lo], axis=0)
    return qs.T


def dssbb_mean_variance(
    dataset: Dataset,
    plan: BootstrapPlan,
    geometry: BlockGeometry,
    rng: Optional[np.random.Generator] = None,
    linearized: bool = False,
) -> float:
    """Scaled variance of the site-anchored resampled mean of raw responses.

    This is the stationary-case estimator: blocks are resampled from
    site-anchored translates and the statistic is the plain average of the
    resampled responses, with no residual centering.  ``linearized`` divides
    block sums by the expected resample size instead of the realized one.
    """
    if plan.variant != "dssbb":
        raise ValueError("dssbb_mean_variance requires a dssbb plan")
    if abs(plan.b - geometry.b) > 1e-12 * max(1.0, plan.b):
        raise ValueError("plan block side does not match the geometry block side")
    offsets = admissible_offsets("dssbb", geometry, dataset.sites)
    counts, sums = _translate_tables(
        geometry, dataset.sites, offsets, dataset.y[:, None], cubic=False
    )
    ysums = sums[:, :, 0]
    cells = geometry.partition.n_cells
    if plan.exact_mode:
        idx_matrix = _all_index_combos(len(offsets), cells)
    else:
        if rng is None:
            rng = np.random.default_rng(plan.seed)
        idx_matrix = rng.integers(0, len(offsets), size=(plan.M, cells))
    ks = np.arange(cells)[None, :]
    tot_counts = counts[ks, idx_matrix].sum(axis=1)
    tot_sums = ysums[ks, idx_matrix].sum(axis=1)
    if linearized:
        expected = counts.mean(axis=1).sum()
        if expected <= 0:
            raise NumericError("expected resample size is zero")
        t_stars = tot_sums / expected
    else:
        ok = tot_counts > 0
        if not np.any(ok):
            raise NumericError("all resampled means are empty")
        t_stars = tot_sums[ok] / tot_counts[ok]
    var = float(_spread(t_stars[:, None], plan.exact_mode)[0])
    return var * geometry.region.lam**geometry.region.d
