"""Sampling-region geometry: scaled regions, block partitions, template grids.

Coordinate convention: a region with scaling factor ``lam`` occupies
``origin + [0, lam]^d`` for the cube prototype; the disk prototype is the
closed ball of radius ``lam / 2`` centred at ``origin + (lam/2, ..., lam/2)``.
All block statistics are translation invariant, so this corner anchoring is
interchangeable with a centred one, and it aligns partition cells with the
lattice whenever ``lam / b`` is an integer.

Two membership rules coexist on purpose:

* partition cells are half-open cubes ``origin + k*b + [0, b)^d`` intersected
  with the region, so ties on upper faces belong to the next cell and every
  interior point lies in exactly one cell;
* containment tests (template grid, completeness, site-anchored blocks) use
  the closed cube against the closed region, so admissible blocks are not
  lost to zero-measure boundary effects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

PROTOTYPES = ("cube", "disk")

_REL_TOL = 1e-9


def _tol(lam: float) -> float:
    return _REL_TOL * max(1.0, lam)


@dataclass(frozen=True)
class Region:
    """Scaled sampling region with a membership predicate."""

    prototype: str
    d: int
    lam: float
    origin: tuple = ()

    def __post_init__(self):
        if self.prototype not in PROTOTYPES:
            raise ValueError(f"unknown prototype {self.prototype!r}")
        if self.d < 1:
            raise ValueError("dimension must be a positive integer")
        if not self.lam > 0:
            raise ValueError("scaling factor must be positive")
        if self.prototype == "disk" and self.d != 2:
            raise ValueError("disk prototype is implemented for d = 2 only")
        origin = self.origin or (0.0,) * self.d
        if len(origin) != self.d:
            raise ValueError("origin length must equal the dimension")
        object.__setattr__(self, "origin", tuple(float(v) for v in origin))

    @property
    def volume(self) -> float:
        if self.prototype == "cube":
            return self.lam**self.d
        return np.pi * (self.lam / 2.0) ** 2

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float) + self.lam / 2.0

    def contains(self, points) -> np.ndarray:
        """Closed-region membership, vectorized over rows of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        o = np.asarray(self.origin, dtype=float)
        tol = _tol(self.lam)
        if self.prototype == "cube":
            ok = np.all((pts >= o - tol) & (pts <= o + self.lam + tol), axis=1)
        else:
            ok = np.linalg.norm(pts - self.center, axis=1) <= self.lam / 2.0 + tol
        return ok

    def cube_inside(self, corners, side: float) -> np.ndarray:
        """True where the closed cube ``corner + [0, side]^d`` is inside the region."""
        lo = np.atleast_2d(np.asarray(corners, dtype=float))
        o = np.asarray(self.origin, dtype=float)
        tol = _tol(self.lam)
        if self.prototype == "cube":
            return np.all((lo >= o - tol) & (lo + side <= o + self.lam + tol), axis=1)
        far = np.maximum(np.abs(lo - self.center), np.abs(lo + side - self.center))
        return np.linalg.norm(far, axis=1) <= self.lam / 2.0 + tol


def scale_region(prototype: str, d: int, lam: float, origin=()) -> Region:
    """Build the scaled sampling region (prototype inflated by ``lam``)."""
    return Region(prototype=prototype, d=d, lam=lam, origin=origin)


@dataclass(frozen=True)
class Cell:
    """One partition cell: the region clipped to a half-open lattice cube."""

    key: tuple
    lo: np.ndarray
    span: np.ndarray
    complete: bool
    region: Region
    b: float

    def translate_mask(self, sites, offset) -> np.ndarray:
        """Membership of ``sites`` in this cell's congruent copy anchored at ``offset``.

        A site s belongs to the copy iff s - offset falls in the cell shifted
        to the origin, i.e. iff s - offset + lo lies in the cell itself.
        """
        rel = np.atleast_2d(np.asarray(sites, dtype=float)) - np.asarray(offset, dtype=float)
        mask = np.all((rel >= 0.0) & (rel < self.span), axis=1)
        if not self.complete and self.region.prototype == "disk":
            mask &= self.region.contains(rel + self.lo)
        return mask

    def contains(self, sites) -> np.ndarray:
        return self.translate_mask(sites, self.lo)


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint covering of the region by half-open cubes of side ``b``."""

    region: Region
    b: float
    keys: np.ndarray
    complete: np.ndarray
    cells: tuple
    _key_pos: dict = field(repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def complete_set(self) -> list:
        return [tuple(k) for k, c in zip(self.keys, self.complete) if c]

    @property
    def boundary_set(self) -> list:
        return [tuple(k) for k, c in zip(self.keys, self.complete) if not c]

    def cell(self, key) -> Cell:
        return self.cells[self._key_pos[tuple(int(v) for v in key)]]

    def assign(self, sites) -> np.ndarray:
        """Cell position (row into ``keys``) of every site; errors on outsiders."""
        pts = np.atleast_2d(np.asarray(sites, dtype=float))
        o = np.asarray(self.region.origin, dtype=float)
        raw = np.floor((pts - o) / self.b).astype(int)
        pos = np.empty(len(pts), dtype=int)
        for i, k in enumerate(raw):
            p = self._key_pos.get(tuple(k))
            if p is None:
                raise ValueError(f"site {i} at {pts[i]} lies outside the partition")
            pos[i] = p
        return pos


def partition(region: Region, b: float) -> BlockPartition:
    """Partition the region into half-open cubes of side ``b`` (Region invariant docs)."""
    if not 0 < b <= region.lam * (1 + 1e-12):
        raise ValueError(f"block side {b} must satisfy 0 < b <= lambda ({region.lam})")
    o = np.asarray(region.origin, dtype=float)
    per_axis = int(np.ceil(region.lam / b - 1e-12))
    candidates = np.array(list(itertools.product(range(per_axis), repeat=region.d)), dtype=int)
    lo = o + candidates * b
    if region.prototype == "disk":
        # keep cells whose cube overlaps the disk with positive area
        nearest = np.clip(region.center, lo, lo + b)
        keep = np.linalg.norm(nearest - region.center, axis=1) < region.lam / 2.0
        candidates, lo = candidates[keep], lo[keep]
    complete = region.cube_inside(lo, b)
    upper = o + region.lam
    cells = []
    for k, corner, comp in zip(candidates, lo, complete):
        span = np.full(region.d, b)
        if region.prototype == "cube":
            span = np.minimum(corner + b, upper) - corner
        cells.append(Cell(tuple(int(v) for v in k), corner, span, bool(comp), region, b))
    key_pos = {c.key: i for i, c in enumerate(cells)}
    return BlockPartition(region, b, candidates, complete, tuple(cells), key_pos)


@dataclass(frozen=True)
class TemplateIndexSet:
    """Integer-lattice anchors whose cube of side ``b`` sits inside the region."""

    positions: np.ndarray
    b: float

    def __len__(self) -> int:
        return len(self.positions)


def template_positions(region: Region, b: float) -> TemplateIndexSet:
    """All i in Z^d with the closed cube i + [0, b]^d inside the closed region."""
    if not 0 < b <= region.lam * (1 + 1e-12):
        raise ValueError(f"block side {b} must satisfy 0 < b <= lambda ({region.lam})")
    o = np.asarray(region.origin, dtype=float)
    tol = _tol(region.lam)
    lo_ax = np.ceil(o - tol).astype(int)
    hi_ax = np.floor(o + region.lam - b + tol).astype(int)
    if np.any(hi_ax < lo_ax):
        raise ValueError(f"no admissible blocks of side {b} in the region")
    grid = np.array(
        list(itertools.product(*[range(a, z + 1) for a, z in zip(lo_ax, hi_ax)])),
        dtype=int,
    )
    if region.prototype == "disk":
        grid = grid[region.cube_inside(grid.astype(float), b)]
    if len(grid) == 0:
        raise ValueError(f"no admissible blocks of side {b} in the region")
    return TemplateIndexSet(grid, b)


@dataclass(frozen=True)
class SiteIndex:
    """Uniform spatial hash: site ids binned by floor(site / cell_size)."""

    cell_size: float
    bins: dict

    def candidates(self, lo, hi) -> np.ndarray:
        """Site ids from every bin touching the box [lo, hi) (superset of the exact answer)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        b0 = np.floor(lo / self.cell_size).astype(int)
        b1 = np.floor(hi / self.cell_size).astype(int)
        parts = []
        for key in itertools.product(*[range(a, z + 1) for a, z in zip(b0, b1)]):
            ids = self.bins.get(key)
            if ids is not None:
                parts.append(ids)
        if not parts:
            return np.empty(0, dtype=int)
        return np.concatenate(parts)


def build_site_index(sites, cell_size: float, region: Region | None = None) -> SiteIndex:
    """Bin sites on a uniform grid of the given cell size."""
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    pts = np.atleast_2d(np.asarray(sites, dtype=float))
    if region is not None and len(pts):
        ok = region.contains(pts)
        if not np.all(ok):
            bad = int(np.nonzero(~ok)[0][0])
            raise ValueError(f"site {bad} at {pts[bad]} lies outside the region")
    bins: dict = {}
    if len(pts):
        coords = np.floor(pts / cell_size).astype(int)
        order = np.lexsort(coords.T[::-1])
        for i in order:
            bins.setdefault(tuple(coords[i]), []).append(int(i))
    return SiteIndex(cell_size, {k: np.asarray(sorted(v), dtype=int) for k, v in bins.items()})


def sites_in_translate(index: SiteIndex, sites, cell: Cell, offset) -> np.ndarray:
    """Ids (ascending) of sites in the cell's congruent copy anchored at ``offset``."""
    pts = np.atleast_2d(np.asarray(sites, dtype=float))
    off = np.asarray(offset, dtype=float)
    cand = index.candidates(off, off + cell.span)
    if len(cand) == 0:
        return cand
    mask = cell.translate_mask(pts[cand], off)
    return np.sort(cand[mask])
