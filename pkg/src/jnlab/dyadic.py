"""Dyadic cubes, rasterized domains and Whitney decompositions.

A domain is approximated by the level-``J`` dyadic cells whose centers satisfy
a membership predicate.  The open set ``G`` is the interior of the union of the
occupied closed cells; everything else (including the outside of the grid) is
the complement.  All geometric quantities below are measured against this
rasterized set, not against the analytic shape that produced it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree


class ShapeSpec(Protocol):
    """Anything with a bounding box and a vectorized membership predicate."""

    n: int

    def bbox(self) -> tuple[np.ndarray, np.ndarray]: ...

    def contains(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Closed dyadic cube ``prod_i [k_i 2^-j, (k_i + 1) 2^-j]``."""

    level: int
    anchor: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "anchor", tuple(int(k) for k in self.anchor))

    @property
    def n(self) -> int:
        return len(self.anchor)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def measure(self) -> float:
        return self.side ** self.n

    @property
    def diam(self) -> float:
        return math.sqrt(self.n) * self.side

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.anchor, dtype=float) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.anchor, dtype=float) + 0.5) * self.side

    def children(self) -> list["DyadicCube"]:
        base = [2 * k for k in self.anchor]
        return [
            DyadicCube(self.level + 1, tuple(b + e for b, e in zip(base, offs)))
            for offs in itertools.product((0, 1), repeat=self.n)
        ]

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(k >> 1 for k in self.anchor))

    def as_cube(self) -> "Cube":
        return Cube(tuple(self.center), self.side)

    def to_dict(self) -> dict:
        return {"level": self.level, "anchor": list(self.anchor)}


@dataclass(frozen=True)
class Cube:
    """Axis-parallel closed cube given by center and side length."""

    center: tuple[float, ...]
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("cube side must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def measure(self) -> float:
        return self.side ** self.n

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self.side / 2

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self.side / 2

    def dilate(self, lam: float) -> "Cube":
        return Cube(self.center, lam * self.side)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "side": self.side}


STAR_FACTOR = 9.0 / 8.0


def star(Q: DyadicCube | Cube) -> Cube:
    """The dilated cube ``(9/8) Q`` sharing the center of ``Q``."""
    if isinstance(Q, DyadicCube):
        Q = Q.as_cube()
    return Q.dilate(STAR_FACTOR)


@dataclass(frozen=True, eq=False)
class RasterDomain:
    """Open set approximated by occupied level-``J`` cells.

    ``origin`` is the level-``J`` anchor of the grid cell with index zero, so
    cell ``idx`` covers ``[(origin + idx) h, (origin + idx + 1) h]`` with
    ``h = 2^-J``.  ``distance`` holds ``dist(center, complement)`` on occupied
    cells and zero elsewhere.
    """

    J: int
    origin: tuple[int, ...]
    occupancy: np.ndarray
    distance: np.ndarray
    connected: bool
    name: str = ""

    @property
    def n(self) -> int:
        return self.occupancy.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.occupancy.shape

    @property
    def h(self) -> float:
        return 2.0 ** (-self.J)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def n_cells(self) -> int:
        return int(self.occupancy.sum())

    @property
    def measure(self) -> float:
        return self.n_cells * self.cell_volume

    def axis_coords(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        return (self.origin[axis] + np.arange(self.shape[axis]) + 0.5) * self.h

    def center_grids(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis_coords(a) for a in range(self.n)], indexing="ij")

    @cached_property
    def occupied_index(self) -> np.ndarray:
        """Grid indices of occupied cells, in lexicographic order, shape (m, n)."""
        return np.argwhere(self.occupancy)

    @cached_property
    def occupied_centers(self) -> np.ndarray:
        return (self.occupied_index + np.asarray(self.origin) + 0.5) * self.h

    def cell_of(self, x: Sequence[float]) -> tuple[int, ...]:
        """Grid index of the cell containing ``x`` (may lie outside the grid)."""
        return tuple(int(math.floor(xi / self.h)) - o for xi, o in zip(x, self.origin))

    def in_grid(self, idx: Sequence[int]) -> bool:
        return all(0 <= i < s for i, s in zip(idx, self.shape))

    def is_occupied(self, idx: Sequence[int]) -> bool:
        return self.in_grid(idx) and bool(self.occupancy[tuple(idx)])

    def cell_center(self, idx: Sequence[int]) -> np.ndarray:
        return (np.asarray(idx) + np.asarray(self.origin) + 0.5) * self.h

    def cube_slices(self, Q: DyadicCube) -> tuple[slice, ...] | None:
        """Grid slices covered by ``Q``, or None if ``Q`` leaves the grid or is finer than a cell."""
        m = self.J - Q.level
        if m < 0:
            return None
        b = 1 << m
        out = []
        for k, o, s in zip(Q.anchor, self.origin, self.shape):
            start = k * b - o
            if start < 0 or start + b > s:
                return None
            out.append(slice(start, start + b))
        return tuple(out)

    def contains_cube(self, Q: DyadicCube) -> bool:
        sl = self.cube_slices(Q)
        return sl is not None and bool(self.occupancy[sl].all())

    def box_weights(self, lower, upper) -> tuple[tuple[slice, ...], np.ndarray] | None:
        """Cells meeting the open box ``(lower, upper)`` and their overlap fractions.

        Returns grid slices and an array of per-cell overlap volumes in units of a
        cell volume, or None when the box pokes out of the grid.
        """
        slices = []
        weights = []
        for a in range(self.n):
            lo = lower[a] / self.h - self.origin[a]
            hi = upper[a] / self.h - self.origin[a]
            i0 = int(math.floor(lo))
            i1 = int(math.ceil(hi))
            if i0 < 0 or i1 > self.shape[a]:
                return None
            idx = np.arange(i0, i1)
            w = np.minimum(idx + 1, hi) - np.maximum(idx, lo)
            keep = w > 1e-12
            idx, w = idx[keep], w[keep]
            slices.append(slice(int(idx[0]), int(idx[-1]) + 1))
            weights.append(w)
        W = weights[0]
        for w in weights[1:]:
            W = np.multiply.outer(W, w)
        return tuple(slices), W

    def contains_box(self, lower, upper) -> bool:
        """True when every cell meeting the open box is occupied."""
        bw = self.box_weights(lower, upper)
        return bw is not None and bool(self.occupancy[bw[0]].all())

    @cached_property
    def _boundary_tree(self) -> cKDTree:
        # complement cells touching G (3^n stencil); the grid is padded by one
        # empty ring so cells just outside the grid are included
        padded = np.pad(self.occupancy, 1)
        grown = ndimage.binary_dilation(padded, structure=np.ones((3,) * self.n, bool))
        idx = np.argwhere(grown & ~padded) - 1
        return cKDTree((idx + np.asarray(self.origin) + 0.5) * self.h)

    def dist_at(self, points: np.ndarray) -> np.ndarray:
        """Distance to the complement for arbitrary points, on the same scale as ``distance``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d, _ = self._boundary_tree.query(pts)
        return d - self.h / 2

    def nearest_complement_center(self, x: np.ndarray) -> np.ndarray:
        """Center of the nearest complement cell (ties go to the lexicographically first)."""
        tree = self._boundary_tree
        d, _ = tree.query(x)
        cand = tree.query_ball_point(x, d * (1 + 1e-12) + 1e-15)
        pts = tree.data[cand]
        order = np.lexsort(pts.T[::-1])
        return pts[order[0]]

    @cached_property
    def diameter(self) -> float:
        """Diameter of the union of occupied closed cells."""
        corners = np.array(list(itertools.product((-0.5, 0.5), repeat=self.n)))
        pts = (self.occupied_centers[:, None, :] + corners[None] * self.h).reshape(-1, self.n)
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
        if len(pts) > 4000:
            # hull of a raster is small; this is only a guard
            pts = pts[:: len(pts) // 4000 + 1]
        diffs = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(-1)).max())

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """Grid indices of occupied cells with an unoccupied face neighbour."""
        padded = np.pad(self.occupancy, 1)
        face = ndimage.generate_binary_structure(self.n, 1)
        interior = ndimage.binary_erosion(padded, structure=face)
        return np.argwhere((padded & ~interior)[(slice(1, -1),) * self.n])

    def with_distance(self, distance: np.ndarray) -> "RasterDomain":
        return RasterDomain(self.J, self.origin, self.occupancy, distance, self.connected, self.name)


def _distance_field(occupancy: np.ndarray, h: float) -> np.ndarray:
    padded = np.pad(occupancy, 1)
    edt = ndimage.distance_transform_edt(padded, sampling=h)[(slice(1, -1),) * occupancy.ndim]
    # distance from a center to the nearest complement cell face, not its center
    return np.where(occupancy, edt - h / 2, 0.0)


def is_connected(occupancy: np.ndarray) -> bool:
    face = ndimage.generate_binary_structure(occupancy.ndim, 1)
    _, count = ndimage.label(occupancy, structure=face)
    return count == 1


def raster_from_occupancy(occupancy: np.ndarray, J: int, origin: Sequence[int], name: str = "") -> RasterDomain:
    occupancy = np.asarray(occupancy, dtype=bool)
    if not occupancy.any():
        raise ValueError("empty domain")
    if occupancy.all():
        raise ValueError("not a proper subset")
    dist = _distance_field(occupancy, 2.0 ** (-J))
    return RasterDomain(J, tuple(int(o) for o in origin), occupancy, dist, is_connected(occupancy), name)


def rasterize(spec: ShapeSpec, J: int) -> RasterDomain:
    """Occupy the level-``J`` cells whose centers satisfy ``spec.contains``.

    The grid covers the spec's bounding box plus one ring of cells, so that a
    shape filling its box still has a nonempty complement inside the grid.
    """
    if J < 1:
        raise ValueError("resolution J must be >= 1")
    lo, hi = (np.asarray(v, dtype=float) for v in spec.bbox())
    scale = 2 ** J
    a0 = np.floor(lo * scale).astype(int) - 1
    a1 = np.ceil(hi * scale).astype(int) + 1
    axes = [(np.arange(s, e) + 0.5) / scale for s, e in zip(a0, a1)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    occ = np.asarray(spec.contains(pts), dtype=bool).reshape(grids[0].shape)
    return raster_from_occupancy(occ, J, a0, getattr(spec, "name", ""))


@dataclass(frozen=True, eq=False)
class WhitneyDecomposition:
    domain: RasterDomain
    cubes: list[DyadicCube]
    residual: float
    labels: np.ndarray = field(repr=False)

    @cached_property
    def byLevel(self) -> dict[int, list[DyadicCube]]:
        out: dict[int, list[DyadicCube]] = {}
        for Q in self.cubes:
            out.setdefault(Q.level, []).append(Q)
        return out

    @cached_property
    def index(self) -> dict[DyadicCube, int]:
        return {Q: i for i, Q in enumerate(self.cubes)}

    def cube_at(self, x: Sequence[float]) -> int:
        """Index of the cube whose cell contains ``x``; -1 when uncovered."""
        idx = self.domain.cell_of(x)
        if not self.domain.in_grid(idx):
            return -1
        return int(self.labels[idx])

    @property
    def covered_measure(self) -> float:
        return float(sum(Q.measure for Q in self.cubes))


def _block_view(a: np.ndarray, b: int) -> np.ndarray:
    shape = []
    for s in a.shape:
        shape += [s // b, b]
    return a.reshape(shape)


def _block_axes(n: int) -> tuple[int, ...]:
    return tuple(range(1, 2 * n, 2))


def aligned_padding(domain: RasterDomain, b: int, shift: Sequence[int] | None = None):
    """Pad widths making the grid a union of aligned size-``b`` blocks.

    ``shift`` translates the dyadic lattice by whole cells.  Returns the pad
    widths and the level-``J`` anchor of the padded grid's first cell.
    """
    shift = shift or (0,) * domain.n
    pads, origin = [], []
    for o, s, t in zip(domain.origin, domain.shape, shift):
        start = ((o - t) // b) * b + t
        stop = -((-(o + s - t)) // b) * b + t
        pads.append((o - start, stop - o - s))
        origin.append(start)
    return pads, tuple(origin)


def whitney_predicate_levels(domain: RasterDomain, ratio: float = 1.0):
    """Per level: (block size, anchors origin, admissible mask, selection mask).

    A cube is a Whitney candidate when all its cells are occupied and its
    diameter is at most the lower estimate of ``dist(Q, complement)``: the
    minimum of the cell-center distances in ``Q`` minus half a cell diagonal.
    """
    n, h = domain.n, domain.h
    m_max = int(math.floor(math.log2(max(domain.shape))))
    b_max = 1 << m_max
    pads, origin = aligned_padding(domain, b_max)
    occ = np.pad(domain.occupancy, pads)
    dist = np.pad(domain.distance, pads)
    half_diag = math.sqrt(n) * h / 2
    out = []
    axes = _block_axes(n)
    for m in range(m_max, -1, -1):
        b = 1 << m
        adm = _block_view(occ, b).all(axis=axes)
        dmin = _block_view(dist, b).min(axis=axes) - half_diag
        sel = adm & (ratio * math.sqrt(n) * b * h <= dmin)
        out.append((b, origin, pads, adm, sel))
    return out


def whitney(domain: RasterDomain, ratio: float = 1.0) -> WhitneyDecomposition:
    """Maximal dyadic cubes (level <= J) inside ``G`` with ``ratio * diam(Q) <= dist(Q, dG)``.

    ``ratio = 1`` is the standard decomposition.  Smaller ratios give looser
    families that reach closer to the boundary; they are used only as extra
    candidates for local partitions.  Selection runs top-down over the dyadic tree; cells no admissible cube can
    cover are accounted for in ``residual``.
    """
    n, J = domain.n, domain.J
    levels = whitney_predicate_levels(domain, ratio)
    _, origin, pads, _, _ = levels[0]
    covered = np.zeros(tuple(s + p0 + p1 for s, (p0, p1) in zip(domain.shape, pads)), bool)
    labels = np.full(covered.shape, -1, dtype=np.int64)
    cubes: list[DyadicCube] = []
    for b, _, _, _, sel in levels:
        free = ~_block_view(covered, b).any(axis=_block_axes(n))
        pick = sel & free
        if not pick.any():
            continue
        level = J - int(math.log2(b))
        blocks = np.argwhere(pick)
        lab = _block_view(labels, b)
        for blk in blocks:
            anchor = tuple((int(i) * b + o) // b for i, o in zip(blk, origin))
            sl = []
            for i in blk:
                sl += [int(i), slice(None)]
            lab[tuple(sl)] = len(cubes)
            cubes.append(DyadicCube(level, anchor))
        covered = labels >= 0
    inner = tuple(slice(p0, p0 + s) for (p0, _), s in zip(pads, domain.shape))
    labels = labels[inner]
    uncovered = domain.occupancy & (labels < 0)
    residual = float(uncovered.sum()) * domain.cell_volume
    return WhitneyDecomposition(domain, cubes, residual, labels)


@dataclass
class WhitneyCheck:
    """Outcome of checking a decomposition cell-exactly and at star sample points."""

    n_cubes: int
    disjoint: bool
    contained: bool
    n_samples: int
    min_ratio: float  # min over samples of dist(x, dG) / diam(Q)
    max_ratio: float
    max_star_overlap: int
    coverage_gap: float  # |G| - sum |Q| - residual
    witness: dict | None = None

    @property
    def dist_bounds_ok(self) -> bool:
        return self.min_ratio >= 0.75 and self.max_ratio <= 6.0

    @property
    def ok(self) -> bool:
        return self.disjoint and self.contained and self.dist_bounds_ok and abs(self.coverage_gap) < 1e-12


def star_sample_points(Q: DyadicCube, domain: RasterDomain) -> np.ndarray:
    """The 3^n lattice of the star plus every cell center inside it."""
    S = star(Q)
    lo, hi = S.lower, S.upper
    lattice = np.array(list(itertools.product(*[(l, (l + u) / 2, u) for l, u in zip(lo, hi)])))
    h = domain.h
    axes = []
    for a in range(domain.n):
        c = (np.arange(math.floor(lo[a] / h), math.ceil(hi[a] / h)) + 0.5) * h
        axes.append(c[(c >= lo[a]) & (c <= hi[a])])
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    return np.vstack([lattice, centers])


def star_overlap_max(domain: RasterDomain, cubes: Sequence[Cube]) -> int:
    """Max number of open cubes containing a point of the half-cell sample lattice."""
    n, h = domain.n, domain.h
    sub = h / 2
    shape = tuple(2 * s for s in domain.shape)
    count = np.zeros(shape, dtype=np.int32)
    base = np.asarray(domain.origin) * h
    for C in cubes:
        sl = []
        for a in range(n):
            # sample x_m = base + (m + 1/2) sub, strictly inside (lo, hi)
            lo = (C.lower[a] - base[a]) / sub - 0.5
            hi = (C.upper[a] - base[a]) / sub - 0.5
            m0 = max(int(math.floor(lo)) + 1, 0)
            m1 = min(int(math.ceil(hi)), shape[a])
            sl.append(slice(m0, max(m0, m1)))
        count[tuple(sl)] += 1
    return int(count.max()) if count.size else 0


def check_whitney(W: WhitneyDecomposition) -> WhitneyCheck:
    dom = W.domain
    paint = np.zeros(dom.shape, dtype=np.int32)
    contained = True
    for Q in W.cubes:
        sl = dom.cube_slices(Q)
        if sl is None or not dom.occupancy[sl].all():
            contained = False
            continue
        paint[sl] += 1
    disjoint = bool(paint.max(initial=0) <= 1)
    pts, diam = [], []
    for Q in W.cubes:
        P = star_sample_points(Q, dom)
        pts.append(P)
        diam.append(np.full(len(P), Q.diam))
    if pts:
        P = np.vstack(pts)
        D = np.concatenate(diam)
        ratio = dom.dist_at(P) / D
        i_min, i_max = int(ratio.argmin()), int(ratio.argmax())
        min_r, max_r = float(ratio[i_min]), float(ratio[i_max])
        witness = {"min_point": P[i_min].tolist(), "max_point": P[i_max].tolist()}
        n_samples = len(P)
    else:
        min_r, max_r, witness, n_samples = math.inf, 0.0, None, 0
    overlap = star_overlap_max(dom, [star(Q) for Q in W.cubes])
    gap = dom.measure - W.covered_measure - W.residual
    return WhitneyCheck(len(W.cubes), disjoint, contained, n_samples, min_r, max_r, overlap, gap, witness)


@dataclass
class AikawaReport:
    s: float
    trials: list[tuple[tuple[float, ...], float, float, float]]
    supRatio: float
    epsilon: float


def aikawa_probe(domain: RasterDomain, s: float, trials: int, seed: int) -> AikawaReport:
    """Riemann sums of ``dist(x, dG)^(s-n)`` over balls centered at boundary cells.

    Radii are drawn log-uniformly from ``[4h, diam(G)]``.
    """
    n = domain.n
    if s >= n:
        raise ValueError("exponent must be < n")
    if s <= 0:
        raise ValueError("exponent must be positive")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    bcells = domain.boundary_cells
    centers = domain.occupied_centers
    weights = domain.distance[tuple(domain.occupied_index.T)] ** (s - n) * domain.cell_volume
    tree = cKDTree(centers)
    r_lo = 4 * domain.h
    r_hi = max(domain.diameter, r_lo)
    out = []
    for _ in range(trials):
        y = domain.cell_center(bcells[rng.integers(len(bcells))])
        r = float(math.exp(rng.uniform(math.log(r_lo), math.log(r_hi))))
        idx = tree.query_ball_point(y, r)
        val = float(weights[idx].sum()) if idx else 0.0
        out.append((tuple(float(v) for v in y), r, val, val / r ** s))
    sup = max(t[3] for t in out)
    return AikawaReport(s, out, sup, n - s)
