"""Discrete John curves, chain decompositions and their verification."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .dyadic import DyadicCube, RasterDomain, WhitneyDecomposition, star

_NO_PRED = -9999


@dataclass
class JohnReport:
    center: tuple[float, ...]
    betaEstimate: float
    samples: list[tuple[tuple[float, ...], float, float]]
    lengthBoundRatio: float

    def to_dict(self) -> dict:
        worst = max(self.samples, key=lambda s: s[2])
        return {
            "center": list(self.center),
            "betaEstimate": self.betaEstimate,
            "lengthBoundRatio": self.lengthBoundRatio,
            "n_samples": len(self.samples),
            "worst_sample": {"point": list(worst[0]), "length": worst[1], "ratio": worst[2]},
        }


class CellGraph:
    """Cells of ``allowed`` joined to their ``3^n - 1`` neighbours.

    A move is allowed when every cell of the box spanned by its two endpoints
    is allowed, so the straight segment between the centers stays inside the
    open set.  Edge cost is ``step * mean(1/dist)`` over the endpoints.
    """

    def __init__(self, domain: RasterDomain, allowed: np.ndarray | None = None):
        self.domain = domain
        allowed = domain.occupancy if allowed is None else (allowed & domain.occupancy)
        self.allowed = allowed
        self.cells = np.argwhere(allowed)
        self.node = np.full(domain.shape, -1, dtype=np.int64)
        self.node[tuple(self.cells.T)] = np.arange(len(self.cells))
        n, h = domain.n, domain.h
        inv = np.zeros(domain.shape)
        inv[allowed] = 1.0 / domain.distance[allowed]
        padded = np.pad(allowed, 1)
        rows, cols, wts = [], [], []
        for off in itertools.product((-1, 0, 1), repeat=n):
            if not any(off) or tuple(off) < (0,) * n:
                continue
            # the box spanned by the move: every sub-offset must be allowed
            ok = allowed.copy()
            for sub in itertools.product(*[(0, o) if o else (0,) for o in off]):
                if not any(sub):
                    continue
                sl = tuple(slice(1 + s, 1 + s + dim) for s, dim in zip(sub, domain.shape))
                ok &= padded[sl]
            src = np.argwhere(ok)
            dst = src + np.asarray(off)
            a = self.node[tuple(src.T)]
            b = self.node[tuple(dst.T)]
            step = h * math.sqrt(sum(o * o for o in off))
            w = step * 0.5 * (inv[tuple(src.T)] + inv[tuple(dst.T)])
            rows += [a, b]
            cols += [b, a]
            wts += [w, w]
        m = len(self.cells)
        if rows:
            self.graph = sparse.csr_matrix(
                (np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
            )
        else:
            self.graph = sparse.csr_matrix((m, m))

    def tree(self, source: int) -> np.ndarray:
        _, pred = dijkstra(self.graph, directed=False, indices=source, return_predecessors=True)
        return pred

    def path(self, pred: np.ndarray, start: int, source: int) -> list[int]:
        out = [start]
        cur = start
        while cur != source:
            cur = int(pred[cur])
            if cur == _NO_PRED or cur < 0:
                raise ValueError("sample unreachable")
            out.append(cur)
        return out


def _curve_stats(domain: RasterDomain, cells: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Arc length of the center polyline and max of ``t / dist`` along it."""
    pts = (cells + np.asarray(domain.origin) + 0.5) * domain.h
    steps = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
    t = np.concatenate([[0.0], np.cumsum(steps)])
    d = domain.distance[tuple(cells.T)]
    return float(t[-1]), float((t / d).max()), pts


def _source_cell(domain: RasterDomain, x0) -> tuple[int, ...]:
    idx = domain.cell_of(x0)
    if not domain.is_occupied(idx):
        raise ValueError("center outside domain")
    return idx


def john_probe(
    domain: RasterDomain,
    x0: Sequence[float],
    samples: int,
    seed: int,
    include_boundary: bool = True,
) -> JohnReport:
    """Upper estimate of the John constant from discrete curves to ``x0``.

    Curves are shortest paths for the cost ``sum step / dist``.  Besides
    ``samples`` random cells, every cell touching the complement is probed when
    ``include_boundary`` is set, since those carry the worst ratios.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    src_cell = _source_cell(domain, x0)
    graph = CellGraph(domain)
    src = int(graph.node[src_cell])
    pred = graph.tree(src)
    rng = np.random.default_rng(seed)
    m = len(graph.cells)
    picks = set(rng.choice(m, size=min(samples, m), replace=False).tolist())
    if include_boundary:
        picks.update(graph.node[tuple(domain.boundary_cells.T)].tolist())
    diam = domain.diameter
    out = []
    for i in sorted(picks):
        path = graph.path(pred, i, src)
        length, worst, pts = _curve_stats(domain, graph.cells[path])
        out.append((tuple(float(v) for v in pts[0]), length, worst))
    length_ratio = max(s[1] for s in out) / diam
    beta = max(1.0, length_ratio, max(s[2] for s in out))
    center = tuple(float(v) for v in domain.cell_center(src_cell))
    return JohnReport(center, beta, out, length_ratio)


@dataclass
class Chain:
    terminal: DyadicCube
    sequence: list[DyadicCube]

    def __len__(self) -> int:
        return len(self.sequence)


def star_overlap_ratio(P: DyadicCube, Q: DyadicCube) -> float:
    """``|P* cap Q*| / max(|P*|, |Q*|)``."""
    A, B = star(P), star(Q)
    inter = np.clip(np.minimum(A.upper, B.upper) - np.maximum(A.lower, B.lower), 0, None)
    return float(np.prod(inter)) / max(A.measure, B.measure)


@dataclass(eq=False)
class ChainDecomposition:
    domain: RasterDomain
    whitney: WhitneyDecomposition
    center_cube: DyadicCube
    chains: dict[DyadicCube, Chain]
    shadows: dict[DyadicCube, list[DyadicCube]]
    rho: float
    min_overlap: float
    overlap_witness: tuple | None = None

    @property
    def total_chain_length(self) -> int:
        return sum(len(c) for c in self.chains.values())


def _face_steps(path_cells: np.ndarray) -> np.ndarray:
    """Insert intermediate cells so consecutive cells share a face."""
    out = [path_cells[0]]
    for nxt in path_cells[1:]:
        cur = out[-1].copy()
        for a in np.nonzero(nxt != cur)[0][:-1]:
            cur = cur.copy()
            cur[a] = nxt[a]
            out.append(cur)
        out.append(nxt)
    return np.array(out)


def _loop_erased(labels: Sequence[int]) -> list[int]:
    seq: list[int] = []
    pos: dict[int, int] = {}
    for q in labels:
        if seq and seq[-1] == q:
            continue
        if q in pos:
            cut = pos[q] + 1
            for r in seq[cut:]:
                del pos[r]
            del seq[cut:]
            continue
        pos[q] = len(seq)
        seq.append(q)
    return seq


def _midpoint_cell(domain: RasterDomain, Q: DyadicCube) -> tuple[int, ...]:
    sl = domain.cube_slices(Q)
    b = sl[0].stop - sl[0].start
    # lexicographically first of the cells around the midpoint
    return tuple(s.start + max(b // 2 - 1, 0) for s in sl)


def build_chains(domain: RasterDomain, W: WhitneyDecomposition, x0: Sequence[float]) -> ChainDecomposition:
    """Chains of Whitney cubes read off discrete John curves to ``x0``.

    Curves run through cells covered by ``W`` only.  Diagonal moves are split
    into face moves, so consecutive chain cubes always share part of a face;
    revisits are loop-erased so chains have no duplicates.
    """
    src_cell = _source_cell(domain, x0)
    covered = W.labels >= 0
    if not covered[src_cell]:
        raise ValueError("the Whitney cube containing x0 does not exist")
    graph = CellGraph(domain, covered)
    src = int(graph.node[src_cell])
    pred = graph.tree(src)
    q0_idx = int(W.labels[src_cell])
    Q0 = W.cubes[q0_idx]
    chains: dict[DyadicCube, Chain] = {}
    rho = 1.0
    min_overlap = math.inf
    witness = None
    for qi, Q in enumerate(W.cubes):
        if qi == q0_idx:
            chains[Q] = Chain(Q, [Q])
            continue
        start = int(graph.node[_midpoint_cell(domain, Q)])
        path = graph.cells[graph.path(pred, start, src)]
        _, worst, _ = _curve_stats(domain, path)
        rho = max(rho, worst)
        fine = _face_steps(path)
        labels = W.labels[tuple(fine.T)]
        seq = _loop_erased([int(x) for x in labels if x >= 0])
        if seq[0] != qi or seq[-1] != q0_idx:
            raise ValueError(f"chain construction failed: endpoints {seq[0]}..{seq[-1]} for cube {qi}")
        cubes = [W.cubes[i] for i in reversed(seq)]
        for a, b in zip(cubes, cubes[1:]):
            r = star_overlap_ratio(a, b)
            if r <= 0:
                raise ValueError(f"chain construction failed: stars of {a} and {b} do not overlap")
            if r < min_overlap:
                min_overlap, witness = r, (a, b)
        chains[Q] = Chain(Q, cubes)
    shadows: dict[DyadicCube, list[DyadicCube]] = {R: [] for R in W.cubes}
    for Q, ch in chains.items():
        for R in ch.sequence:
            shadows[R].append(Q)
    if min_overlap == math.inf:
        min_overlap = 1.0
    return ChainDecomposition(domain, W, Q0, chains, shadows, rho, min_overlap, witness)


@dataclass
class ChainConditionReport:
    p: float
    tau: int
    sigma: float
    shadowRadiusConstant: float
    overlapConstant: float
    perCondition: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(c["pass"] for c in self.perCondition.values())

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "tau": self.tau,
            "sigma": self.sigma,
            "shadowRadiusConstant": self.shadowRadiusConstant,
            "overlapConstant": self.overlapConstant,
            "perCondition": self.perCondition,
        }


def _cube_id(Q: DyadicCube) -> list:
    return [Q.level, list(Q.anchor)]


def verify_chains(cd: ChainDecomposition, p: float) -> ChainConditionReport:
    """Measure tau, sigma, the shadow-ball constant and the star overlap constant."""
    if not p > 1:
        raise ValueError("exponent out of range")
    dom = cd.domain
    tau1, w1 = 0, None
    tau2, w2 = 0, None
    dup_witness = None
    for Q, ch in cd.chains.items():
        if len(set(ch.sequence)) != len(ch.sequence) and dup_witness is None:
            dup_witness = _cube_id(Q)
        counts: dict[int, int] = {}
        for R in ch.sequence:
            if R.level - Q.level > tau1:
                tau1, w1 = R.level - Q.level, (_cube_id(Q), _cube_id(R))
            counts[R.level] = counts.get(R.level, 0) + 1
        j, c = max(counts.items(), key=lambda kv: kv[1])
        need = math.ceil(math.log2(c)) if c > 1 else 0
        if need > tau2:
            tau2, w2 = need, (_cube_id(Q), j, c)
    tau = max(tau1, tau2, 0)

    # transpose identity, checked both ways
    transpose_ok = True
    t_witness = None
    for R, shadow in cd.shadows.items():
        for Q in shadow:
            if R not in cd.chains[Q].sequence:
                transpose_ok, t_witness = False, (_cube_id(R), _cube_id(Q))
    n_pairs_chain = sum(len(set(c.sequence)) for c in cd.chains.values())
    n_pairs_shadow = sum(len(s) for s in cd.shadows.values())
    transpose_ok &= n_pairs_chain == n_pairs_shadow

    sigma, s_witness = 0.0, None
    c_std, c_witness = 0.0, None
    for R, shadow in cd.shadows.items():
        if not shadow:
            continue
        j = R.level
        k = np.array([Q.level for Q in shadow])
        meas = np.array([Q.measure for Q in shadow])
        ok = k >= j - tau
        total = float((meas[ok] * (tau + 1 + k[ok] - j) ** p).sum()) / R.measure
        if total > sigma:
            sigma, s_witness = total, _cube_id(R)
        y = _boundary_foot(dom, R.center)
        lo = np.array([Q.lower for Q in shadow])
        hi = lo + np.array([Q.side for Q in shadow])[:, None]
        far = np.sqrt((np.maximum(np.abs(lo - y), np.abs(hi - y)) ** 2).sum(axis=1)).max()
        C = float(far) / R.side
        if C > c_std:
            c_std, c_witness = C, _cube_id(R)

    overlap_ok = cd.min_overlap > 0
    per = {
        "condition1": {"pass": True, "tau": tau1, "witness": w1},
        "condition2": {"pass": True, "tau": tau2, "witness": w2},
        "condition3": {"pass": bool(math.isfinite(sigma)), "sigma": sigma, "witness": s_witness},
        "no_duplicates": {"pass": dup_witness is None, "witness": dup_witness},
        "transpose": {"pass": bool(transpose_ok), "witness": t_witness},
        "shadow_ball": {"pass": bool(math.isfinite(c_std)), "C": c_std, "witness": c_witness},
        "overlap": {
            "pass": bool(overlap_ok),
            "c_n": cd.min_overlap,
            "witness": [_cube_id(q) for q in cd.overlap_witness] if cd.overlap_witness else None,
        },
    }
    # re-check (1) and (2) against the chosen tau so a fail would carry its witness
    for Q, ch in cd.chains.items():
        for R in ch.sequence:
            if Q.side > 2 ** tau * R.side:
                per["condition1"] = {"pass": False, "tau": tau, "witness": (_cube_id(Q), _cube_id(R))}
    return ChainConditionReport(p, tau, sigma, c_std, cd.min_overlap, per)


def _boundary_foot(dom: RasterDomain, x: np.ndarray) -> np.ndarray:
    """Closest point to ``x`` on the nearest complement cell."""
    c = dom.nearest_complement_center(x)
    h = dom.h
    return np.clip(x, c - h / 2, c + h / 2)
