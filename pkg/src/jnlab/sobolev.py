"""Gradients and Sobolev-Poincaré quotients on rasterized domains."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jnp import GridFunction, safe_ratio, weak_norm_opt_c

# relative distance to an exponent boundary that triggers a report flag
BOUNDARY_MARGIN = 0.05
_PAIR_BLOCK = 2048


@dataclass
class QuotientReport:
    q: float
    qStar: float
    delta: float | None
    lhs: float
    rhs: float
    quotient: float
    infinite: bool = False
    flags: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "qStar": self.qStar,
            "delta": self.delta,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "quotient": self.quotient,
            "infinite": self.infinite,
            "flags": list(self.flags),
            "details": dict(self.details),
        }


def sobolev_exponent(q: float, n: int) -> float:
    if not (1 <= q < n):
        raise ValueError(f"Sobolev exponent undefined for q={q!r}, n={n}: need 1 <= q < n")
    return n * q / (n - q)


def fractional_exponent(q: float, delta: float, n: int) -> float:
    if not (0 < delta < 1):
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    if not (1 < q < n / delta):
        raise ValueError(f"fractional exponent needs 1 < q < n/delta = {n / delta!r}, got q={q!r}")
    return n * q / (n - delta * q)


def gradient(f: GridFunction) -> np.ndarray:
    """Per-axis difference quotients on the occupied cells, shape ``(cells, n)``.

    Forward difference when the next cell is occupied, backward when only the
    previous one is, zero when neither is.  Rows follow ``occupied_index``.
    """
    dom = f.domain
    occ, V, h = dom.occupancy, f.values, dom.h
    idx = tuple(dom.occupied_index.T)
    out = np.zeros((len(dom.occupied_index), dom.n))
    for a in range(dom.n):
        fwd_ok = np.zeros_like(occ)
        bwd_ok = np.zeros_like(occ)
        fwd = np.zeros(V.shape)
        bwd = np.zeros(V.shape)
        lo = [slice(None)] * dom.n
        hi = [slice(None)] * dom.n
        lo[a], hi[a] = slice(None, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        fwd_ok[lo] = occ[lo] & occ[hi]
        fwd[lo] = V[hi] - V[lo]
        bwd_ok[hi] = occ[hi] & occ[lo]
        bwd[hi] = V[hi] - V[lo]
        g = np.where(fwd_ok, fwd, np.where(bwd_ok, bwd, 0.0)) / h
        out[:, a] = g[idx]
    return out


def _gradient_energy(f: GridFunction, q: float) -> float:
    g = np.linalg.norm(gradient(f), axis=1)
    return float((g ** q).sum()) * f.domain.cell_volume


def poincare_quotient(f: GridFunction, q: float) -> QuotientReport:
    """``int |f - f_G|^{q*}`` against ``(int |grad f|^q)^{q*/q}``."""
    n = f.domain.n
    qs = sobolev_exponent(q, n)
    v = f.occupied_values
    lhs = float((np.abs(v - f.mean()) ** qs).sum()) * f.domain.cell_volume
    rhs = _gradient_energy(f, q) ** (qs / q)
    quot, inf = safe_ratio(lhs, rhs)
    return QuotientReport(q, qs, None, lhs, rhs, quot, inf)


def weak_poincare_quotient(f: GridFunction, q: float) -> QuotientReport:
    n = f.domain.n
    qs = sobolev_exponent(q, n)
    c, lhs = weak_norm_opt_c(f, qs)
    rhs = _gradient_energy(f, q) ** (qs / q)
    quot, inf = safe_ratio(lhs, rhs)
    return QuotientReport(q, qs, None, lhs, rhs, quot, inf, details={"c": c})


def _pair_terms(X: np.ndarray, v: np.ndarray, i: np.ndarray, j: np.ndarray, s: float, q: float) -> np.ndarray:
    r = np.linalg.norm(X[i] - X[j], axis=1)
    return np.abs(v[i] - v[j]) ** q / r ** s


def fractional_double_sum(f: GridFunction, q: float, delta: float) -> float:
    """Exact ``sum_{x != y} |f(x) - f(y)|^q / |x - y|^(n + delta q)`` times cell volume squared."""
    dom = f.domain
    X = dom.occupied_centers
    v = f.occupied_values
    m = len(v)
    s = dom.n + delta * q
    total = 0.0
    for start in range(0, m, _PAIR_BLOCK):
        rows = np.arange(start, min(start + _PAIR_BLOCK, m))
        diff = np.abs(v[rows, None] - v[None, :]) ** q
        r = np.sqrt(((X[rows, None, :] - X[None, :, :]) ** 2).sum(axis=2))
        r[np.arange(len(rows)), rows] = np.inf
        total += float((diff / r ** s).sum())
    return total * dom.cell_volume ** 2


def fractional_pair_estimate(f: GridFunction, q: float, delta: float, pairBudget: int, seed: int) -> float:
    """Unbiased estimate of :func:`fractional_double_sum` from ``pairBudget`` ordered pairs.

    Pairs are drawn uniformly without replacement from the ``m(m-1)`` ordered
    off-diagonal pairs; the sample mean is scaled by ``m(m-1)``.
    """
    dom = f.domain
    X = dom.occupied_centers
    v = f.occupied_values
    m = len(v)
    N = m * (m - 1)
    k = min(int(pairBudget), N)
    rng = np.random.default_rng(seed)
    flat = rng.choice(N, size=k, replace=False)
    i = flat // (m - 1)
    j = flat % (m - 1)
    j = j + (j >= i)
    terms = _pair_terms(X, v, i, j, dom.n + delta * q, q)
    return float(terms.mean()) * N * dom.cell_volume ** 2


def fractional_weak_quotient(
    f: GridFunction, q: float, delta: float, pairBudget: int = 10**6, seed: int = 0
) -> QuotientReport:
    """Weak fractional Sobolev-Poincaré quotient.

    The left side is the optimal-constant weak norm at ``p = nq / (n - delta q)``;
    the right side is the fractional double sum raised to ``p / q``.
    """
    dom = f.domain
    n = dom.n
    p = fractional_exponent(q, delta, n)
    if pairBudget < 1:
        raise ValueError("pairBudget must be >= 1")
    flags = []
    if q < 1 + BOUNDARY_MARGIN or q > (1 - BOUNDARY_MARGIN) * n / delta:
        flags.append("near exponent boundary")
    m = len(f.occupied_values)
    if m < 2:
        base, method = 0.0, "exact"
    elif m * m <= pairBudget:
        base, method = fractional_double_sum(f, q, delta), "exact"
    else:
        base, method = fractional_pair_estimate(f, q, delta, pairBudget, seed), "sampled"
    c, lhs = weak_norm_opt_c(f, p)
    rhs = base ** (p / q)
    quot, inf = safe_ratio(lhs, rhs)
    details = {"c": c, "pStar": p, "doubleSum": base, "method": method, "seed": seed}
    return QuotientReport(q, p, delta, lhs, rhs, quot, inf, flags, details)


__all__ = [
    "QuotientReport",
    "fractional_double_sum",
    "fractional_exponent",
    "fractional_pair_estimate",
    "fractional_weak_quotient",
    "gradient",
    "poincare_quotient",
    "sobolev_exponent",
    "weak_poincare_quotient",
]
