"""Domain and function generators for the experiment corpus."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import shapely
from shapely.geometry import Polygon

from ..dyadic import RasterDomain, rasterize
from ..jnp import GridFunction

DOMAIN_KINDS = ("square", "rect", "lshape", "koch", "cusp", "rooms", "ball")
FUNCTION_KINDS = (
    "constant", "halfIndicator", "quadrant", "linear", "logDist", "distPow", "radialPow", "haarSum",
)
JOHN_KINDS = frozenset({"square", "rect", "lshape", "koch", "ball"})

# positional parameter names accepted in "kind:a,b" strings
_DOMAIN_PARAMS = {
    "square": ("side",),
    "rect": ("width", "height"),
    "lshape": (),
    "koch": ("depth",),
    "cusp": ("k",),
    "rooms": ("count", "neckWidth"),
    "ball": ("radius", "cx", "cy"),
}
_DOMAIN_DEFAULTS = {
    "square": {"side": 1.0},
    "rect": {"width": 1.0, "height": 0.5},
    "lshape": {},
    "koch": {"depth": 3},
    "cusp": {"k": 2.0},
    "rooms": {"count": 2, "neckWidth": 0.125},
    "ball": {"radius": 0.5, "cx": 0.5, "cy": 0.5},
}
_FUNCTION_PARAMS = {
    "constant": ("v",),
    "halfIndicator": ("axis",),
    "quadrant": (),
    "linear": ("axis",),
    "logDist": ("cap",),
    "distPow": ("alpha",),
    "radialPow": ("beta", "cx", "cy"),
    "haarSum": ("depth", "seed"),
}
_FUNCTION_DEFAULTS = {
    "constant": {"v": 1.0},
    "halfIndicator": {"axis": 0},
    "quadrant": {},
    "linear": {"axis": 0},
    "logDist": {"cap": math.inf},
    "distPow": {"alpha": 0.5},
    "radialPow": {"beta": 0.5, "cx": 0.0, "cy": 0.0},
    "haarSum": {"depth": 3, "seed": 0},
}
_INT_PARAMS = {"depth", "count", "axis", "seed"}


def _parse_kind_string(text: str, table: dict, defaults: dict) -> tuple[str, dict]:
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind not in table:
        raise ValueError(f"unknown kind {kind!r}")
    params = dict(defaults[kind])
    if rest:
        for i, tok in enumerate(t for t in rest.split(",") if t.strip()):
            if "=" in tok:
                key, val = tok.split("=", 1)
                key = key.strip()
            else:
                if i >= len(table[kind]):
                    raise ValueError(f"too many parameters for {kind!r}")
                key, val = table[kind][i], tok
            if key not in table[kind]:
                raise ValueError(f"unknown parameter {key!r} for {kind!r}")
            params[key] = int(val) if key in _INT_PARAMS else float(val)
    return kind, params


def koch_polygon(depth: int, center=(0.5, 0.5), radius: float = 0.45) -> np.ndarray:
    """Vertices of the depth-``depth`` snowflake prefix, counter-clockwise."""
    angles = math.pi / 2 + np.array([0.0, 2.0, 4.0]) * math.pi / 3
    pts = np.stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)], axis=1)
    # counter-clockwise triangle; bumps point outward (to the right of each edge reversed)
    for _ in range(depth):
        new = []
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            d = (b - a) / 3
            p1, p3 = a + d, a + 2 * d
            # rotate d by -60 degrees so the bump points outward for a ccw polygon
            c, s = math.cos(-math.pi / 3), math.sin(-math.pi / 3)
            peak = p1 + np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])
            new += [a, p1, peak, p3]
        pts = np.array(new)
    return pts


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        merged = dict(_DOMAIN_DEFAULTS[self.kind])
        for key, val in self.params.items():
            if key not in merged and key not in _DOMAIN_PARAMS[self.kind]:
                raise ValueError(f"unknown parameter {key!r} for domain {self.kind!r}")
            merged[key] = val
        object.__setattr__(self, "params", merged)
        if self.kind == "koch" and int(merged["depth"]) < 0:
            raise ValueError("koch depth must be >= 0")
        if self.kind == "cusp" and not merged["k"] > 1:
            raise ValueError("cusp exponent k must be > 1")
        if self.kind == "rooms" and not (int(merged["count"]) >= 1 and 0 < merged["neckWidth"] <= 1):
            raise ValueError("rooms needs count >= 1 and 0 < neckWidth <= 1")

    @classmethod
    def parse(cls, text: str) -> "DomainSpec":
        kind, params = _parse_kind_string(text, _DOMAIN_PARAMS, _DOMAIN_DEFAULTS)
        return cls(kind, params)

    @classmethod
    def from_config(cls, node: Any) -> "DomainSpec":
        if isinstance(node, str):
            return cls.parse(node)
        node = dict(node)
        return cls(node.pop("kind"), node.pop("parameters", node))

    @property
    def n(self) -> int:
        return 2

    @property
    def name(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))

    @property
    def john(self) -> bool:
        if self.kind == "rooms":
            # necks shrinking to zero destroy the John property; a fixed neck keeps it
            return self.params["neckWidth"] >= 0.125
        return self.kind in JOHN_KINDS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parameters": dict(self.params)}

    def john_center(self) -> tuple[float, float]:
        """Default base point for John curves and chains: a deep interior point."""
        p = self.params
        if self.kind == "lshape":
            return (0.25, 0.25)
        if self.kind == "cusp":
            return (0.75, 0.0)
        if self.kind == "rooms":
            mid = (int(p["count"]) - 1) // 2
            return (mid * 1.25 + 0.5, 0.5)
        if self.kind == "ball":
            return (p["cx"], p["cy"])
        lo, hi = self.bbox()
        return tuple(float(x) for x in (lo + hi) / 2)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        if self.kind == "square":
            return np.zeros(2), np.full(2, p["side"])
        if self.kind == "rect":
            return np.zeros(2), np.array([p["width"], p["height"]])
        if self.kind in ("lshape", "koch"):
            return np.zeros(2), np.ones(2)
        if self.kind == "cusp":
            return np.array([0.0, -1.0]), np.array([1.0, 1.0])
        if self.kind == "rooms":
            m = int(p["count"])
            return np.zeros(2), np.array([m + (m - 1) * 0.25, 1.0])
        r = p["radius"]
        return np.array([p["cx"] - r, p["cy"] - r]), np.array([p["cx"] + r, p["cy"] + r])

    def contains(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        p = self.params
        if self.kind == "square":
            s = p["side"]
            return (x > 0) & (x < s) & (y > 0) & (y < s)
        if self.kind == "rect":
            return (x > 0) & (x < p["width"]) & (y > 0) & (y < p["height"])
        if self.kind == "lshape":
            sq = (x > 0) & (x < 1) & (y > 0) & (y < 1)
            return sq & ~((x > 0.5) & (y > 0.5))
        if self.kind == "cusp":
            return (x > 0) & (x < 1) & (np.abs(y) < np.power(np.clip(x, 0, None), p["k"]))
        if self.kind == "rooms":
            m, w, gap = int(p["count"]), p["neckWidth"], 0.25
            period = 1 + gap
            t = np.mod(x, period)
            inside = (x > 0) & (x < m + (m - 1) * gap) & (y > 0) & (y < 1)
            room = t < 1
            neck = np.abs(y - 0.5) < w / 2
            return inside & (room | neck)
        if self.kind == "ball":
            return (x - p["cx"]) ** 2 + (y - p["cy"]) ** 2 < p["radius"] ** 2
        if self.kind == "koch":
            poly = Polygon(koch_polygon(int(p["depth"])))
            return shapely.contains_xy(poly, x, y)
        raise AssertionError(self.kind)


def gen_domain(spec: DomainSpec | str, J: int) -> RasterDomain:
    if isinstance(spec, str):
        spec = DomainSpec.parse(spec)
    return rasterize(spec, J)


@dataclass(frozen=True)
class FunctionSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FUNCTION_KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}")
        merged = dict(_FUNCTION_DEFAULTS[self.kind])
        for key, val in self.params.items():
            if key not in merged:
                raise ValueError(f"unknown parameter {key!r} for function {self.kind!r}")
            merged[key] = val
        object.__setattr__(self, "params", merged)

    @classmethod
    def parse(cls, text: str) -> "FunctionSpec":
        kind, params = _parse_kind_string(text, _FUNCTION_PARAMS, _FUNCTION_DEFAULTS)
        return cls(kind, params)

    @classmethod
    def from_config(cls, node: Any) -> "FunctionSpec":
        if isinstance(node, str):
            return cls.parse(node)
        node = dict(node)
        return cls(node.pop("kind"), node.pop("parameters", node))

    @property
    def name(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parameters": dict(self.params)}


def _frame(domain: RasterDomain):
    """Bounding box of the occupied cells, used to normalize coordinates."""
    idx = domain.occupied_index
    lo = (idx.min(axis=0) + np.asarray(domain.origin)) * domain.h
    hi = (idx.max(axis=0) + 1 + np.asarray(domain.origin)) * domain.h
    return lo, hi


def _haar_sum(u: np.ndarray, depth: int, seed: int) -> np.ndarray:
    """Random combination of tensor Haar functions on [0, 1]^n up to ``depth`` levels."""
    rng = np.random.default_rng(seed)
    m, n = u.shape
    out = np.zeros(m)
    signs = [np.array(e) for e in np.ndindex(*(2,) * n) if any(e)]
    for j in range(depth):
        scale = 2 ** j
        cell = np.clip(np.floor(u * scale).astype(int), 0, scale - 1)
        frac = u * scale - cell
        half = np.where(frac < 0.5, 1.0, -1.0)
        coeffs = rng.normal(0.0, 2.0 ** (-j / 2), size=(scale,) * n + (len(signs),))
        c = coeffs[tuple(cell.T)]
        for t, e in enumerate(signs):
            out += c[:, t] * np.prod(np.where(e[None, :] == 1, half, 1.0), axis=1)
    return out


def gen_function(spec: FunctionSpec | str, domain: RasterDomain) -> GridFunction:
    """Evaluate a corpus function at the occupied cell centers.

    ``distPow`` and ``radialPow`` are singular; they are finite on the raster
    because the distance field is at least half a cell and radii are clamped
    to half a cell.
    """
    if isinstance(spec, str):
        spec = FunctionSpec.parse(spec)
    p = spec.params
    X = domain.occupied_centers
    d = domain.distance[tuple(domain.occupied_index.T)]
    lo, hi = _frame(domain)
    mid = (lo + hi) / 2
    k = spec.kind
    if k == "constant":
        vals = np.full(len(X), float(p["v"]))
    elif k == "halfIndicator":
        a = int(p["axis"])
        vals = (X[:, a] < mid[a]).astype(float)
    elif k == "quadrant":
        # +1 on the lower-left and upper-right quadrants, -1 on the others
        s = np.where(X < mid, 1.0, -1.0)
        vals = np.prod(s, axis=1)
    elif k == "linear":
        vals = X[:, int(p["axis"])].copy()
    elif k == "logDist":
        vals = np.minimum(np.log(1.0 / d), float(p["cap"]))
    elif k == "distPow":
        vals = d ** (-float(p["alpha"]))
    elif k == "radialPow":
        c = np.array([p["cx"], p["cy"]][: domain.n])
        r = np.maximum(np.linalg.norm(X - c, axis=1), domain.h / 2)
        vals = r ** (-float(p["beta"]))
    elif k == "haarSum":
        u = (X - lo) / (hi - lo)
        vals = _haar_sum(u, int(p["depth"]), int(p["seed"]))
    else:
        raise AssertionError(k)
    return GridFunction.from_occupied(domain, vals)
