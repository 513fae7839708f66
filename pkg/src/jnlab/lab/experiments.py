"""Experiment pipelines and their serialized reports."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import dataclass
from typing import Any, Callable

from .. import __version__
from ..dyadic import check_whitney, whitney
from ..jnp import (
    DEFAULT_LAMBDA,
    JNParams,
    jn_global_dyadic,
    jn_local,
    local_to_global_ratio,
    weak_type_ratio,
)
from ..john import build_chains, john_probe, verify_chains
from ..sobolev import fractional_weak_quotient, poincare_quotient, weak_poincare_quotient
from .corpus import DomainSpec, FunctionSpec, gen_domain, gen_function

SCHEMA = "jnlab.report/1"
PIPELINES = ("whitney", "chains", "jn", "weak", "l2g", "poincare", "fractional", "necessity-sweep")
JOHN_CORPUS = ("square", "rect", "lshape", "koch:3", "ball")
DEFAULT_FUNCTIONS = ("quadrant", "logDist", "haarSum")

_DEFAULTS: dict[str, Any] = {
    "J": 6,
    "p": [2.0],
    "q": 1.0,
    "delta": 0.5,
    "lambda": DEFAULT_LAMBDA,
    "N": 8,
    "seed": 0,
    "pairBudget": 10**4,
    "johnSamples": 64,
    "cuspK": [2, 3, 4, 5],
    "shifts": None,
    "record_timing": False,
}
_KNOWN_KEYS = set(_DEFAULTS) | {"pipeline", "domains", "functions"}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentReport:
    pipeline: str
    seed: int
    params: dict
    items: list[dict]
    aggregate: dict
    status: str = "ok"
    witness: dict | None = None
    version: str = __version__
    wallClock: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA,
            "version": self.version,
            "pipeline": self.pipeline,
            "seed": self.seed,
            "params": self.params,
            "items": self.items,
            "aggregate": self.aggregate,
            "status": self.status,
            "witness": self.witness,
        }
        if self.wallClock is not None:
            out["wallClock"] = self.wallClock
        return out

    def to_json(self) -> str:
        return json.dumps(_encode(self.to_dict()), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["domain", "function", "p", "numerator", "denominator", "ratio", "residual", "tau", "sigma"]
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for it in self.items:
            w.writerow({c: _csv_cell(it.get(c)) for c in cols})
        return buf.getvalue()


def _encode(obj):
    # JSON has no infinities; non-finite floats become strings
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "NaN" if math.isnan(obj) else ("Infinity" if obj > 0 else "-Infinity")
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if hasattr(obj, "item"):
        return _encode(obj.item())
    return obj


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def validate_report(doc: dict) -> None:
    """Raise ``ValueError`` if a report document does not match the schema."""
    required = {"schema": str, "version": str, "pipeline": str, "seed": int, "params": dict,
                "items": list, "aggregate": dict, "status": str}
    for key, typ in required.items():
        if key not in doc:
            raise ValueError(f"report missing {key!r}")
        if not isinstance(doc[key], typ):
            raise ValueError(f"report field {key!r} must be {typ.__name__}")
    if doc["schema"] != SCHEMA:
        raise ValueError(f"unknown schema {doc['schema']!r}")
    if doc["pipeline"] not in PIPELINES:
        raise ValueError(f"unknown pipeline {doc['pipeline']!r}")
    if doc["status"] not in ("ok", "failed"):
        raise ValueError("status must be 'ok' or 'failed'")
    if doc["status"] == "failed" and not doc.get("witness"):
        raise ValueError("failed report must carry a witness")
    for i, it in enumerate(doc["items"]):
        if not isinstance(it, dict) or "domain" not in it:
            raise ValueError(f"items[{i}] must be an object with a domain")


# --- config ----------------------------------------------------------------


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def normalize_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("config", "must be a key-value mapping")
    unknown = set(config) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    pipeline = config.get("pipeline")
    if pipeline not in PIPELINES:
        raise ConfigError("pipeline", f"unknown pipeline {pipeline!r}; expected one of {', '.join(PIPELINES)}")
    cfg = dict(_DEFAULTS)
    if pipeline == "fractional":
        cfg["q"] = 2.0
    cfg.update({k: v for k, v in config.items() if v is not None})
    cfg["pipeline"] = pipeline

    def num(key, cast, check, msg):
        try:
            val = cast(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {cfg[key]!r}") from None
        if not check(val):
            raise ConfigError(key, msg)
        return val

    cfg["J"] = num("J", int, lambda v: 1 <= v <= 12, "J must lie in [1, 12]")
    cfg["seed"] = num("seed", int, lambda v: v >= 0, "seed must be >= 0")
    cfg["N"] = num("N", int, lambda v: v >= 1, "N must be >= 1")
    cfg["q"] = num("q", float, lambda v: v >= 1, "q must be >= 1")
    cfg["delta"] = num("delta", float, lambda v: 0 < v < 1, "delta must lie in (0, 1)")
    cfg["lambda"] = num("lambda", float, lambda v: 1 < v < 10 / 9, "lambda must lie in (1, 10/9)")
    if pipeline == "fractional" and not cfg["q"] < 2 / cfg["delta"]:
        raise ConfigError("q", "fractional pipeline needs q < n/delta")
    cfg["pairBudget"] = num("pairBudget", int, lambda v: v >= 1, "pairBudget must be >= 1")
    cfg["johnSamples"] = num("johnSamples", int, lambda v: v >= 1, "johnSamples must be >= 1")
    ps = []
    for i, p in enumerate(_as_list(cfg["p"])):
        try:
            p = float(p)
        except (TypeError, ValueError):
            raise ConfigError(f"p[{i}]", f"expected a number, got {p!r}") from None
        if not (p > 1 and math.isfinite(p)):
            raise ConfigError(f"p[{i}]", "exponent must be > 1 and finite")
        ps.append(p)
    cfg["p"] = ps
    ks = []
    for i, k in enumerate(_as_list(cfg["cuspK"])):
        try:
            k = float(k)
        except (TypeError, ValueError):
            raise ConfigError(f"cuspK[{i}]", f"expected a number, got {k!r}") from None
        if not k > 1:
            raise ConfigError(f"cuspK[{i}]", "cusp exponent must be > 1")
        ks.append(k)
    cfg["cuspK"] = ks

    default_domains = ["square"] if pipeline in ("poincare", "fractional") else list(JOHN_CORPUS)
    doms = []
    for i, d in enumerate(_as_list(cfg.get("domains", default_domains))):
        try:
            doms.append(DomainSpec.from_config(d))
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"domains[{i}]", str(e)) from None
    cfg["domains"] = doms
    default_functions = ["linear"] if pipeline in ("poincare", "fractional") else list(DEFAULT_FUNCTIONS)
    funcs = []
    for i, fs in enumerate(_as_list(cfg.get("functions", default_functions))):
        try:
            funcs.append(FunctionSpec.from_config(fs))
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"functions[{i}]", str(e)) from None
    cfg["functions"] = funcs
    if cfg["shifts"] is not None:
        try:
            cfg["shifts"] = [tuple(int(s) for s in sh) for sh in cfg["shifts"]]
        except (TypeError, ValueError):
            raise ConfigError("shifts", "expected a list of integer offsets") from None
    cfg["record_timing"] = bool(cfg["record_timing"])
    return cfg


def _params_echo(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if k == "domains":
            out[k] = [d.to_dict() for d in v]
        elif k == "functions":
            out[k] = [f.to_dict() for f in v]
        elif k == "shifts" and v is not None:
            out[k] = [list(s) for s in v]
        else:
            out[k] = v
    return out


# --- pipelines -------------------------------------------------------------


class _Failure(Exception):
    def __init__(self, witness: dict):
        super().__init__(witness.get("reason", "invariant failure"))
        self.witness = witness


def _jn_params(cfg: dict, p: float) -> JNParams:
    return JNParams(p=p, lam=cfg["lambda"], N=cfg["N"], J=cfg["J"])


def _grid(cfg: dict):
    for ds in cfg["domains"]:
        dom = gen_domain(ds, cfg["J"])
        for fs in cfg["functions"]:
            yield ds, dom, fs, gen_function(fs, dom)


def _run_whitney(cfg, items):
    for ds in cfg["domains"]:
        dom = gen_domain(ds, cfg["J"])
        W = whitney(dom)
        chk = check_whitney(W)
        item = {
            "domain": ds.name, "J": cfg["J"], "cubes": chk.n_cubes, "residual": W.residual,
            "disjoint": chk.disjoint, "contained": chk.contained,
            "minDistRatio": chk.min_ratio, "maxDistRatio": chk.max_ratio,
            "maxStarOverlap": chk.max_star_overlap, "ok": chk.ok,
        }
        items.append(item)
        if not chk.ok:
            raise _Failure({"reason": "Whitney invariants violated", "item": item, "detail": chk.witness})
    return None


def _run_chains(cfg, items):
    for ds in cfg["domains"]:
        dom = gen_domain(ds, cfg["J"])
        W = whitney(dom)
        cd = build_chains(dom, W, ds.john_center())
        for p in cfg["p"]:
            rep = verify_chains(cd, p)
            item = {"domain": ds.name, "p": p, "tau": rep.tau, "sigma": rep.sigma,
                    "shadowRadiusConstant": rep.shadowRadiusConstant,
                    "overlapConstant": rep.overlapConstant, "rho": cd.rho,
                    "conditions": rep.perCondition, "ok": rep.all_pass}
            items.append(item)
            if not rep.all_pass:
                raise _Failure({"reason": "chain conditions failed", "item": item})
    return "sigma"


def _run_jn(cfg, items):
    for ds, dom, fs, f in _grid(cfg):
        W = whitney(dom)
        for p in cfg["p"]:
            P = _jn_params(cfg, p)
            g = jn_global_dyadic(f, P, cfg["shifts"])
            loc = jn_local(f, W, P, cfg["shifts"])
            items.append({"domain": ds.name, "function": fs.name, "p": p,
                          "global": g.value, "globalResidual": g.residualMeasure,
                          "local": loc.value, "residual": loc.residualMeasure,
                          "localFamily": loc.family, "localOverlap": loc.overlap})
    return None


def _ratio_pipeline(fn: Callable):
    def run(cfg, items):
        for ds, dom, fs, f in _grid(cfg):
            W = whitney(dom)
            for p in cfg["p"]:
                rep = fn(f, _jn_params(cfg, p), W, cfg["shifts"])
                item = {"domain": ds.name, "function": fs.name, "p": p, **rep.to_dict(), **rep.details}
                items.append(item)
                if ds.john and not math.isfinite(rep.ratio):
                    raise _Failure({"reason": "non-finite ratio on a John domain", "item": item})
        return "ratio"
    return run


def _run_poincare(cfg, items):
    for ds, dom, fs, f in _grid(cfg):
        strong = poincare_quotient(f, cfg["q"])
        weak = weak_poincare_quotient(f, cfg["q"])
        items.append({"domain": ds.name, "function": fs.name, "q": strong.q, "qStar": strong.qStar,
                      "numerator": strong.lhs, "denominator": strong.rhs, "ratio": strong.quotient,
                      "weakLhs": weak.lhs, "weakRatio": weak.quotient, "c": weak.details["c"]})
    return "ratio"


def _run_fractional(cfg, items):
    for ds, dom, fs, f in _grid(cfg):
        rep = fractional_weak_quotient(f, cfg["q"], cfg["delta"], cfg["pairBudget"], cfg["seed"])
        items.append({"domain": ds.name, "function": fs.name, "q": rep.q, "delta": rep.delta,
                      "p": rep.qStar, "numerator": rep.lhs, "denominator": rep.rhs,
                      "ratio": rep.quotient, "flags": rep.flags, **rep.details})
    return "ratio"


def _run_necessity(cfg, items):
    for p in cfg["p"]:
        for k in cfg["cuspK"]:
            ds = DomainSpec("cusp", {"k": k})
            dom = gen_domain(ds, cfg["J"])
            fs = FunctionSpec("logDist", {"cap": k})
            f = gen_function(fs, dom)
            rep = weak_type_ratio(f, _jn_params(cfg, p), None, cfg["shifts"])
            jr = john_probe(dom, ds.john_center(), cfg["johnSamples"], cfg["seed"])
            items.append({"domain": ds.name, "function": fs.name, "p": p, "k": k,
                          **rep.to_dict(), **rep.details, "betaEstimate": jr.betaEstimate})
    for p in cfg["p"]:
        seq = [it for it in items if it["p"] == p]
        for key in ("ratio", "betaEstimate"):
            vals = [it[key] for it in seq]
            for a, b, it in zip(vals, vals[1:], seq[1:]):
                if not b > a:
                    raise _Failure({"reason": f"{key} not strictly increasing in k",
                                    "p": p, "k": it["k"], "values": vals})
    return "ratio"


_RUNNERS: dict[str, Callable] = {
    "whitney": _run_whitney,
    "chains": _run_chains,
    "jn": _run_jn,
    "weak": _ratio_pipeline(weak_type_ratio),
    "l2g": _ratio_pipeline(local_to_global_ratio),
    "poincare": _run_poincare,
    "fractional": _run_fractional,
    "necessity-sweep": _run_necessity,
}


def _aggregate(items: list[dict], key: str | None) -> dict:
    if key is None:
        return {"count": len(items)}
    vals = [float(it[key]) for it in items if key in it]
    finite = [v for v in vals if math.isfinite(v)]
    return {
        "count": len(items),
        "key": key,
        "max": max(vals) if vals else None,
        "median": statistics.median(vals) if vals else None,
        "allFinite": len(finite) == len(vals),
    }


def run_experiment(config: dict) -> ExperimentReport:
    """Run one pipeline over its (domain, function, exponent) grid.

    Raises :class:`ConfigError` for invalid configs.  Invariant failures do
    not raise; they produce a report with ``status = "failed"`` and a witness.
    """
    cfg = normalize_config(config)
    start = time.perf_counter()
    items: list[dict] = []
    try:
        key = _RUNNERS[cfg["pipeline"]](cfg, items)
        status, witness = "ok", None
    except _Failure as fail:
        key = None
        status, witness = "failed", fail.witness
    except ValueError as e:
        # domain-level preconditions (e.g. missing Whitney center cube)
        raise ConfigError(cfg["pipeline"], str(e)) from None
    report = ExperimentReport(
        pipeline=cfg["pipeline"],
        seed=cfg["seed"],
        params=_params_echo(cfg),
        items=items,
        aggregate=_aggregate(items, key),
        status=status,
        witness=witness,
    )
    if cfg["record_timing"]:
        report.wallClock = time.perf_counter() - start
    return report
