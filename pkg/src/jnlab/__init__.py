"""Numerical toolkit for John-Nirenberg type functionals on rasterized domains."""

__version__ = "0.1.0"

from .dyadic import (
    AikawaReport,
    Cube,
    DyadicCube,
    RasterDomain,
    WhitneyDecomposition,
    aikawa_probe,
    rasterize,
    star,
    whitney,
)
from .jnp import (
    DPResult,
    DistributionProfile,
    GridFunction,
    JNParams,
    distribution,
    jn_global_dyadic,
    jn_local,
    lemma_chain_bound,
    local_to_global_ratio,
    mean_oscillation,
    weak_norm_opt_c,
    weak_type_ratio,
)
from .john import build_chains, john_probe, verify_chains
from .sobolev import fractional_weak_quotient, gradient, poincare_quotient, weak_poincare_quotient

__all__ = [
    "AikawaReport",
    "Cube",
    "DPResult",
    "DistributionProfile",
    "DyadicCube",
    "GridFunction",
    "JNParams",
    "RasterDomain",
    "WhitneyDecomposition",
    "aikawa_probe",
    "build_chains",
    "distribution",
    "fractional_weak_quotient",
    "gradient",
    "jn_global_dyadic",
    "jn_local",
    "john_probe",
    "lemma_chain_bound",
    "local_to_global_ratio",
    "mean_oscillation",
    "poincare_quotient",
    "rasterize",
    "star",
    "verify_chains",
    "weak_norm_opt_c",
    "weak_poincare_quotient",
    "weak_type_ratio",
    "whitney",
]
