import math

import numpy as np
import pytest

from jnlab.dyadic import DyadicCube, raster_from_occupancy, star, whitney
from jnlab.john import build_chains, john_probe, star_overlap_ratio, verify_chains
from jnlab.lab import gen_domain


@pytest.fixture(scope="module")
def square7():
    dom = gen_domain("square", 7)
    W = whitney(dom)
    return dom, W, build_chains(dom, W, (0.5, 0.5))


def _single_cube_domain():
    occ = np.zeros((7, 7), bool)
    occ[1:6, 1:6] = True
    return raster_from_occupancy(occ, 4, (0, 0))


def test_disk_beta_near_one():
    rep = john_probe(gen_domain("ball", 8), (0.5, 0.5), 64, seed=0)
    assert 1.0 <= rep.betaEstimate <= 1.3


def test_square_beta_bounded():
    rep = john_probe(gen_domain("square", 8), (0.5, 0.5), 32, seed=0)
    assert rep.betaEstimate <= 3.0


def test_report_invariant():
    rep = john_probe(gen_domain("lshape", 6), (0.25, 0.25), 32, seed=1)
    worst = max(max(s[2] for s in rep.samples), rep.lengthBoundRatio)
    assert rep.betaEstimate == pytest.approx(max(1.0, worst))


def test_cusp_beta_increases_with_k():
    betas = [john_probe(gen_domain(f"cusp:{k}", 7), (0.75, 0.0), 32, seed=0).betaEstimate for k in (2, 3, 4)]
    assert betas[0] < betas[1] < betas[2]


def test_center_outside_domain():
    with pytest.raises(ValueError, match="center outside domain"):
        john_probe(gen_domain("lshape", 5), (0.75, 0.75), 8, seed=0)


def test_unreachable_sample():
    dom = gen_domain("rooms:2,0.0001", 5)
    assert not dom.connected
    with pytest.raises(ValueError, match="sample unreachable"):
        john_probe(dom, (0.5, 0.5), 10_000, seed=0)


def test_star_overlap_ratio_adjacent_cubes():
    P, Q = DyadicCube(3, (1, 1)), DyadicCube(3, (2, 1))
    # stars overlap in a strip of width 1/8 of the side
    assert star_overlap_ratio(P, Q) == pytest.approx((1 / 64 * 9 / 64) / star(P).measure)
    assert star_overlap_ratio(P, DyadicCube(3, (4, 1))) == 0.0


def test_center_chain_is_trivial(square7):
    _, _, cd = square7
    ch = cd.chains[cd.center_cube]
    assert ch.sequence == [cd.center_cube]


def test_chains_cover_every_cube_without_duplicates(square7):
    _, W, cd = square7
    assert set(cd.chains) == set(W.cubes)
    for Q, ch in cd.chains.items():
        assert ch.sequence[0] == cd.center_cube and ch.sequence[-1] == Q
        assert len(set(ch.sequence)) == len(ch.sequence)


def test_consecutive_stars_overlap(square7):
    _, _, cd = square7
    worst = min(
        (star_overlap_ratio(a, b) for ch in cd.chains.values() for a, b in zip(ch.sequence, ch.sequence[1:])),
        default=1.0,
    )
    assert worst >= 1 / 64
    assert worst == pytest.approx(cd.min_overlap)


def test_shadow_transpose(square7):
    _, _, cd = square7
    assert sum(len(s) for s in cd.shadows.values()) == sum(len(c) for c in cd.chains.values())
    for R, shadow in cd.shadows.items():
        for Q in shadow:
            assert R in cd.chains[Q].sequence
    for Q, ch in cd.chains.items():
        for R in ch.sequence:
            assert Q in cd.shadows[R]


def test_verify_conditions_square(square7):
    _, _, cd = square7
    rep = verify_chains(cd, 2.0)
    assert rep.all_pass
    assert math.isfinite(rep.sigma) and rep.tau >= 0
    assert rep.overlapConstant >= 1 / 64


def test_condition_one_with_reported_tau(square7):
    _, _, cd = square7
    tau = verify_chains(cd, 2.0).tau
    for Q, ch in cd.chains.items():
        for R in ch.sequence:
            assert Q.side <= 2 ** tau * R.side


def test_sigma_monotone_in_p(square7):
    _, _, cd = square7
    assert verify_chains(cd, 3.0).sigma >= verify_chains(cd, 2.0).sigma


def test_verify_rejects_small_p(square7):
    with pytest.raises(ValueError, match="exponent out of range"):
        verify_chains(square7[2], 1.0)


def test_single_cube_decomposition():
    dom = _single_cube_domain()
    W = whitney(dom)
    assert len(W.cubes) == 1
    cd = build_chains(dom, W, W.cubes[0].center)
    rep = verify_chains(cd, 2.0)
    assert rep.tau == 0
    assert rep.sigma == pytest.approx(1.0)


def test_missing_center_cube():
    dom = gen_domain("koch:3", 6)
    with pytest.raises(ValueError, match="Whitney cube containing x0"):
        build_chains(dom, whitney(dom), (0.26, 0.26))


@pytest.mark.slow
def test_cusp_sigma_exceeds_square():
    dom = gen_domain("cusp:4", 8)
    W = whitney(dom)
    cusp = verify_chains(build_chains(dom, W, (0.75, 0.0)), 2.0)
    sq_dom = gen_domain("square", 8)
    sq = verify_chains(build_chains(sq_dom, whitney(sq_dom), (0.5, 0.5)), 2.0)
    assert cusp.sigma > 2 * sq.sigma


@pytest.mark.slow
def test_shadow_constant_stable_under_refinement():
    Cs = []
    for J in (6, 7):
        dom = gen_domain("lshape", J)
        Cs.append(verify_chains(build_chains(dom, whitney(dom), (0.25, 0.25)), 2.0).shadowRadiusConstant)
    assert abs(Cs[1] - Cs[0]) <= 0.25 * Cs[0]
