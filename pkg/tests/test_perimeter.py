"""Windowed nonlocal perimeter: oracle value, symmetries, growth, minimality.

The frozen oracle is the interaction energy of the lower half-plane
E = {y < 0} within the unit-disc window at alpha = 1/2.  Splitting the
double integral by whether the complement endpoint also lies in the
window gives P = 2*I1 - A with

    I1 = 2*J*B(1/4, 3/2),   J = sqrt(pi)*Gamma(3/4)/Gamma(5/4)

(I1 integrates one window phase against the full opposite half-plane; the
in-window/in-window correction A was evaluated with adaptive quadrature
to ~1e-8 absolute and cross-checked against a lattice sum with measured
O(m^-1/2) convergence).  All constants below are independent of the
engine under test.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from nlmg import (
    Affine,
    AlignedBox,
    Ball,
    BudgetError,
    ConstantBeyond,
    DomainError,
    EmptySet,
    FracParams,
    GraphField,
    HalfSpace,
    ParamError,
    PerimeterResult,
    QuadratureSpec,
    SubgraphOf,
    VoxelSet,
    frac_perimeter,
    perimeter_growth,
    subgraph_of,
)

P2 = FracParams(n=1, alpha=0.5)
P3 = FracParams(n=2, alpha=0.5)

# Half-plane in the unit-disc window, alpha = 1/2 (see module docstring).
HALFPLANE_DISC = 25.600085908749943
HALFPLANE_DISC_T1 = 16.755160819145562  # window-set x full-complement part
HALFPLANE_DISC_T2 = 8.84492508960438    # outside-set x window-complement part


def halfplane_set(res: int, extent: float = 2.0) -> VoxelSet:
    """E = {y < 0} sampled on [-extent, extent]^2 with an exact exterior."""
    box = AlignedBox((-extent, -extent), (extent, extent))
    w = 2.0 * extent / res
    yc = -extent + w * (np.arange(res) + 0.5)
    occ = np.zeros((res, res), dtype=np.uint8)
    occ[:, yc < 0.0] = 1
    return VoxelSet(box=box, occupancy=occ, exterior=HalfSpace((0.0, 1.0), 0.0))


def ball_set_3d(res: int = 20, extent: float = 1.5, radius: float = 1.0) -> VoxelSet:
    box = AlignedBox((-extent,) * 3, (extent,) * 3)
    e = VoxelSet(box=box, occupancy=np.zeros((res,) * 3, dtype=np.uint8),
                 exterior=EmptySet())
    c = e.centers()
    occ = (np.sum(c * c, axis=1) <= radius * radius).reshape(e.resolution)
    return VoxelSet(box=box, occupancy=occ.astype(np.uint8), exterior=EmptySet())


# ---------------------------------------------------------------------------
# frozen oracle and basic structure


def test_halfplane_disc_matches_oracle():
    r = frac_perimeter(halfplane_set(256), Ball((0.0, 0.0), 1.0), P2)
    assert r.value == pytest.approx(HALFPLANE_DISC, rel=2e-2)
    assert abs(r.value - HALFPLANE_DISC) <= max(r.err, 0.02 * HALFPLANE_DISC)
    assert r.split[0] == pytest.approx(HALFPLANE_DISC_T1, rel=5e-2)
    assert r.split[1] == pytest.approx(HALFPLANE_DISC_T2, rel=5e-2)


def test_error_estimate_shrinks_with_resolution():
    coarse = frac_perimeter(halfplane_set(64), Ball((0.0, 0.0), 1.0), P2)
    fine = frac_perimeter(halfplane_set(256), Ball((0.0, 0.0), 1.0), P2)
    assert fine.err < coarse.err
    assert abs(fine.value - HALFPLANE_DISC) < abs(coarse.value - HALFPLANE_DISC) + coarse.err


def test_result_structure_and_invariants():
    r = frac_perimeter(halfplane_set(64), Ball((0.0, 0.0), 1.0), P2)
    assert isinstance(r, PerimeterResult)
    assert r.value >= 0.0 and r.err >= 0.0
    assert r.split[0] >= 0.0 and r.split[1] >= 0.0
    # the split components are rounded separately from the total
    assert r.value == pytest.approx(r.split[0] + r.split[1], rel=1e-12)


def test_empty_set_has_zero_perimeter():
    box = AlignedBox((-2.0, -2.0), (2.0, 2.0))
    e = VoxelSet(box=box, occupancy=np.zeros((32, 32), dtype=np.uint8),
                 exterior=EmptySet())
    r = frac_perimeter(e, Ball((0.0, 0.0), 1.0), P2)
    assert r == PerimeterResult(0.0, 0.0, (0.0, 0.0))


def test_rectangular_window_accepted():
    r = frac_perimeter(halfplane_set(64), AlignedBox((-1.0, -0.8), (1.0, 0.9)), P2)
    assert r.value > 0.0 and r.err < 0.05 * r.value


# ---------------------------------------------------------------------------
# complement symmetry: bitwise, not approximate


def test_complement_bitwise_halfplane():
    e = halfplane_set(128)
    w = Ball((0.0, 0.0), 1.0)
    r = frac_perimeter(e, w, P2)
    rc = frac_perimeter(e.complement(), w, P2)
    assert r.value == rc.value
    assert r.err == rc.err


@pytest.mark.parametrize("seed", [7, 11])
def test_complement_bitwise_random_occupancy(seed):
    rng = np.random.default_rng(seed)
    box = AlignedBox((-2.0, -2.0), (2.0, 2.0))
    occ = (rng.random((32, 32)) < 0.5).astype(np.uint8)
    e = VoxelSet(box=box, occupancy=occ, exterior=HalfSpace((0.0, 1.0), 0.0),
                 seam_tol=1.0)
    w = AlignedBox((-1.2, -0.9), (1.1, 1.3))
    q = QuadratureSpec(tail_budget=1.0)
    r = frac_perimeter(e, w, P2, q)
    rc = frac_perimeter(e.complement(), w, P2, q)
    assert r.value == rc.value
    assert r.err == rc.err


def test_complement_bitwise_3d():
    e = ball_set_3d(res=16)
    w = Ball((0.0, 0.0, 0.0), 0.8)
    r = frac_perimeter(e, w, P3)
    rc = frac_perimeter(e.complement(), w, P3)
    assert r.value == rc.value
    assert r.err == rc.err


def test_three_dimensional_ball_passes_budget():
    r = frac_perimeter(ball_set_3d(res=20), Ball((0.0, 0.0, 0.0), 0.8), P3)
    assert r.value > 0.0
    assert r.err <= 0.05 * r.value


# ---------------------------------------------------------------------------
# exact scale equivariance: value scales by lambda^(n + 1 - alpha)


def test_scaling_by_two_is_exact():
    v1 = frac_perimeter(halfplane_set(128, extent=2.0), Ball((0.0, 0.0), 1.0), P2)
    v2 = frac_perimeter(halfplane_set(128, extent=4.0), Ball((0.0, 0.0), 2.0), P2)
    expected = 2.0 ** 1.5
    assert v2.value / v1.value == pytest.approx(expected, rel=1e-12)
    assert v2.err == pytest.approx(v1.err * expected, rel=1e-12)


# ---------------------------------------------------------------------------
# input validation and budget refusal


def test_rejects_bad_window_types_and_dimensions():
    e = halfplane_set(32)
    with pytest.raises(ParamError, match="window"):
        frac_perimeter(e, (0.0, 0.0, 1.0), P2)
    with pytest.raises(DomainError, match="dimension"):
        frac_perimeter(e, Ball((0.0, 0.0, 0.0), 1.0), P2)
    with pytest.raises(DomainError, match="strictly inside"):
        frac_perimeter(e, Ball((0.0, 0.0), 2.0), P2)
    with pytest.raises(DomainError, match="strictly inside"):
        frac_perimeter(e, AlignedBox((-2.0, -1.0), (1.0, 1.0)), P2)


def test_rejects_mismatched_params_and_types():
    e = halfplane_set(32)
    with pytest.raises(ParamError, match="R\\^"):
        frac_perimeter(e, Ball((0.0, 0.0), 1.0), FracParams(n=2, alpha=0.5))
    with pytest.raises(ParamError, match="VoxelSet"):
        frac_perimeter("not a set", Ball((0.0, 0.0), 1.0), P2)
    with pytest.raises(ParamError, match="QuadratureSpec"):
        frac_perimeter(e, Ball((0.0, 0.0), 1.0), P2, q=0.1)


def test_budget_refusal_on_coarse_grid():
    with pytest.raises(BudgetError, match="too coarse"):
        frac_perimeter(halfplane_set(4), Ball((0.0, 0.0), 1.0), P2)


def test_budget_refusal_when_window_misses_all_centers():
    e = VoxelSet(box=AlignedBox((-2.0, -2.0), (2.0, 2.0)),
                 occupancy=np.zeros((4, 4), dtype=np.uint8),
                 exterior=HalfSpace((0.0, 1.0), 0.0), seam_tol=1.0)
    with pytest.raises(BudgetError, match="no voxel centers"):
        frac_perimeter(e, Ball((0.0, 0.0), 0.1), P2)


# ---------------------------------------------------------------------------
# growth in the window radius


@pytest.fixture(scope="module")
def growth_run():
    e = halfplane_set(384, extent=6.0)
    return e, perimeter_growth(e, (1.0, 2.0, 4.0), P2)


def test_growth_follows_area_minus_alpha_power_law(growth_run):
    e, pts = growth_run
    # growth reuses the single-window evaluator verbatim
    direct = frac_perimeter(e, Ball((0.0, 0.0), 1.0), P2)
    assert pts[0] == (1.0, direct.value)
    vs = [v for _, v in pts]
    assert vs[0] < vs[1] < vs[2]
    slope = np.polyfit(np.log([r for r, _ in pts]), np.log(vs), 1)[0]
    assert abs(slope - 1.5) <= 0.1


def test_growth_bounded_by_full_ball_interaction(growth_run):
    # within B_R the half-plane cannot out-interact the set B_R itself,
    # whose window interaction counts every in-window opposite pair once
    e, pts = growth_run
    blank = VoxelSet(box=e.box, occupancy=np.zeros(e.resolution, dtype=np.uint8),
                     exterior=EmptySet())
    r2 = np.sum(blank.centers() ** 2, axis=1)
    for radius, gv in pts:
        g = frac_perimeter(e, Ball((0.0, 0.0), radius), P2)
        occ = (r2 <= radius * radius).reshape(blank.resolution)
        ball = VoxelSet(box=e.box, occupancy=occ.astype(np.uint8),
                        exterior=EmptySet())
        m = frac_perimeter(ball, Ball((0.0, 0.0), radius), P2)
        assert gv <= m.value + m.err + g.err


def test_growth_validates_radii():
    e = halfplane_set(32)
    with pytest.raises(ParamError, match="nonempty"):
        perimeter_growth(e, (), P2)
    with pytest.raises(ParamError, match="positive"):
        perimeter_growth(e, (1.0, -0.5), P2)
    with pytest.raises(DomainError, match="strictly inside"):
        perimeter_growth(e, (5.0,), P2)


# ---------------------------------------------------------------------------
# affine graphs minimize among compact perturbations


def test_affine_subgraph_minimizes_among_bump_perturbations():
    win = AlignedBox((-3.0,), (3.0,))
    h = 1.0 / 8
    xs = -3.0 + h * np.arange(49)
    slope, off = 0.37, 0.05
    base_vals = slope * xs + off
    u_base = GraphField(params=P2, window=win, spacing=h, values=base_vals,
                        exterior=Affine((slope,), off))
    sbox = AlignedBox((-3.0, -3.0), (3.0, 3.0))
    base = subgraph_of(u_base, box=sbox, resolution=96)
    omega = AlignedBox((-2.8, -2.2), (2.8, 2.2))
    r_base = frac_perimeter(base, omega, P2)

    rng = np.random.default_rng(42)
    for _ in range(20):
        amp = rng.uniform(0.2, 0.5) * rng.choice([-1.0, 1.0])
        c = rng.uniform(-1.5, 1.5)
        wdt = rng.uniform(0.3, 1.0)
        bump = amp * np.cos(np.pi * (xs - c) / (2 * wdt)) ** 2 * (np.abs(xs - c) < wdt)
        u_pert = GraphField(params=P2, window=win, spacing=h,
                            values=base_vals + bump, exterior=Affine((slope,), off))
        pert_occ = subgraph_of(u_pert, box=sbox, resolution=96).occupancy
        assert np.any(pert_occ != base.occupancy)  # the bump flips cells
        # same exterior model as the base so both share one far-field treatment
        pert = VoxelSet(box=sbox, occupancy=pert_occ, exterior=SubgraphOf(u_base))
        r_pert = frac_perimeter(pert, omega, P2)
        assert r_pert.value > r_base.value


# ---------------------------------------------------------------------------
# generic probing agrees with the closed-form half-space path


def test_probed_exterior_matches_closed_form():
    res = 32
    box = AlignedBox((-2.0, -2.0), (2.0, 2.0))
    yc = -2.0 + (4.0 / res) * (np.arange(res) + 0.5)
    occ = np.zeros((res, res), dtype=np.uint8)
    occ[:, yc < 0.0] = 1
    exact = VoxelSet(box=box, occupancy=occ, exterior=HalfSpace((0.0, 1.0), 0.0))
    # a flat zero graph continued by its boundary values describes the same
    # exterior but is not recognized in closed form, so rays get probed
    u0 = GraphField(params=P2, window=AlignedBox((-2.0,), (2.0,)), spacing=0.25,
                    values=np.zeros(17), exterior=ConstantBeyond())
    probed = VoxelSet(box=box, occupancy=occ, exterior=SubgraphOf(u0))
    q = QuadratureSpec(angular_nodes=32, tail_budget=0.5)
    w = Ball((0.0, 0.0), 0.9)
    r_ex = frac_perimeter(exact, w, P2, q)
    r_pr = frac_perimeter(probed, w, P2, q)
    assert abs(r_ex.value - r_pr.value) <= r_ex.err + r_pr.err
    rc = frac_perimeter(probed.complement(), w, P2, q)
    assert r_pr.value == rc.value and r_pr.err == rc.err
