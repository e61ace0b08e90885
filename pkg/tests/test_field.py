"""Graph fields, voxel sets, exterior models, and round-trip serialization."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlmg import (
    Affine,
    AlignedBox,
    ConeFrom,
    ConstantBeyond,
    DomainError,
    EmptySet,
    FracParams,
    GraphField,
    HalfSpace,
    Homogeneous1,
    ParamError,
    QuadratureSpec,
    VoxelSet,
    load_graph_field,
    load_voxel_set,
    member,
    sample,
    save_graph_field,
    save_voxel_set,
    subgraph_of,
)

P1 = FracParams(1, 0.5)
P2 = FracParams(2, 0.5)


def affine_field_1d(a=0.25, b=-0.3, h=1 / 16, half=4.0):
    window = AlignedBox((-half,), (half,))
    xs = np.arange(-half, half + h / 2, h)
    return GraphField(params=P1, window=window, spacing=h,
                      values=a * xs + b, exterior=Affine((a,), b))


def bump_field_1d(height=1.0, width=2.0, h=1 / 16, half=4.0):
    window = AlignedBox((-half,), (half,))
    xs = np.arange(-half, half + h / 2, h)
    s = xs / width
    vals = np.where(np.abs(s) < 1, height * np.exp(1.0 - 1.0 / np.maximum(1e-300, 1.0 - s * s)), 0.0)
    return GraphField(params=P1, window=window, spacing=h,
                      values=vals, exterior=ConstantBeyond())


class TestAlignedBox:
    def test_validation(self):
        with pytest.raises(ParamError):
            AlignedBox((0.0,), (0.0,))
        with pytest.raises(ParamError):
            AlignedBox((0.0, 1.0), (1.0,))
        with pytest.raises(ParamError):
            AlignedBox((np.nan,), (1.0,))

    def test_contains(self):
        box = AlignedBox((-1.0, -2.0), (1.0, 2.0))
        pts = np.array([[0.0, 0.0], [1.0, 2.0], [1.1, 0.0], [0.0, -2.1]])
        assert list(box.contains(pts)) == [True, True, False, False]


class TestGraphField:
    def test_shape_validation(self):
        window = AlignedBox((-1.0,), (1.0,))
        with pytest.raises(ParamError):
            GraphField(P1, window, 0.25, np.zeros(7), ConstantBeyond())  # needs 9
        with pytest.raises(ParamError):
            GraphField(P1, window, 0.3, np.zeros(8), ConstantBeyond())  # not a divisor
        with pytest.raises(ParamError):
            GraphField(P2, window, 0.25, np.zeros(9), ConstantBeyond())  # dim mismatch

    def test_seam_check_affine(self):
        u = affine_field_1d()  # consistent: fine
        vals = u.values.copy()
        vals[0] += 0.5
        with pytest.raises(ParamError):
            GraphField(P1, u.window, u.spacing, vals, u.exterior)

    def test_sample_interior_exact_on_nodes(self):
        u = bump_field_1d()
        xs = u.axis_nodes(0)
        got = sample(u, xs[:, None])
        assert np.allclose(got, u.values, atol=0)

    def test_sample_multilinear_between_nodes(self):
        u = affine_field_1d(a=2.0, b=1.0)
        x = np.array([[0.123], [-3.97], [3.99]])
        assert sample(u, x) == pytest.approx(2.0 * x[:, 0] + 1.0, abs=1e-12)

    def test_sample_exterior_affine(self):
        u = affine_field_1d(a=0.5, b=0.1)
        assert sample(u, np.array([100.0])) == pytest.approx(50.1)
        assert sample(u, np.array([-7.5])) == pytest.approx(-3.65)

    def test_sample_exterior_constant(self):
        u = bump_field_1d()
        edge = sample(u, np.array([4.0]))
        assert sample(u, np.array([250.0])) == edge
        assert sample(u, np.array([-250.0])) == sample(u, np.array([-4.0]))

    def test_sample_exterior_homogeneous(self):
        window = AlignedBox((-2.0, -2.0), (2.0, 2.0))
        h = 0.25
        ax = np.arange(-2.0, 2.0 + h / 2, h)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        vals = np.abs(yy)  # one-homogeneous, x1-invariant
        u = GraphField(P2, window, h, vals, Homogeneous1())
        assert sample(u, np.array([0.0, 10.0])) == pytest.approx(10.0, rel=1e-9)
        assert sample(u, np.array([17.0, -6.0])) == pytest.approx(6.0, rel=1e-9)

    def test_homogeneous_needs_origin(self):
        window = AlignedBox((1.0,), (2.0,))
        with pytest.raises(ParamError):
            GraphField(P1, window, 0.25, np.zeros(5), Homogeneous1())

    def test_interior_mask_margin(self):
        u = affine_field_1d(h=0.5, half=2.0)  # 9 nodes at -2..2
        mask = u.interior_mask()  # default margin 2h = 1.0
        xs = u.nodes()[:, 0]
        assert np.array_equal(mask, np.abs(xs) <= 1.0 + 1e-12)

    def test_2d_nodes_order_matches_values(self):
        window = AlignedBox((0.0, 0.0), (1.0, 2.0))
        vals = np.arange(3 * 5, dtype=float).reshape(3, 5)
        u = GraphField(P2, window, 0.5, vals, ConstantBeyond())
        pts = u.nodes()
        assert pts.shape == (15, 2)
        assert sample(u, pts) == pytest.approx(vals.ravel())


class TestVoxelSet:
    def ball(self, radius=1.0, res=32, half=2.0):
        box = AlignedBox((-half, -half), (half, half))
        ax = -half + (2 * half / res) * (np.arange(res) + 0.5)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        occ = (xx**2 + yy**2 < radius**2).astype(np.uint8)
        return VoxelSet(box=box, occupancy=occ, exterior=EmptySet())

    def test_member_inside_outside(self):
        e = self.ball()
        assert member(e, np.array([0.0, 0.0]))
        assert not member(e, np.array([1.8, 0.0]))
        assert not member(e, np.array([5.0, 5.0]))  # exterior: empty

    def test_complement_is_involution(self):
        e = self.ball()
        ec = e.complement()
        pts = np.random.default_rng(3).uniform(-4, 4, size=(200, 2))
        assert np.array_equal(member(ec, pts), ~member(e, pts))
        ecc = ec.complement()
        assert np.array_equal(ecc.occupancy, e.occupancy)
        assert np.array_equal(member(ecc, pts), member(e, pts))

    def test_half_space_exterior(self):
        box = AlignedBox((-1.0, -1.0), (1.0, 1.0))
        res = 16
        ax = -1.0 + (2.0 / res) * (np.arange(res) + 0.5)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        occ = (yy < 0).astype(np.uint8)
        e = VoxelSet(box=box, occupancy=occ,
                     exterior=HalfSpace((0.0, 1.0), 0.0))
        assert member(e, np.array([4.0, -3.0]))
        assert not member(e, np.array([4.0, 3.0]))

    def test_seam_mismatch_raises(self):
        box = AlignedBox((-1.0, -1.0), (1.0, 1.0))
        occ = np.ones((16, 16), dtype=np.uint8)
        with pytest.raises(ParamError):
            VoxelSet(box=box, occupancy=occ, exterior=EmptySet())

    def test_occupancy_values_validated(self):
        box = AlignedBox((-1.0, -1.0), (1.0, 1.0))
        occ = np.full((8, 8), 2, dtype=np.uint8)
        with pytest.raises(ParamError):
            VoxelSet(box=box, occupancy=occ, exterior=EmptySet())

    def test_cone_exterior_extends_radially(self):
        # lower half plane through origin, radially invariant
        box = AlignedBox((-1.0, -1.0), (1.0, 1.0))
        res = 32
        ax = -1.0 + (2.0 / res) * (np.arange(res) + 0.5)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        occ = (yy < 0).astype(np.uint8)
        e = VoxelSet(box=box, occupancy=occ, exterior=ConeFrom())
        assert member(e, np.array([3.0, -2.0]))
        assert not member(e, np.array([3.0, 2.0]))
        assert member(e, np.array([-40.0, -0.5]))


class TestSubgraph:
    def test_membership_matches_graph(self):
        u = bump_field_1d(h=1 / 8)
        e = subgraph_of(u)
        rng = np.random.default_rng(11)
        pts = np.column_stack([rng.uniform(-6, 6, 400), rng.uniform(-3, 3, 400)])
        got = member(e, pts)
        want = pts[:, 1] < sample(u, pts[:, :1])
        # disagreement only inside the voxel-width band around the graph
        band = np.abs(pts[:, 1] - sample(u, pts[:, :1])) < float(np.max(e.voxel_width))
        assert np.array_equal(got[~band], want[~band])

    def test_vertical_monotonicity(self):
        u = bump_field_1d(h=1 / 8)
        e = subgraph_of(u)
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.uniform(-5, 5)
            zs = np.sort(rng.uniform(-4, 4, 8))
            ms = member(e, np.column_stack([np.full(8, x), zs]).astype(float))
            # once outside going up, stays outside
            first_out = np.argmin(ms) if not ms.all() else len(ms)
            assert not ms[first_out:].any() or ms.all()

    def test_box_must_cover_window(self):
        u = bump_field_1d()
        small = AlignedBox((-1.0, -2.0), (1.0, 2.0))
        with pytest.raises(DomainError):
            subgraph_of(u, box=small)

    def test_box_must_cover_values(self):
        u = bump_field_1d(height=3.0)
        flat = AlignedBox((-4.0, -0.5), (4.0, 0.5))
        with pytest.raises(DomainError):
            subgraph_of(u, box=flat)


class TestSerialization:
    def test_graph_round_trip_bit_exact(self, tmp_path):
        u = bump_field_1d()
        path = tmp_path / "u.json"
        save_graph_field(u, str(path))
        v = load_graph_field(str(path))
        assert np.array_equal(v.values, u.values)
        assert v.window == u.window
        assert v.spacing == u.spacing
        assert v.exterior == u.exterior
        assert v.params == u.params

    def test_voxel_round_trip_bit_exact(self, tmp_path):
        u = affine_field_1d(a=0.1)
        e = subgraph_of(u)
        path = tmp_path / "e.json"
        save_voxel_set(e, str(path))
        f = load_voxel_set(str(path))
        assert np.array_equal(f.occupancy, e.occupancy)
        assert f.box == e.box
        assert isinstance(f.exterior, type(e.exterior))
        assert np.array_equal(f.exterior.graph.values, u.values)

    def test_reader_accepts_json_array_values(self, tmp_path):
        doc = {
            "n": 1, "alpha": 0.5,
            "window": {"lo": [-1.0], "hi": [1.0]},
            "spacing": 0.5,
            "exterior": {"variant": "constant_beyond"},
            "values": [0.0, 1.0, 2.0, 1.0, 0.0],
        }
        path = tmp_path / "u.json"
        path.write_text(json.dumps(doc))
        u = load_graph_field(str(path))
        assert u.values.tolist() == [0.0, 1.0, 2.0, 1.0, 0.0]

    def test_reader_accepts_csv_values(self, tmp_path):
        doc = {
            "n": 1, "alpha": 0.5,
            "window": {"lo": [-1.0], "hi": [1.0]},
            "spacing": 0.5,
            "exterior": {"variant": "constant_beyond"},
            "values": "0.0,1.0,2.0,1.0,0.0",
        }
        path = tmp_path / "u.json"
        path.write_text(json.dumps(doc))
        u = load_graph_field(str(path))
        assert u.values.tolist() == [0.0, 1.0, 2.0, 1.0, 0.0]

    def test_missing_key_named_in_error(self, tmp_path):
        doc = {"n": 1, "alpha": 0.5, "window": {"lo": [-1.0], "hi": [1.0]},
               "spacing": 0.5, "exterior": {"variant": "constant_beyond"}}
        path = tmp_path / "u.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ParamError, match="values"):
            load_graph_field(str(path))

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "u.json"
        path.write_text("{not json")
        with pytest.raises(ParamError, match="JSON"):
            load_graph_field(str(path))


class TestQuadratureSpec:
    def test_defaults_valid(self):
        QuadratureSpec()

    def test_validation(self):
        with pytest.raises(ParamError):
            QuadratureSpec(tail_budget=0.0)
        with pytest.raises(ParamError):
            QuadratureSpec(far_radius=-1.0)
        with pytest.raises(ParamError):
            QuadratureSpec(angular_nodes=2)


@given(a=st.floats(-2, 2), b=st.floats(-2, 2),
       x=st.floats(-100, 100))
@settings(deadline=None, max_examples=80)
def test_affine_field_samples_affine_everywhere(a, b, x):
    u = affine_field_1d(a=a, b=b)
    assert sample(u, np.array([x])) == pytest.approx(a * x + b, rel=1e-9, abs=1e-9)


@given(x=st.floats(-8, 8), z=st.floats(-5, 5))
@settings(deadline=None, max_examples=60)
def test_subgraph_member_consistent_with_monotone_slicing(x, z):
    u = bump_field_1d(h=1 / 8)
    e = subgraph_of(u)
    p = np.array([x, z])
    if member(e, p):
        assert member(e, np.array([x, z - 1.0]))
    else:
        assert not member(e, np.array([x, z + 1.0]))
