"""Discrete graphs and voxel sets, with total extensions beyond their windows.

Two data models carry everything downstream:

* GraphField: u sampled on a uniform node lattice over an axis-aligned window,
  plus an exterior model that makes u a total function on R^n. Inside the
  window sampling is multilinear; outside it delegates to the model.
* VoxelSet: occupancy sampled at voxel centers over an axis-aligned box in the
  ambient space R^(n+1), plus an exterior model that makes membership total.

Exterior models deliberately stay tiny: affine continuation, nearest-boundary
constant continuation, one-homogeneous continuation along rays from the
origin (graphs); half-spaces, subgraphs of a stored graph, radial cone
continuation of the boundary shell, the empty set, and complements (sets).

Constructors validate shapes and check that the stored samples meet their
exterior model across the window seam, failing loudly on mismatch.
"""

from __future__ import annotations

import base64
import io
import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import DomainError, ParamError
from .kernel import FracParams

__all__ = [
    "AlignedBox",
    "Ball",
    "Affine",
    "ConstantBeyond",
    "Homogeneous1",
    "HalfSpace",
    "SubgraphOf",
    "ConeFrom",
    "EmptySet",
    "Complement",
    "GraphField",
    "VoxelSet",
    "QuadratureSpec",
    "sample",
    "member",
    "subgraph_of",
    "save_graph_field",
    "load_graph_field",
    "save_voxel_set",
    "load_voxel_set",
]


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class AlignedBox:
    """Closed axis-aligned box, lo_d < hi_d on every axis."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ParamError(f"box lo/hi length mismatch: {lo} vs {hi}")
        if not 1 <= len(lo) <= 3:
            raise ParamError(f"box dimension must be 1..3, got {len(lo)}")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise ParamError(f"box corners must be finite: {lo}, {hi}")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ParamError(f"box requires lo < hi per axis: {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized closed-box membership for pts of shape (..., dim)."""
        pts = np.asarray(pts, dtype=float)
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance from interior points to the boundary (0 outside)."""
        pts = np.asarray(pts, dtype=float)
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        d = np.minimum(pts - lo, hi - pts)
        return np.maximum(np.min(d, axis=-1), 0.0)


@dataclass(frozen=True)
class Ball:
    """Closed euclidean ball, the round window used by growth measurements."""

    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        if not 1 <= len(c) <= 3:
            raise ParamError(f"ball dimension must be 1..3, got {len(c)}")
        if not all(np.isfinite(c)):
            raise ParamError(f"ball center must be finite: {c}")
        r = float(self.radius)
        if not np.isfinite(r) or r <= 0:
            raise ParamError(f"ball radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d = pts - np.array(self.center)
        return np.sum(d * d, axis=-1) <= self.radius * self.radius


def _ray_exit_scale(box: AlignedBox, pts: np.ndarray) -> np.ndarray:
    """Scale s > 0 with s * p on the boundary of box, per row of pts.

    Requires the origin strictly inside the box. Rows at the origin get 1.0
    (they are never exterior queries).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = np.where(pts > 0, hi / pts, np.where(pts < 0, lo / pts, np.inf))
    s = np.min(cand, axis=-1)
    return np.where(np.isfinite(s), s, 1.0)


# ---------------------------------------------------------------------------
# exterior models, graph side


@dataclass(frozen=True)
class Affine:
    """u(x) = gradient . x + offset outside the window."""

    gradient: tuple
    offset: float

    def __post_init__(self):
        g = tuple(float(v) for v in np.atleast_1d(self.gradient))
        if not all(np.isfinite(g)) or not np.isfinite(self.offset):
            raise ParamError(f"affine exterior needs finite coefficients: {self}")
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class ConstantBeyond:
    """u(x) = u(nearest window point) outside the window."""


@dataclass(frozen=True)
class Homogeneous1:
    """u(x) = u(p)/s for s*x = p on the window boundary (rays from 0).

    One-homogeneous continuation; requires the origin strictly inside the
    window.
    """


GraphExterior = Union[Affine, ConstantBeyond, Homogeneous1]


# ---------------------------------------------------------------------------
# graph field


@dataclass
class GraphField:
    """u on a uniform node lattice (endpoints included) plus an exterior model."""

    params: FracParams
    window: AlignedBox
    spacing: float
    values: np.ndarray
    exterior: GraphExterior
    seam_tol: float | None = None

    def __post_init__(self):
        if not isinstance(self.params, FracParams):
            raise ParamError("params must be a FracParams")
        if self.window.dim != self.params.n:
            raise ParamError(
                f"window dimension {self.window.dim} != n={self.params.n}")
        h = float(self.spacing)
        if not np.isfinite(h) or h <= 0:
            raise ParamError(f"spacing must be positive, got {self.spacing!r}")
        self.spacing = h
        counts = []
        for d in range(self.window.dim):
            ext = self.window.hi[d] - self.window.lo[d]
            m = ext / h
            if abs(m - round(m)) > 1e-9 * max(1.0, m):
                raise ParamError(
                    f"window extent {ext} on axis {d} is not a multiple of spacing {h}")
            counts.append(int(round(m)) + 1)
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.shape != tuple(counts):
            raise ParamError(
                f"values shape {vals.shape} does not match node counts {tuple(counts)}")
        if not np.all(np.isfinite(vals)):
            raise ParamError("values must be finite")
        self.values = vals
        if isinstance(self.exterior, Affine):
            if len(self.exterior.gradient) != self.params.n:
                raise ParamError("affine gradient dimension mismatch")
        elif isinstance(self.exterior, Homogeneous1):
            if not all(lo < 0 < hi for lo, hi in zip(self.window.lo, self.window.hi)):
                raise ParamError(
                    "one-homogeneous exterior needs the origin inside the window")
        elif not isinstance(self.exterior, ConstantBeyond):
            raise ParamError(f"unknown graph exterior model {self.exterior!r}")
        self._check_seam()

    # -- lattice helpers ----------------------------------------------------

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def axis_nodes(self, d: int) -> np.ndarray:
        return self.window.lo[d] + self.spacing * np.arange(self.shape[d])

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (num_nodes, n), C-order like values."""
        axes = [self.axis_nodes(d) for d in range(self.n)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def interior_mask(self, margin: float | None = None) -> np.ndarray:
        """Nodes at least `margin` from the window boundary (default 2h).

        Flat boolean array in C-order.
        """
        if margin is None:
            margin = 2.0 * self.spacing
        dist = self.window.boundary_distance(self.nodes())
        return dist >= margin - 1e-12 * self.spacing

    def with_values(self, values: np.ndarray) -> "GraphField":
        return replace(self, values=np.asarray(values, dtype=np.float64))

    def value_range(self) -> tuple:
        return float(self.values.min()), float(self.values.max())

    # -- seam ---------------------------------------------------------------

    def _boundary_node_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for d in range(self.n):
            sl = [slice(None)] * self.n
            sl[d] = 0
            mask[tuple(sl)] = True
            sl[d] = -1
            mask[tuple(sl)] = True
        return mask.ravel()

    def _check_seam(self):
        tol = self.seam_tol
        if tol is None:
            tol = 1e-6 * (1.0 + float(np.max(np.abs(self.values))))
        if not isinstance(self.exterior, Affine):
            return  # nearest-boundary and ray continuations agree on the seam
        pts = self.nodes()[self._boundary_node_mask()]
        want = pts @ np.array(self.exterior.gradient) + self.exterior.offset
        got = self.values.ravel()[self._boundary_node_mask()]
        worst = float(np.max(np.abs(want - got))) if len(pts) else 0.0
        if worst > tol:
            raise ParamError(
                f"window boundary values disagree with the affine exterior "
                f"model by {worst:.3e} (tolerance {tol:.3e})")


def _interp(u: GraphField, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at points inside the window, shape (q, n)."""
    lo = np.array(u.window.lo)
    g = (pts - lo) / u.spacing
    i0 = np.floor(g).astype(np.int64)
    for d in range(u.n):
        np.clip(i0[:, d], 0, u.shape[d] - 2, out=i0[:, d])
    f = g - i0
    if u.n == 1:
        v0 = u.values[i0[:, 0]]
        v1 = u.values[i0[:, 0] + 1]
        return v0 * (1 - f[:, 0]) + v1 * f[:, 0]
    i, j = i0[:, 0], i0[:, 1]
    fx, fy = f[:, 0], f[:, 1]
    v00 = u.values[i, j]
    v10 = u.values[i + 1, j]
    v01 = u.values[i, j + 1]
    v11 = u.values[i + 1, j + 1]
    return (v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy)
            + v01 * (1 - fx) * fy + v11 * fx * fy)


def _exterior_values(u: GraphField, pts: np.ndarray) -> np.ndarray:
    ext = u.exterior
    if isinstance(ext, Affine):
        return pts @ np.array(ext.gradient) + ext.offset
    if isinstance(ext, ConstantBeyond):
        clamped = np.clip(pts, np.array(u.window.lo), np.array(u.window.hi))
        return _interp(u, clamped)
    # one-homogeneous: u(x) = u(s x) / s with s x on the window boundary
    s = _ray_exit_scale(u.window, pts)
    p = pts * s[:, None]
    p = np.clip(p, np.array(u.window.lo), np.array(u.window.hi))
    return _interp(u, p) / s


def sample(u: GraphField, x) -> np.ndarray | float:
    """Evaluate the total extension of u at x (shape (n,) or (q, n)).

    Multilinear inside the window, exterior model outside.
    """
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != u.n:
        raise DomainError(f"points have dimension {pts.shape[-1]}, field has n={u.n}")
    out = np.empty(len(pts))
    inside = u.window.contains(pts)
    if np.any(inside):
        out[inside] = _interp(u, pts[inside])
    if np.any(~inside):
        out[~inside] = _exterior_values(u, pts[~inside])
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# exterior models, set side


@dataclass(frozen=True)
class HalfSpace:
    """Membership normal . x < offset outside the box."""

    normal: tuple
    offset: float

    def __post_init__(self):
        nrm = tuple(float(v) for v in np.atleast_1d(self.normal))
        if not all(np.isfinite(nrm)) or not np.isfinite(self.offset):
            raise ParamError(f"half-space exterior needs finite data: {self}")
        if np.linalg.norm(nrm) == 0:
            raise ParamError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", nrm)
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class SubgraphOf:
    """Membership y_last < u(y') outside the box, for a stored graph u."""

    graph: GraphField


@dataclass(frozen=True)
class ConeFrom:
    """Radial continuation: membership copied from the boundary-shell voxel
    hit by the ray from the origin. Requires the origin inside the box."""


@dataclass(frozen=True)
class EmptySet:
    """Nothing outside the box."""


@dataclass(frozen=True)
class Complement:
    """Flip of another exterior model (used by set complements)."""

    inner: "SetExterior"


SetExterior = Union[HalfSpace, SubgraphOf, ConeFrom, EmptySet, Complement]


# ---------------------------------------------------------------------------
# voxel sets


@dataclass
class VoxelSet:
    """Occupancy at voxel centers over a box in the ambient space R^(n+1)."""

    box: AlignedBox
    occupancy: np.ndarray
    exterior: SetExterior
    seam_tol: float = 0.05

    def __post_init__(self):
        if self.box.dim not in (2, 3):
            raise ParamError(f"voxel box must be 2- or 3-dimensional, got {self.box.dim}")
        occ = np.asarray(self.occupancy)
        if occ.ndim != self.box.dim:
            raise ParamError(
                f"occupancy rank {occ.ndim} does not match box dimension {self.box.dim}")
        if occ.size == 0 or any(s < 2 for s in occ.shape):
            raise ParamError(f"occupancy needs at least 2 voxels per axis, got {occ.shape}")
        uniq = np.unique(occ)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ParamError("occupancy must be 0/1 valued")
        self.occupancy = np.ascontiguousarray(occ.astype(np.uint8))
        if isinstance(self.exterior, HalfSpace):
            if len(self.exterior.normal) != self.box.dim:
                raise ParamError("half-space normal dimension mismatch")
        elif isinstance(self.exterior, SubgraphOf):
            g = self.exterior.graph
            if g.n != self.box.dim - 1:
                raise ParamError("subgraph exterior graph dimension mismatch")
        elif isinstance(self.exterior, ConeFrom):
            if not all(lo < 0 < hi for lo, hi in zip(self.box.lo, self.box.hi)):
                raise ParamError("cone exterior needs the origin inside the box")
        elif isinstance(self.exterior, Complement):
            pass
        elif not isinstance(self.exterior, EmptySet):
            raise ParamError(f"unknown set exterior model {self.exterior!r}")
        self._check_seam()

    @property
    def ambient_dim(self) -> int:
        return self.box.dim

    @property
    def resolution(self) -> tuple:
        return self.occupancy.shape

    @property
    def voxel_width(self) -> np.ndarray:
        return self.box.extent / np.array(self.resolution)

    def axis_centers(self, d: int) -> np.ndarray:
        w = self.voxel_width[d]
        return self.box.lo[d] + w * (np.arange(self.resolution[d]) + 0.5)

    def centers(self) -> np.ndarray:
        axes = [self.axis_centers(d) for d in range(self.box.dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def complement(self) -> "VoxelSet":
        ext = self.exterior
        new_ext = ext.inner if isinstance(ext, Complement) else Complement(ext)
        return VoxelSet(box=self.box, occupancy=1 - self.occupancy,
                        exterior=new_ext, seam_tol=self.seam_tol)

    def _boundary_voxel_mask(self) -> np.ndarray:
        mask = np.zeros(self.resolution, dtype=bool)
        for d in range(self.box.dim):
            sl = [slice(None)] * self.box.dim
            sl[d] = 0
            mask[tuple(sl)] = True
            sl[d] = -1
            mask[tuple(sl)] = True
        return mask

    def _check_seam(self):
        if self.seam_tol is None:
            return
        # walk the six (or four) faces instead of materializing every center,
        # so huge grids stay cheap; edge voxels are simply visited twice
        mismatch = 0
        total = 0
        for d in range(self.box.dim):
            for face in (0, self.resolution[d] - 1):
                axes = [np.array([self.axis_centers(j)[face]]) if j == d
                        else self.axis_centers(j) for j in range(self.box.dim)]
                grids = np.meshgrid(*axes, indexing="ij")
                pts = np.stack([g.ravel() for g in grids], axis=-1)
                want = self._exterior_member_at(pts)
                sl = [slice(None)] * self.box.dim
                sl[d] = face
                got = self.occupancy[tuple(sl)].astype(bool).ravel()
                mismatch += int(np.sum(want != got))
                total += len(pts)
        frac = mismatch / total
        if frac > self.seam_tol:
            raise ParamError(
                f"boundary voxel layer disagrees with the exterior model on "
                f"{frac:.1%} of voxels (tolerance {self.seam_tol:.1%})")

    def _exterior_member_at(self, pts: np.ndarray) -> np.ndarray:
        """Exterior-model membership at arbitrary points (box data allowed)."""
        ext = self.exterior
        flip = False
        while isinstance(ext, Complement):
            flip = not flip
            ext = ext.inner
        if isinstance(ext, ConeFrom):
            s = _ray_exit_scale(self.box, pts)
            res = self._lookup(pts * s[:, None])
        else:
            res = _exterior_member(ext, pts)
        return ~res if flip else res

    def _lookup(self, pts: np.ndarray) -> np.ndarray:
        """Occupancy at in-box points."""
        idx = np.floor((pts - np.array(self.box.lo)) / self.voxel_width).astype(np.int64)
        for d in range(self.box.dim):
            np.clip(idx[:, d], 0, self.resolution[d] - 1, out=idx[:, d])
        return self.occupancy[tuple(idx.T)].astype(bool)


def _exterior_member(ext: SetExterior, pts: np.ndarray) -> np.ndarray:
    if isinstance(ext, HalfSpace):
        return pts @ np.array(ext.normal) < ext.offset
    if isinstance(ext, SubgraphOf):
        return pts[:, -1] < sample(ext.graph, pts[:, :-1])
    if isinstance(ext, EmptySet):
        return np.zeros(len(pts), dtype=bool)
    if isinstance(ext, Complement):
        return ~_exterior_member(ext.inner, pts)
    raise ParamError(f"unknown set exterior model {ext!r}")


def member(e: VoxelSet, x) -> np.ndarray | bool:
    """Total membership test at x (shape (N,) or (q, N))."""
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != e.box.dim:
        raise DomainError(
            f"points have dimension {pts.shape[-1]}, set lives in R^{e.box.dim}")
    out = np.empty(len(pts), dtype=bool)
    inside = e.box.contains(pts)
    if np.any(inside):
        out[inside] = e._lookup(pts[inside])
    outside = ~inside
    if np.any(outside):
        out[outside] = e._exterior_member_at(pts[outside])
    return bool(out[0]) if scalar else out


def subgraph_of(u: GraphField, box: AlignedBox | None = None,
                resolution=None, seam_tol: float = 0.05,
                rule: str = "center") -> VoxelSet:
    """Voxelize the subgraph {(x', t) : t < u(x')} over an ambient box.

    The box footprint must cover u's window and the vertical extent must
    cover u's value range; the default box does both with margin. The
    exterior model defers to u's own total extension, so membership stays
    consistent across the box seam.

    rule selects how boundary voxels are classified:
      - "center": occupied iff the voxel center lies below the graph (the
        default; the discrete boundary rounds to the nearest voxel face).
      - "inner":  occupied iff the voxel lies entirely below the graph at
        its column center (conservative from inside; the discrete set is a
        subset of the true subgraph along each column).
      - "outer":  occupied iff the voxel touches the subgraph at its column
        center (conservative from outside; a superset along each column).
    The inner rule on u produces exactly the complemented mirror of the
    outer rule on -u, which is what makes inner/outer averages symmetric
    under negation.
    """
    h = u.spacing
    if box is None:
        vmin, vmax = u.value_range()
        span = max(vmax - vmin, h)
        pad = 0.5 * span + 2 * h
        lo = tuple(u.window.lo) + (vmin - pad,)
        hi = tuple(u.window.hi) + (vmax + pad,)
        # snap the vertical extent to the voxel width so centers stay tidy
        ext = hi[-1] - lo[-1]
        m = int(np.ceil(ext / h))
        hi = hi[:-1] + (lo[-1] + m * h,)
        box = AlignedBox(lo, hi)
    if box.dim != u.n + 1:
        raise DomainError(f"box must be {u.n + 1}-dimensional, got {box.dim}")
    if rule not in ("center", "inner", "outer"):
        raise ParamError(f"rule must be 'center', 'inner', or 'outer', got {rule!r}")
    foot = AlignedBox(box.lo[:-1], box.hi[:-1])
    if any(fl > wl + 1e-12 or fh < wh - 1e-12 for fl, wl, fh, wh in
           zip(foot.lo, u.window.lo, foot.hi, u.window.hi)):
        raise DomainError("box footprint must cover the graph window")
    if resolution is None:
        resolution = tuple(int(round(v)) for v in box.extent / h)
    elif np.isscalar(resolution):
        resolution = (int(resolution),) * box.dim
    else:
        resolution = tuple(int(r) for r in resolution)
    if any(r < 2 for r in resolution):
        raise ParamError(f"resolution must be at least 2 per axis, got {resolution}")
    vmin, vmax = u.value_range()
    if box.lo[-1] > vmin - 1e-12 or box.hi[-1] < vmax + 1e-12:
        raise DomainError(
            f"box vertical range [{box.lo[-1]}, {box.hi[-1]}] does not cover "
            f"the value range [{vmin}, {vmax}]")

    # occupancy separates into (footprint sample) x (height comparison), so
    # build it by broadcasting instead of materializing every cell center
    axes = [box.lo[d] + (box.extent[d] / resolution[d]) * (np.arange(resolution[d]) + 0.5)
            for d in range(box.dim)]
    foot_grids = np.meshgrid(*axes[:-1], indexing="ij")
    foot_pts = np.stack([g.ravel() for g in foot_grids], axis=-1)
    uvals = sample(u, foot_pts)
    # shift by just under half a voxel so exact-face boundaries stay put
    wv_ax = box.extent[-1] / resolution[-1]
    shift = (0.5 - 1e-7) * wv_ax
    if rule == "inner":
        uvals = uvals - shift
    elif rule == "outer":
        uvals = uvals + shift
    occ = axes[-1][None, :] < uvals[:, None]
    return VoxelSet(box=box, occupancy=occ.reshape(resolution).astype(np.uint8),
                    exterior=SubgraphOf(u), seam_tol=seam_tol)


# ---------------------------------------------------------------------------
# quadrature spec


@dataclass(frozen=True)
class QuadratureSpec:
    """Accuracy knobs shared by the curvature, energy, and perimeter engines.

    far_radius is where quadrature stops and the analytic tail bound starts;
    None lets each plan grow it until the tail fits tail_budget. With a pinned
    far_radius, a plan whose tail bound exceeds tail_budget raises a budget
    error carrying the radius that would have sufficed. inner_tolerance
    steers near-field refinement depth. lattice_radius caps the uniform
    node-resolution part of graph plans (None = the window diameter, which is
    what makes the energy gradient identity exact); smaller values trade
    accuracy for speed and are what the bulk verification suites use. The
    singular rule is fixed: the symmetrized pair rule with the center cell
    excluded.
    """

    far_radius: float | None = None
    tail_budget: float = 1e-4
    inner_tolerance: float = 1e-6
    lattice_radius: float | None = None
    angular_nodes: int = 64
    sphere_nodes: int = 256
    geometric_per_octave: int = 8
    max_far_radius: float = 1e12

    def __post_init__(self):
        if self.far_radius is not None and (not np.isfinite(self.far_radius)
                                            or self.far_radius <= 0):
            raise ParamError(f"far_radius must be positive, got {self.far_radius!r}")
        if self.lattice_radius is not None and (not np.isfinite(self.lattice_radius)
                                                or self.lattice_radius <= 0):
            raise ParamError(
                f"lattice_radius must be positive, got {self.lattice_radius!r}")
        if not 0 < self.tail_budget:
            raise ParamError(f"tail_budget must be positive, got {self.tail_budget!r}")
        if not 0 < self.inner_tolerance:
            raise ParamError(
                f"inner_tolerance must be positive, got {self.inner_tolerance!r}")
        for name in ("angular_nodes", "sphere_nodes", "geometric_per_octave"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 4:
                raise ParamError(f"{name} must be an integer >= 4, got {v!r}")
        if self.max_far_radius <= 0:
            raise ParamError("max_far_radius must be positive")


# ---------------------------------------------------------------------------
# serialization
#
# One JSON document per object. Graph fields use the keys
#   n, alpha, window, spacing, exterior, values
# and voxel sets use
#   n, window, resolution, exterior, occupancy
# where n is the dimension the samples live in. Arrays are written as
# base64-packed little-endian buffers (bit-exact round trips); readers also
# accept plain JSON arrays or a CSV string.


def _pack_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr)
    return {
        "dtype": str(a.dtype),
        "shape": list(a.shape),
        "base64": base64.b64encode(a.astype(a.dtype.newbyteorder("<")).tobytes()).decode("ascii"),
    }


def _unpack_array(obj, key: str, dtype) -> np.ndarray:
    if isinstance(obj, dict):
        for want in ("dtype", "shape", "base64"):
            if want not in obj:
                raise ParamError(f"key '{key}' is missing field '{want}'")
        raw = base64.b64decode(obj["base64"])
        arr = np.frombuffer(raw, dtype=np.dtype(obj["dtype"]).newbyteorder("<"))
        return arr.reshape(obj["shape"]).astype(dtype)
    if isinstance(obj, str):
        try:
            return np.loadtxt(io.StringIO(obj), delimiter=",", dtype=dtype, ndmin=1)
        except ValueError as exc:
            raise ParamError(f"key '{key}' holds unparseable CSV: {exc}") from exc
    if isinstance(obj, list):
        return np.asarray(obj, dtype=dtype)
    raise ParamError(f"key '{key}' must be a packed array, JSON array, or CSV string")


def _exterior_to_json(ext) -> dict:
    if isinstance(ext, Affine):
        return {"variant": "affine", "gradient": list(ext.gradient), "offset": ext.offset}
    if isinstance(ext, ConstantBeyond):
        return {"variant": "constant_beyond"}
    if isinstance(ext, Homogeneous1):
        return {"variant": "homogeneous1"}
    if isinstance(ext, HalfSpace):
        return {"variant": "half_space", "normal": list(ext.normal), "offset": ext.offset}
    if isinstance(ext, SubgraphOf):
        return {"variant": "subgraph_of", "field": _graph_to_json(ext.graph)}
    if isinstance(ext, ConeFrom):
        return {"variant": "cone_from"}
    if isinstance(ext, EmptySet):
        return {"variant": "empty"}
    if isinstance(ext, Complement):
        return {"variant": "complement", "inner": _exterior_to_json(ext.inner)}
    raise ParamError(f"unknown exterior model {ext!r}")


def _exterior_from_json(obj) -> object:
    if not isinstance(obj, dict) or "variant" not in obj:
        raise ParamError("key 'exterior' must be an object with a 'variant' field")
    kind = obj["variant"]
    if kind == "affine":
        for want in ("gradient", "offset"):
            if want not in obj:
                raise ParamError(f"affine exterior is missing key '{want}'")
        return Affine(tuple(obj["gradient"]), float(obj["offset"]))
    if kind == "constant_beyond":
        return ConstantBeyond()
    if kind == "homogeneous1":
        return Homogeneous1()
    if kind == "half_space":
        for want in ("normal", "offset"):
            if want not in obj:
                raise ParamError(f"half_space exterior is missing key '{want}'")
        return HalfSpace(tuple(obj["normal"]), float(obj["offset"]))
    if kind == "subgraph_of":
        if "field" not in obj:
            raise ParamError("subgraph_of exterior is missing key 'field'")
        return SubgraphOf(_graph_from_json(obj["field"]))
    if kind == "cone_from":
        return ConeFrom()
    if kind == "empty":
        return EmptySet()
    if kind == "complement":
        if "inner" not in obj:
            raise ParamError("complement exterior is missing key 'inner'")
        return Complement(_exterior_from_json(obj["inner"]))
    raise ParamError(f"unknown exterior variant '{kind}'")


def _box_to_json(box: AlignedBox) -> dict:
    return {"lo": list(box.lo), "hi": list(box.hi)}


def _box_from_json(obj, key: str) -> AlignedBox:
    if not isinstance(obj, dict) or "lo" not in obj or "hi" not in obj:
        raise ParamError(f"key '{key}' must be an object with 'lo' and 'hi'")
    return AlignedBox(tuple(obj["lo"]), tuple(obj["hi"]))


def _graph_to_json(u: GraphField) -> dict:
    return {
        "n": u.params.n,
        "alpha": u.params.alpha,
        "window": _box_to_json(u.window),
        "spacing": u.spacing,
        "exterior": _exterior_to_json(u.exterior),
        "values": _pack_array(u.values),
    }


def _graph_from_json(doc) -> GraphField:
    if not isinstance(doc, dict):
        raise ParamError("graph document must be a JSON object")
    for want in ("n", "alpha", "window", "spacing", "exterior", "values"):
        if want not in doc:
            raise ParamError(f"graph document is missing key '{want}'")
    params = FracParams(int(doc["n"]), float(doc["alpha"]))
    window = _box_from_json(doc["window"], "window")
    values = _unpack_array(doc["values"], "values", np.float64)
    if values.ndim == 1 and params.n == 2:
        # tolerate flattened payloads when the lattice shape is implied
        m = [int(round((window.hi[d] - window.lo[d]) / float(doc["spacing"]))) + 1
             for d in range(2)]
        values = values.reshape(m)
    return GraphField(params=params, window=window, spacing=float(doc["spacing"]),
                      values=values, exterior=_exterior_from_json(doc["exterior"]))


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_graph_field(u: GraphField, path: str):
    """Write u as a single JSON document (atomic: temp file then rename)."""
    _atomic_write(path, json.dumps(_graph_to_json(u), sort_keys=True))


def load_graph_field(path: str) -> GraphField:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParamError(f"{path} is not valid JSON: {exc}") from exc
    return _graph_from_json(doc)


def save_voxel_set(e: VoxelSet, path: str):
    """Write e as a single JSON document (atomic: temp file then rename)."""
    doc = {
        "n": e.box.dim,
        "window": _box_to_json(e.box),
        "resolution": list(e.resolution),
        "exterior": _exterior_to_json(e.exterior),
        "occupancy": _pack_array(e.occupancy),
    }
    _atomic_write(path, json.dumps(doc, sort_keys=True))


def load_voxel_set(path: str) -> VoxelSet:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParamError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParamError("voxel document must be a JSON object")
    for want in ("n", "window", "resolution", "exterior", "occupancy"):
        if want not in doc:
            raise ParamError(f"voxel document is missing key '{want}'")
    box = _box_from_json(doc["window"], "window")
    occ = _unpack_array(doc["occupancy"], "occupancy", np.uint8)
    res = tuple(int(r) for r in doc["resolution"])
    if occ.ndim == 1 and len(res) > 1:
        occ = occ.reshape(res)
    if occ.shape != res:
        raise ParamError(
            f"occupancy shape {occ.shape} does not match resolution {res}")
    return VoxelSet(box=box, occupancy=occ,
                    exterior=_exterior_from_json(doc["exterior"]))
