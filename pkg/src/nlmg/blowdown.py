"""Blow-down rescaling and limit-structure detection for voxel sets.

Zooming out of a set at scale r is the map E -> (E - x)/r.  Along growing
scales the rescalings of a perimeter minimizer settle into a cone, and the
possible limit shapes are told apart by volume defects measured on a fixed
ball B_R: distance from the half-scale copy (cone defect), from a unit
translate (cylinder defect), and from the best-fit plane subgraph
(half-space defect).  All defects are voxel measures of symmetric
differences normalized by |B_R|, so "zero" means below a few voxel layers;
verdicts additionally require the defect trace to trend downward, since a
single small value at one scale proves nothing about a limit.

Center independence is quantified by `center_gap`: the volume of
(E_{x,r} symmetric-difference E_{y,r}) within B_R, which decays like
|x - y| / r because the two rescalings differ by a shrinking translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParamError
from .field import (
    Affine,
    AlignedBox,
    Complement,
    ConeFrom,
    ConstantBeyond,
    EmptySet,
    GraphField,
    HalfSpace,
    Homogeneous1,
    SubgraphOf,
    VoxelSet,
    subgraph_of,
)

__all__ = [
    "BlowdownReport",
    "Verdict",
    "blowdown_analyze",
    "center_gap",
    "cone_defect",
    "cylinder_defect",
    "rescale_graph",
    "rescale_set",
]


VERDICT_KINDS = ("HalfSpace", "CylinderSplit", "ConeDetected", "Inconclusive")


@dataclass(frozen=True)
class Verdict:
    """Detected limit structure; `directions` is empty unless a cylinder split."""

    kind: str
    directions: tuple = ()

    def __post_init__(self):
        if self.kind not in VERDICT_KINDS:
            raise ParamError(f"verdict kind must be one of {VERDICT_KINDS}")
        object.__setattr__(self, "directions",
                           tuple(tuple(float(c) for c in d) for d in self.directions))
        if self.directions and self.kind != "CylinderSplit":
            raise ParamError("only CylinderSplit carries directions")

    def __str__(self):
        if self.kind == "CylinderSplit":
            axes = ", ".join("(" + ", ".join(f"{c:g}" for c in d) + ")"
                             for d in self.directions)
            return f"CylinderSplit[{axes}]"
        return self.kind


@dataclass(frozen=True)
class BlowdownReport:
    """Defect traces along increasing scales plus the detected structure.

    All traces align index-by-index with `scales`; `cylinder_defects` maps
    each probed unit direction to its trace.  `tolerance` is the defect
    level treated as zero (a few voxel layers at the working resolution).
    """

    scales: tuple
    cone_defects: tuple
    cylinder_defects: dict
    center_gaps: tuple
    halfspace_defects: tuple
    tolerance: float
    verdict: Verdict

    def __post_init__(self):
        m = len(self.scales)
        traces = [self.cone_defects, self.center_gaps, self.halfspace_defects,
                  *self.cylinder_defects.values()]
        if any(len(t) != m for t in traces):
            raise ParamError("defect traces must align with scales")
        if any(v < 0 for t in traces for v in t):
            raise ParamError("defects are volumes and cannot be negative")


# ---------------------------------------------------------------------------
# rescaling operators


def rescale_graph(u: GraphField, r) -> GraphField:
    """The graph of u(r x)/r: window and spacing shrink by r, values divide.

    Affine exteriors keep their gradient (the offset divides), and
    one-homogeneous exteriors are invariant; no resampling happens, so
    rescaling composes exactly: rescale(rescale(u, r), s) == rescale(u, r*s)
    up to roundoff.
    """
    if not isinstance(u, GraphField):
        raise ParamError(f"u must be a GraphField, got {type(u).__name__}")
    r = float(r)
    if not math.isfinite(r) or r <= 0.0:
        raise ParamError(f"rescale factor must be positive and finite, got {r!r}")
    ext = u.exterior
    if isinstance(ext, Affine):
        ext = Affine(ext.gradient, ext.offset / r)
    window = AlignedBox(tuple(lo / r for lo in u.window.lo),
                        tuple(hi / r for hi in u.window.hi))
    return GraphField(params=u.params, window=window, spacing=u.spacing / r,
                      values=u.values / r, exterior=ext, seam_tol=u.seam_tol)


def _rescale_set_exterior(ext, x, r):
    if isinstance(ext, Complement):
        return Complement(_rescale_set_exterior(ext.inner, x, r))
    if isinstance(ext, EmptySet):
        return EmptySet()
    if isinstance(ext, HalfSpace):
        nrm = np.asarray(ext.normal)
        return HalfSpace(ext.normal, (ext.offset - float(x @ nrm)) / r)
    if isinstance(ext, ConeFrom):
        if np.any(x != 0.0):
            raise DomainError(
                "a radial cone exterior only rescales about its apex at the origin")
        return ConeFrom()
    if isinstance(ext, SubgraphOf):
        g = ext.graph
        if not np.any(x != 0.0):
            return SubgraphOf(rescale_graph(g, r))
        xh, xv = x[:-1], float(x[-1])
        gext = g.exterior
        if isinstance(gext, Affine):
            grad = np.asarray(gext.gradient)
            gext = Affine(gext.gradient,
                          (float(grad @ xh) + gext.offset - xv) / r)
        elif isinstance(gext, Homogeneous1):
            raise DomainError(
                "a one-homogeneous graph exterior only rescales about the origin")
        window = AlignedBox(tuple((lo - c) / r for lo, c in zip(g.window.lo, xh)),
                            tuple((hi - c) / r for hi, c in zip(g.window.hi, xh)))
        shifted = GraphField(params=g.params, window=window, spacing=g.spacing / r,
                             values=(g.values - xv) / r, exterior=gext,
                             seam_tol=g.seam_tol)
        return SubgraphOf(shifted)
    raise ParamError(f"unknown set exterior model {ext!r}")


def rescale_set(e: VoxelSet, x, r) -> VoxelSet:
    """E_{x,r} = (E - x)/r on the same voxel lattice, box mapped accordingly.

    The occupancy array is untouched (cells shrink with the box), and the
    exterior model is mapped exactly; a radial-cone or one-homogeneous
    exterior only admits rescaling about the origin.
    """
    if not isinstance(e, VoxelSet):
        raise ParamError(f"e must be a VoxelSet, got {type(e).__name__}")
    r = float(r)
    if not math.isfinite(r) or r <= 0.0:
        raise ParamError(f"rescale factor must be positive and finite, got {r!r}")
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    if xv.size != e.box.dim or not np.all(np.isfinite(xv)):
        raise ParamError(
            f"center must be a finite point in R^{e.box.dim}, got {x!r}")
    box = AlignedBox(tuple((lo - c) / r for lo, c in zip(e.box.lo, xv)),
                     tuple((hi - c) / r for hi, c in zip(e.box.hi, xv)))
    return VoxelSet(box=box, occupancy=e.occupancy.copy(),
                    exterior=_rescale_set_exterior(e.exterior, xv, r),
                    seam_tol=e.seam_tol)


# ---------------------------------------------------------------------------
# voxel-measured defects


def _ball_volume(dim: int, radius: float) -> float:
    return math.pi ** (dim / 2.0) * radius ** dim / math.gamma(dim / 2.0 + 1.0)


def _occupancy_at(e: VoxelSet, pts: np.ndarray, what: str) -> np.ndarray:
    """Cellwise indicator at explicit points, which must stay inside the box."""
    lo = np.asarray(e.box.lo)
    hi = np.asarray(e.box.hi)
    if pts.size and (np.any(pts < lo) or np.any(pts >= hi)):
        raise DomainError(f"{what} reads occupancy outside the sampling box; "
                          "enlarge the box or shrink the probe radius")
    idx = np.floor((pts - lo) / e.voxel_width).astype(np.int64)
    for d in range(e.box.dim):
        np.clip(idx[:, d], 0, e.resolution[d] - 1, out=idx[:, d])
    return e.occupancy[tuple(idx.T)].astype(bool)


def _centers_in_ball(e: VoxelSet, center, radius: float):
    pts = e.centers()
    d2 = np.sum((pts - np.asarray(center)) ** 2, axis=1)
    mask = d2 <= radius * radius
    if not mask.any():
        raise DomainError(
            f"no voxel centers inside the radius-{radius:g} probe ball; "
            "refine the grid or enlarge the radius")
    return pts[mask], e.occupancy.reshape(-1)[mask].astype(bool)


def _check_radius(e: VoxelSet, R, what: str) -> float:
    R = float(R)
    if not math.isfinite(R) or R <= 0.0:
        raise ParamError(f"{what} radius must be positive and finite, got {R!r}")
    return R


def cone_defect(e: VoxelSet, R) -> float:
    """Normalized volume of (E symdiff E_{0,2}) within B_R.

    Compares the set against its half-scale copy, so occupancy is read out
    to radius 2R; zero (up to voxel layers) exactly when the occupancy is
    invariant under doubling, i.e. a cone about the origin.
    """
    if not isinstance(e, VoxelSet):
        raise ParamError(f"e must be a VoxelSet, got {type(e).__name__}")
    R = _check_radius(e, R, "cone-defect")
    pts, m1 = _centers_in_ball(e, np.zeros(e.box.dim), R)
    m2 = _occupancy_at(e, 2.0 * pts, "the half-scale comparison")
    vol = float(np.prod(e.voxel_width))
    return float(np.sum(m1 != m2)) * vol / _ball_volume(e.box.dim, R)


def cylinder_defect(e: VoxelSet, v, R, one_sided: bool = False) -> float:
    """Normalized volume of ((E + v) symdiff E) within B_R for a unit vector v.

    Zero exactly when the occupancy is translation invariant along v.  With
    `one_sided` the measure is of (E + v) setminus E only, which tests the
    inclusion E + v within E; the downward vertical one-sided defect of any
    subgraph voxelization vanishes identically because occupancy columns
    are monotone.
    """
    if not isinstance(e, VoxelSet):
        raise ParamError(f"e must be a VoxelSet, got {type(e).__name__}")
    R = _check_radius(e, R, "cylinder-defect")
    vv = np.asarray(v, dtype=np.float64).reshape(-1)
    if vv.size != e.box.dim or not np.all(np.isfinite(vv)):
        raise ParamError(f"direction must be a finite vector in R^{e.box.dim}")
    nrm = float(np.linalg.norm(vv))
    if nrm == 0.0:
        raise ParamError("direction must be nonzero")
    vv = vv / nrm
    pts, m1 = _centers_in_ball(e, np.zeros(e.box.dim), R)
    m2 = _occupancy_at(e, pts - vv, "the unit-translation comparison")
    diff = (m2 & ~m1) if one_sided else (m2 != m1)
    vol = float(np.prod(e.voxel_width))
    return float(np.sum(diff)) * vol / _ball_volume(e.box.dim, R)


def center_gap(e: VoxelSet, x, y, r, R) -> float:
    """Volume of (E_{x,r} symdiff E_{y,r}) within B_R, voxel-measured.

    Both rescaled balls B_{rR}(x) and B_{rR}(y) must sit inside the sampling
    box.  The gap is measured on the lattice of E_{x,r} (cells whose centers
    land in B_R), comparing against pointwise occupancy of the other
    rescaling, and decays like |x - y|/r times the interface area.
    """
    if not isinstance(e, VoxelSet):
        raise ParamError(f"e must be a VoxelSet, got {type(e).__name__}")
    r = float(r)
    if not math.isfinite(r) or r <= 0.0:
        raise ParamError(f"rescale factor must be positive and finite, got {r!r}")
    R = _check_radius(e, R, "gap")
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    if xv.size != e.box.dim or yv.size != e.box.dim \
            or not np.all(np.isfinite(xv)) or not np.all(np.isfinite(yv)):
        raise ParamError(f"centers must be finite points in R^{e.box.dim}")
    for c in (xv, yv):
        gaps = [min(c[d] - r * R - e.box.lo[d], e.box.hi[d] - c[d] - r * R)
                for d in range(e.box.dim)]
        if min(gaps) <= 0.0:
            raise DomainError(
                f"the rescaled ball B_{R:g} about {tuple(c)} at scale {r:g} "
                "reaches outside the sampling box")
    pts, m1 = _centers_in_ball(e, xv, r * R)
    m2 = _occupancy_at(e, pts + (yv - xv), "the recentred comparison")
    vol = float(np.prod(e.voxel_width))
    return float(np.sum(m1 != m2)) * vol / r ** e.box.dim


# ---------------------------------------------------------------------------
# scale-sweep analysis


def _crop_graph(u: GraphField, half: float) -> GraphField:
    """Restrict u to its node sub-lattice inside [-half, half]^n.

    Returns u unchanged when the window already fits.  The cropped field
    continues by nearest boundary value; callers only consume samples
    strictly inside the cropped footprint.
    """
    if all(lo >= -half - 1e-12 and hi <= half + 1e-12
           for lo, hi in zip(u.window.lo, u.window.hi)):
        return u
    h = u.spacing
    lo_idx, hi_idx = [], []
    for d in range(u.n):
        lo_d = u.window.lo[d]
        a = max(int(math.ceil((-half - lo_d - 1e-12) / h)), 0)
        b = min(int(math.floor((half - lo_d + 1e-12) / h)), u.shape[d] - 1)
        if b - a < 2:
            raise DomainError(
                "analysis region needs at least three graph nodes per axis; "
                "refine the node spacing or enlarge the scales")
        lo_idx.append(a)
        hi_idx.append(b)
    sl = tuple(slice(a, b + 1) for a, b in zip(lo_idx, hi_idx))
    window = AlignedBox(tuple(u.window.lo[d] + lo_idx[d] * h for d in range(u.n)),
                        tuple(u.window.lo[d] + hi_idx[d] * h for d in range(u.n)))
    return GraphField(params=u.params, window=window, spacing=h,
                      values=u.values[sl], exterior=ConstantBeyond(),
                      seam_tol=u.seam_tol)


def _subgraph_on_region(u: GraphField, half: float, vw: float,
                        vertical_reach: float) -> VoxelSet:
    """Voxelize the subgraph over [-half, half]^n x (adaptive vertical span).

    The vertical span covers both the value range and +-vertical_reach, with
    cubic cells of width vw snapped onto the lattice.
    """
    cropped = _crop_graph(u, half)
    vmin, vmax = cropped.value_range()
    lo_v = min(vmin - 2.0 * vw, -vertical_reach)
    hi_v = max(vmax + 2.0 * vw, vertical_reach)
    res_h = int(round(2.0 * half / vw))
    res_v = int(math.ceil((hi_v - lo_v) / vw))
    hi_v = lo_v + res_v * vw
    n = u.n
    box = AlignedBox((-half,) * n + (lo_v,), (half,) * n + (hi_v,))
    return subgraph_of(cropped, box=box, resolution=(res_h,) * n + (res_v,))


def _fit_plane_defect(e: VoxelSet, u: GraphField, R: float) -> float:
    """Normalized volume between the set and its best-fit plane subgraph on B_R."""
    nodes = u.nodes()
    vals = u.values.reshape(-1)
    hmask = np.sum(nodes ** 2, axis=1) <= R * R
    if not hmask.any():
        hmask = np.ones(len(nodes), dtype=bool)
    A = np.column_stack([nodes[hmask], np.ones(int(hmask.sum()))])
    coef, *_ = np.linalg.lstsq(A, vals[hmask], rcond=None)
    grad, off = coef[:-1], coef[-1]
    pts, m1 = _centers_in_ball(e, np.zeros(e.box.dim), R)
    plane = pts[:, -1] < pts[:, :-1] @ grad + off
    vol = float(np.prod(e.voxel_width))
    return float(np.sum(plane != m1)) * vol / _ball_volume(e.box.dim, R)


def _trending_zero(trace, tol: float) -> bool:
    """Below tolerance at the last scale, and either clearly small or decaying.

    A constant trace hovering just under the tolerance is not convergence;
    it must sit below half the tolerance or lose at least twenty percent
    per step across the final three scales.
    """
    if trace[-1] >= tol:
        return False
    if trace[-1] <= 0.5 * tol:
        return True
    tail = list(trace[-3:])
    return all(tail[i + 1] <= 0.8 * tail[i] for i in range(len(tail) - 1))


def blowdown_analyze(u: GraphField, scales, directions=None, *, R=1.0,
                     defect_resolution=None, gap_resolution=None,
                     tolerance=None) -> BlowdownReport:
    """Rescale the subgraph of u along increasing scales and classify the limit.

    Per scale r the graph u(r x)/r is voxelized over a fixed analysis box
    around B_R (default R = 1) and three defects are recorded: from the
    half-scale copy (cone), from unit translates along each probe direction
    (cylinder), and from the best-fit plane subgraph (half-space); a fourth
    trace measures the gap between rescalings centred at the origin and at
    the first lattice point.  The verdict is HalfSpace when the plane defect
    trends to zero, else CylinderSplit along the directions whose defects
    do, else ConeDetected when the half-scale defect does, else
    Inconclusive.  "Trends to zero" means below `tolerance` (default: three
    voxel-layer volumes) at the last scale, and either below half of it or
    decaying across the final three scales.

    `directions` defaults to the horizontal axis vectors; entries are
    normalized ambient vectors.  `defect_resolution` and `gap_resolution`
    set cells per axis of the analysis and gap-measurement lattices.
    """
    if not isinstance(u, GraphField):
        raise ParamError(f"u must be a GraphField, got {type(u).__name__}")
    scales = [float(s) for s in np.atleast_1d(np.asarray(scales, dtype=np.float64))]
    if not scales:
        raise ParamError("scales must be a nonempty increasing sequence")
    if not all(math.isfinite(s) and s > 0 for s in scales):
        raise ParamError(f"scales must be positive and finite, got {scales!r}")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ParamError(f"scales must be strictly increasing, got {scales!r}")
    R = float(R)
    if not math.isfinite(R) or R <= 0.0:
        raise ParamError(f"analysis radius must be positive and finite, got {R!r}")
    N = u.n + 1
    if directions is None:
        dirs = [np.eye(N)[d] for d in range(u.n)]
    else:
        dirs = [np.asarray(d, dtype=np.float64).reshape(-1) for d in directions]
        for d in dirs:
            if d.size != N or not np.all(np.isfinite(d)):
                raise ParamError(f"directions must be finite vectors in R^{N}")
            if float(np.linalg.norm(d)) == 0.0:
                raise ParamError("directions must be nonzero")
        dirs = [d / float(np.linalg.norm(d)) for d in dirs]
    dir_keys = [tuple(float(c) for c in d) for d in dirs]

    half = max(2.5 * R, R + 1.25)
    res = int(defect_resolution) if defect_resolution else (160 if N == 2 else 128)
    if res < 8:
        raise ParamError(f"defect resolution must be at least 8, got {res}")
    vw = 2.0 * half / res
    layer = _ball_volume(N - 1, R) * vw / _ball_volume(N, R)
    tol = 3.0 * layer if tolerance is None else float(tolerance)
    if not math.isfinite(tol) or tol <= 0.0:
        raise ParamError(f"tolerance must be positive and finite, got {tolerance!r}")

    cone_tr, hs_tr = [], []
    cyl_tr = {k: [] for k in dir_keys}
    for r in scales:
        ur = rescale_graph(u, r)
        er = _subgraph_on_region(ur, half, vw, 2.2 * R)
        cone_tr.append(cone_defect(er, R))
        for k, d in zip(dir_keys, dirs):
            cyl_tr[k].append(cylinder_defect(er, d, R))
        hs_tr.append(_fit_plane_defect(er, _crop_graph(ur, half), R))

    # one coarse voxelization of the original subgraph spans every scale's
    # recentred comparison
    y_off = np.eye(N)[0]
    gap_half = scales[-1] * R + 1.5
    gres = int(gap_resolution) if gap_resolution else \
        int(round(2.0 * gap_half * (16 if N == 2 else 4)))
    gvw = 2.0 * gap_half / gres
    e_gap = _subgraph_on_region(u, gap_half, gvw, scales[-1] * R + 2.0 * gvw)
    gaps = [center_gap(e_gap, np.zeros(N), y_off, r, R) for r in scales]

    hs_ok = _trending_zero(hs_tr, tol)
    cyl_dirs = tuple(k for k in dir_keys if _trending_zero(cyl_tr[k], tol))
    if hs_ok:
        verdict = Verdict("HalfSpace")
    elif cyl_dirs:
        verdict = Verdict("CylinderSplit", cyl_dirs)
    elif _trending_zero(cone_tr, tol):
        verdict = Verdict("ConeDetected")
    else:
        verdict = Verdict("Inconclusive")
    return BlowdownReport(scales=tuple(scales), cone_defects=tuple(cone_tr),
                          cylinder_defects={k: tuple(t) for k, t in cyl_tr.items()},
                          center_gaps=tuple(gaps), halfspace_defects=tuple(hs_tr),
                          tolerance=tol, verdict=verdict)
