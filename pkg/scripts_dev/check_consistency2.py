import math
import time
import numpy as np

from nlmg.field import (AlignedBox, Affine, GraphField, HalfSpace, VoxelSet,
                        subgraph_of)
from nlmg.kernel import FracParams
from nlmg.curvature import (QuadratureSpec, curvature_at, graph_set_consistency,
                            set_curvature_at)

P = FracParams(n=1, alpha=0.5)
q = QuadratureSpec()


def mkfield(f, half, h, ext):
    n = round(2 * half / h) + 1
    xs = -half + h * np.arange(n)
    vals = f(xs)
    w = AlignedBox((-half,), (half,))
    return GraphField(params=P, window=w, spacing=h, values=vals, exterior=ext)


def bump(xs):
    out = np.zeros_like(xs)
    m = np.abs(xs) < 2.0
    s = xs[m] / 2.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s * s))
    return out


from nlmg.field import ConstantBeyond

cases = [
    ("flat", lambda xs: np.full_like(xs, 1.3), Affine((0.0,), 1.3), 0.0),
    ("affine.317", lambda xs: 0.317 * xs, Affine((0.317,), 0.0), 0.0),
    ("parabola", lambda xs: -0.25 * xs ** 2 + 2.5, ConstantBeyond(), 0.0),
    ("bump@0", bump, Affine((0.0,), 0.0), 0.0),
    ("bump@.5", bump, Affine((0.0,), 0.0), 0.5),
]

for name, f, ext, x0 in cases:
    print(f"--- {name} (x={x0}) ---")
    defects = []
    for h in (1 / 16, 1 / 32):
        # half chosen so x0 is h-lattice aligned for any h in the list
        u = mkfield(f, 4.0 + h, h, ext)
        t0 = time.time()
        rep = graph_set_consistency(u, (x0,), q)
        dt = time.time() - t0
        defects.append(rep.defect)
        print(f"h=1/{round(1/h):3d}  graph={rep.graph_value:+.6f}  "
              f"set={rep.set_value:+.6f}  defect={rep.defect:.3e}  "
              f"gerr={rep.graph_err:.2f} serr={rep.set_err:.2f}  [{dt:.1f}s]")
    r = [defects[i] / defects[i + 1] for i in range(len(defects) - 1)]
    print("ratios:", ", ".join(f"{v:.3f}" for v in r))

# mirror symmetry of the defect under u -> -u
u = mkfield(bump, 4.0 + 1 / 16, 1 / 16, Affine((0.0,), 0.0))
um = mkfield(lambda xs: -bump(xs), 4.0 + 1 / 16, 1 / 16, Affine((0.0,), 0.0))
r1 = graph_set_consistency(u, (0.5,), q)
r2 = graph_set_consistency(um, (0.5,), q)
print(f"mirror: defect(u)={r1.defect:.12e} defect(-u)={r2.defect:.12e} "
      f"reldiff={abs(r1.defect - r2.defect) / r1.defect:.2e}")

# half-space nullity
hs_box = AlignedBox((-4, -4), (4, 4))
nv = 128
yy = (np.arange(nv) + 0.5) / nv * 8.0 - 4.0
occ = np.broadcast_to((yy < 0.0)[None, :], (nv, nv)).astype(np.uint8).copy()
ehs = VoxelSet(box=hs_box, occupancy=occ, exterior=HalfSpace((0.0, 1.0), 0.0))
v, err = set_curvature_at(ehs, np.array([0.1 * 8 / nv + 0.0, 0.0]), P, q)
print(f"half-space: value={v:.3e} err={err:.3f}")

# complement antisymmetry on a ball
ORACLE_BALL = 14.832597418412801
nb = 256
bw = 3.0
axv = (np.arange(nb) + 0.5) / nb * 2 * bw - bw
X, Y = np.meshgrid(axv, axv, indexing="ij")
occb = ((X ** 2 + Y ** 2) < 1.0).astype(np.uint8)
ebref = VoxelSet(box=AlignedBox((-bw, -bw), (bw, bw)), occupancy=occb,
                 exterior=HalfSpace((0.0, 1.0), -1e9))
vals = []
for k in range(8):
    th = 2 * math.pi * (k + 0.37) / 8
    pt = np.array([math.cos(th), math.sin(th)])
    vb, eb = set_curvature_at(ebref, pt, P, q)
    vals.append((vb, eb))
    ok = abs(vb - ORACLE_BALL) <= 2 * eb
    print(f"ball pt{k}: value={vb:.4f} err={eb:.3f} |v-oracle|={abs(vb-ORACLE_BALL):.3f} ok={ok}")
vc, ec = set_curvature_at(ebref.complement(), np.array([1.0, 0.0]), P, q)
vo, eo = set_curvature_at(ebref, np.array([1.0, 0.0]), P, q)
print(f"complement: v={vo:.10f} vC={vc:.10f} sum={vo + vc:.3e}")
