import time

import numpy as np

from nlmg import (AlignedBox, Ball, EmptySet, FracParams, HalfSpace,
                  QuadratureSpec, VoxelSet, frac_perimeter, perimeter_growth)

ORACLE = 25.600085908749943
I1 = 16.755160819145562
I2 = 8.84492508960438
P2 = FracParams(n=1, alpha=0.5)


def halfspace(res, extent=2.0):
    box = AlignedBox((-extent, -extent), (extent, extent))
    w = 2 * extent / res
    yc = -extent + w * (np.arange(res) + 0.5)
    occ = np.zeros((res, res), np.uint8)
    occ[:, yc < 0] = 1
    return VoxelSet(box=box, occupancy=occ, exterior=HalfSpace((0.0, 1.0), 0.0))


print("== oracle configuration, resolutions ==", flush=True)
for res in (64, 128, 256, 512):
    e = halfspace(res)
    t = time.time()
    r = frac_perimeter(e, Ball((0.0, 0.0), 1.0), P2)
    dt = time.time() - t
    print(f"res {res:4d}: value {r.value:.9f} relerr {abs(r.value-ORACLE)/ORACLE:.3e} "
          f"err {r.err:.3e} split ({r.split[0]:.6f}, {r.split[1]:.6f}) "
          f"t1rel {abs(r.split[0]-I1)/I1:.3e} t2rel {abs(r.split[1]-I2)/I2:.3e} "
          f"[{dt:.2f}s]", flush=True)

print("== complement bitwise ==", flush=True)
e = halfspace(128)
r1 = frac_perimeter(e, Ball((0.0, 0.0), 1.0), P2)
r2 = frac_perimeter(e.complement(), Ball((0.0, 0.0), 1.0), P2)
print("value equal:", r1.value == r2.value, " err equal:", r1.err == r2.err)
print("split1:", r1.split, " split2:", r2.split)
print("value vs split-sum rel:", abs(r1.value - (r1.split[0] + r1.split[1])) / r1.value)

rng = np.random.default_rng(7)
occ = (rng.random((32, 32)) < 0.5).astype(np.uint8)
er = VoxelSet(box=AlignedBox((-2.0, -2.0), (2.0, 2.0)), occupancy=occ,
              exterior=EmptySet(), seam_tol=1.0)
ra = frac_perimeter(er, AlignedBox((-1.2, -0.9), (1.1, 1.3)), P2,
                    QuadratureSpec(tail_budget=1.0))
rb = frac_perimeter(er.complement(), AlignedBox((-1.2, -0.9), (1.1, 1.3)), P2,
                    QuadratureSpec(tail_budget=1.0))
print("random occ: value equal:", ra.value == rb.value, " err equal:", ra.err == rb.err,
      f" relerr-of-value {ra.err/ra.value:.3e}")

print("== scaling lambda=2 ==", flush=True)
e1 = halfspace(128, extent=2.0)
e2 = halfspace(128, extent=4.0)
v1 = frac_perimeter(e1, Ball((0.0, 0.0), 1.0), P2)
v2 = frac_perimeter(e2, Ball((0.0, 0.0), 2.0), P2)
lam = 2.0 ** 1.5
print(f"v1 {v1.value:.9f}  v2 {v2.value:.9f}  v2/v1 {v2.value/v1.value:.12f} "
      f"vs {lam:.12f} rel {abs(v2.value - lam*v1.value)/(lam*v1.value):.3e}")

print("== empty ==", flush=True)
ee = VoxelSet(box=AlignedBox((-2.0, -2.0), (2.0, 2.0)),
              occupancy=np.zeros((16, 16), np.uint8), exterior=EmptySet())
rr = frac_perimeter(ee, Ball((0.0, 0.0), 1.0), P2)
print("empty:", rr)

print("== coarse resolutions for budget gate ==", flush=True)
for res, a in ((4, 0.5), (6, 0.5), (8, 0.5), (8, 0.7), (12, 0.7), (16, 0.5), (24, 0.5)):
    e = halfspace(res)
    try:
        r = frac_perimeter(e, Ball((0.0, 0.0), 1.0), FracParams(n=1, alpha=a))
        print(f"res {res} alpha {a}: OK value {r.value:.4f} err/val {r.err/r.value:.3f}")
    except Exception as ex:
        print(f"res {res} alpha {a}: {type(ex).__name__}: {ex}")

print("== growth ==", flush=True)
ext = 6.0
res = 384
e = halfspace(res, extent=ext)
t = time.time()
g = perimeter_growth(e, (1.0, 2.0, 4.0), P2)
dt = time.time() - t
print("growth:", [(r, round(v, 6)) for r, v in g], f"[{dt:.2f}s]")
lr = np.log([r for r, _ in g])
lv = np.log([v for _, v in g])
slope = np.polyfit(lr, lv, 1)[0]
print(f"slope {slope:.4f} target 1.5")

print("== majorant: ball-set runs ==", flush=True)
t = time.time()
for R in (1.0, 2.0, 4.0):
    c = VoxelSet(box=e.box, occupancy=(np.linalg.norm(
        e.centers(), axis=1) <= R).reshape(e.resolution).astype(np.uint8),
        exterior=EmptySet())
    m = frac_perimeter(c, Ball((0.0, 0.0), R), P2)
    gv = dict((r, v) for r, v in g)[R]
    print(f"R {R}: growth {gv:.4f} <= majorant {m.value:.4f} + errs? "
          f"{gv <= m.value + m.err:.0f} margin {m.value - gv:.4f}")
print(f"[{time.time()-t:.2f}s]")
