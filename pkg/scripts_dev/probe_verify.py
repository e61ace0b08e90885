import time
import numpy as np
from nlmg import (Affine, AlignedBox, FracParams, GraphField, QuadratureSpec,
                  SolveOptions, cmc_exponent_audit, curvature_field, solve)

# --- affine nullity: 1D 129 nodes ---
rng = np.random.default_rng(0)
P1 = FracParams(1, 0.5)
t0 = time.perf_counter()
worst = -1e300
for k in range(100):
    a, b = rng.uniform(-5, 5, 2)
    h = 16.0 / 128
    xs = -8.0 + h * np.arange(129)
    u = GraphField(params=P1, window=AlignedBox((-8.0,), (8.0,)), spacing=h,
                   values=a * xs + b, exterior=Affine((a,), b))
    cf = curvature_field(u)
    worst = max(worst, float(np.max(np.abs(cf.values) - cf.errors)))
t1 = time.perf_counter()
print(f"1d affine 100x129: {t1-t0:.2f}s worst(|v|-err) {worst:.3e}")

# --- affine nullity: 2D 65x65, how many fields fit in budget? ---
P2 = FracParams(2, 0.5)
t0 = time.perf_counter()
worst2 = -1e300
n2 = 10
for k in range(n2):
    g = rng.uniform(-5, 5, 2)
    b = rng.uniform(-5, 5)
    h = 16.0 / 64
    ax = -8.0 + h * np.arange(65)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    u = GraphField(params=P2, window=AlignedBox((-8.0, -8.0), (8.0, 8.0)),
                   spacing=h, values=g[0] * X + g[1] * Y + b,
                   exterior=Affine(tuple(g), float(b)))
    cf = curvature_field(u)
    worst2 = max(worst2, float(np.max(np.abs(cf.values) - cf.errors)))
t1 = time.perf_counter()
print(f"2d affine {n2}x65^2: {t1-t0:.2f}s worst {worst2:.3e} -> per field {(t1-t0)/n2:.2f}s")
