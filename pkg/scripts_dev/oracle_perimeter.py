"""Oracle for Per_alpha(H, B_1) in R^2, H = {y2 < 0}, alpha = 1/2.

Definition: Per(E, W) = I1 + I2,
  I1 = iint_{(W cap E) x E^c} |x-y|^(-5/2),
  I2 = iint_{(E \\ W) x (W \\ E)} |x-y|^(-5/2).

For H and W = B_1 the up-down mirror symmetry gives
  I2 = iint_{(B cap H) x (H^c \\ B)} = I1 - A,
  A  = iint_{(B cap H) x (B \\ H)} |x-y|^(-5/2)   (both factors inside B),
so value = 2*I1 - A.

I1 in closed form: for x at depth d below the interface,
  int_{H^c} |x-y|^(-5/2) dy = 2 J d^(-1/2),  J = sqrt(pi) Gamma(3/4)/Gamma(5/4),
hence I1 = 2J int_{B cap H} |x2|^(-1/2) dx = 2 J B(1/4, 3/2).

A reduces to a 2D integral: integrating out the horizontal coordinates of the
pair turns the kernel into the overlap-tent profile
  F(g,a,b) = int (u^2+g^2)^(-5/4) len(u) du,
  len(u) = overlap of (-a,a) and (u-b, u+b)  (trapezoid in u),
with g = y2 - x2, a = sqrt(1-x2^2), b = sqrt(1-y2^2). The pieces of F are
  I0(p,q) = int_p^q (u^2+g^2)^(-5/4) du = g^(-3/2) int sqrt(cos t) dt  (u = g tan t)
  Iu(p,q) = int_p^q u (u^2+g^2)^(-5/4) du = 2[(p^2+g^2)^(-1/4) - (q^2+g^2)^(-1/4)].
Substituting x2 = -(s cos w)^2, y2 = (s sin w)^2 removes the g^(-3/2)
singularity exactly, leaving a bounded integrand on a (w, s) strip.

Cross-checks: a 4D midpoint brute force for A, and a brute force for I1.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import gamma

GL_T, GL_W = np.polynomial.legendre.leggauss(80)


def sqrtcos_int(t0, t1):
    """int_{t0}^{t1} sqrt(cos t) dt on [0, pi/2), Gauss-Legendre."""
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    t = mid + half * GL_T
    return half * float(np.sum(GL_W * np.sqrt(np.cos(t))))


def I0(p, q, g):
    return g ** (-1.5) * sqrtcos_int(math.atan2(p, g), math.atan2(q, g))


def Iu(p, q, g):
    return 2.0 * ((p * p + g * g) ** (-0.25) - (q * q + g * g) ** (-0.25))


def F(g, a, b):
    cm = abs(a - b)
    cp = a + b
    val = 4.0 * min(a, b) * I0(0.0, cm, g)
    val += 2.0 * (a + b) * I0(cm, cp, g) - 2.0 * Iu(cm, cp, g)
    return val


def A_integrand(s, w):
    p = s * math.cos(w)
    q = s * math.sin(w)
    x2 = -p * p
    y2 = q * q
    if p >= 1.0 or q >= 1.0:
        return 0.0
    g = p * p + q * q
    a = math.sqrt(1.0 - x2 * x2)
    b = math.sqrt(1.0 - y2 * y2)
    return F(g, a, b) * 4.0 * s ** 3 * math.cos(w) * math.sin(w)


def compute_A():
    def smax(w):
        return min(1.0 / math.cos(w), 1.0 / math.sin(w)) - 1e-14

    val, err = integrate.dblquad(A_integrand, 1e-12, 0.5 * math.pi - 1e-12,
                                 lambda w: 1e-12, smax,
                                 epsabs=1e-9, epsrel=1e-9)
    return val, err


def compute_I1():
    J = math.sqrt(math.pi) * gamma(0.75) / gamma(1.25)
    Beta = gamma(0.25) * gamma(1.5) / gamma(1.75)
    return 2.0 * J * Beta


def brute_A(m):
    """4D midpoint check on polar grids over each half-disk."""
    r = (np.arange(m) + 0.5) / m
    th = -math.pi + (np.arange(2 * m) + 0.5) * math.pi / (2 * m)  # lower: th in (-pi, 0)
    ph = (np.arange(2 * m) + 0.5) * math.pi / (2 * m)             # upper: ph in (0, pi)
    wr = r / m
    wa = math.pi / (2 * m)
    xs = np.stack([np.outer(r, np.cos(th)).ravel(), np.outer(r, np.sin(th)).ravel()], axis=1)
    wx = np.outer(wr, np.full(2 * m, wa)).ravel()
    ys = np.stack([np.outer(r, np.cos(ph)).ravel(), np.outer(r, np.sin(ph)).ravel()], axis=1)
    total = 0.0
    for i in range(0, len(xs), 512):
        d = xs[i:i + 512, None, :] - ys[None, :, :]
        k = (d[..., 0] ** 2 + d[..., 1] ** 2) ** (-1.25)
        total += float(np.sum(wx[i:i + 512, None] * wx[None, :] * k))
    return total


def brute_I1(m):
    """x over the lower half-disk (polar midpoint), inner integral exact."""
    J = math.sqrt(math.pi) * gamma(0.75) / gamma(1.25)
    r = (np.arange(m) + 0.5) / m
    th = -math.pi + (np.arange(2 * m) + 0.5) * math.pi / (2 * m)
    wr = r / m
    wa = math.pi / (2 * m)
    x2 = np.outer(r, np.sin(th))
    w = np.outer(wr, np.full(2 * m, wa))
    return float(np.sum(w * 2.0 * J * np.abs(x2) ** (-0.5)))


if __name__ == "__main__":
    I1 = compute_I1()
    print(f"I1 closed form      = {I1!r}", flush=True)
    for m in (200, 400):
        print(f"  brute I1 (m={m}) = {brute_I1(m)!r}", flush=True)
    A, aerr = compute_A()
    print(f"A dblquad           = {A!r}  (reported abs err {aerr:.2e})", flush=True)
    for m in (60, 120):
        print(f"  brute A (m={m})  = {brute_A(m)!r}", flush=True)
    value = 2.0 * I1 - A
    print(f"value = 2*I1 - A    = {value!r}")
    print(f"I2 = I1 - A         = {I1 - A!r}")
