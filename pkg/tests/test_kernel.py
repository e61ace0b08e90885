"""Kernel primitive G: saturation constant, table accuracy, invariants."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from nlmg import FracParams, ParamError, eval_G, eval_G_antideriv, lambda_const


def _lambda_oracle(n: int, alpha: float) -> float:
    # Beta-form of int_0^{pi/2} cos(phi)^(n-1+alpha) dphi, derived by hand.
    s = n - 1 + alpha
    return 0.5 * math.sqrt(math.pi) * special.gamma((s + 1) / 2) / special.gamma(s / 2 + 1)


def _g_oracle(n: int, alpha: float, t: float) -> float:
    val, _ = integrate.quad(lambda u: (1.0 + u * u) ** (-(n + 1 + alpha) / 2),
                            0.0, t, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


@pytest.mark.parametrize("n,alpha", [(1, 0.5), (1, 0.3), (1, 0.7), (2, 0.5), (2, 0.1), (2, 0.9)])
def test_lambda_matches_beta_oracle(n, alpha):
    lam = lambda_const(FracParams(n, alpha))
    assert lam == pytest.approx(_lambda_oracle(n, alpha), rel=1e-10)


def test_lambda_matches_raw_quadrature():
    # Independent of the Beta identity: compactified adaptive quadrature.
    p = FracParams(1, 0.5)
    ref = integrate.quad(lambda phi: math.cos(phi) ** 0.5, 0.0, math.pi / 2,
                         epsabs=1e-14, epsrel=1e-13, limit=200, full_output=1)[0]
    assert lambda_const(p) == pytest.approx(ref, rel=1e-10)


def test_lambda_reference_value():
    # sqrt(pi)/2 * Gamma(0.75)/Gamma(1.25) for n=1, alpha=0.5.
    assert lambda_const(FracParams(1, 0.5)) == pytest.approx(1.1981402347355918, rel=1e-12)


def test_lambda_decreasing_in_alpha():
    for n in (1, 2):
        lams = [lambda_const(FracParams(n, a)) for a in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a > b for a, b in zip(lams, lams[1:]))
    assert lambda_const(FracParams(2, 0.5)) < lambda_const(FracParams(1, 0.5))


@pytest.mark.parametrize("n,alpha", [(1, 0.5), (2, 0.3)])
def test_g_matches_quadrature(n, alpha):
    p = FracParams(n, alpha)
    rng = np.random.default_rng(7)
    ts = np.concatenate([rng.uniform(0.0, 8.0, 25), rng.uniform(8.0, 200.0, 10),
                         [1e-9, 0.999, 7.9999, 8.0001, 1e4]])
    for t in ts:
        assert eval_G(p, float(t)) == pytest.approx(_g_oracle(n, alpha, float(t)),
                                                    rel=1e-10, abs=1e-14)


def test_g_odd_monotone_bounded_thousand_samples():
    # Pinned behavior: 1000 samples, oddness, strict monotonicity, |G| < Lambda,
    # and the whole sweep in under a second.
    p = FracParams(1, 0.5)
    lam = lambda_const(p)
    t0 = time.time()
    ts = np.linspace(-60.0, 60.0, 1000)
    vals = eval_G(p, ts)
    elapsed = time.time() - t0
    assert np.all(np.diff(vals) > 0)
    assert np.all(np.abs(vals) < lam)
    assert np.array_equal(eval_G(p, -ts), -vals)
    assert elapsed < 1.0


def test_g_saturates_to_lambda():
    p = FracParams(1, 0.5)
    lam = lambda_const(p)
    assert eval_G(p, np.inf) == lam
    assert lam - eval_G(p, 1e9) < 1e-12 * lam
    assert eval_G(p, -np.inf) == -lam


@given(t=st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
@settings(deadline=None, max_examples=200)
def test_g_odd_and_bounded_property(t):
    p = FracParams(1, 0.5)
    v = eval_G(p, t)
    assert eval_G(p, -t) == -v
    assert abs(v) <= lambda_const(p)
    assert v * t >= 0.0


@given(a=st.floats(min_value=-50, max_value=50), b=st.floats(min_value=-50, max_value=50))
@settings(deadline=None, max_examples=200)
def test_g_monotone_property(a, b):
    p = FracParams(2, 0.7)
    if a < b:
        assert eval_G(p, a) <= eval_G(p, b)


@pytest.mark.parametrize("n,alpha", [(1, 0.5), (2, 0.3), (1, 0.9)])
def test_antideriv_derivative_is_g(n, alpha):
    # Centered differences of GG recover G.
    p = FracParams(n, alpha)
    for t in (0.0, 0.25, 1.0, 2.5, 6.0, 30.0):
        h = 1e-5
        fd = (eval_G_antideriv(p, t + h) - eval_G_antideriv(p, t - h)) / (2 * h)
        assert fd == pytest.approx(eval_G(p, t), rel=2e-8, abs=2e-8)


def test_antideriv_shape():
    p = FracParams(1, 0.5)
    assert eval_G_antideriv(p, 0.0) == 0.0
    ts = np.linspace(0, 20, 401)
    vals = eval_G_antideriv(p, ts)
    assert np.array_equal(eval_G_antideriv(p, -ts), vals)  # even, exactly
    assert np.all(vals >= 0.0)
    assert np.all(np.diff(vals, 2) > -1e-13)  # convex up to roundoff
    # asymptotically linear with slope Lambda
    lam = lambda_const(p)
    assert eval_G_antideriv(p, 1e8) / 1e8 == pytest.approx(lam, rel=1e-7)


def test_antideriv_quadrature_oracle():
    # GG(t) = int_0^t G, checked against nested adaptive quadrature once.
    p = FracParams(1, 0.5)
    ref, _ = integrate.quad(lambda s: _g_oracle(1, 0.5, s), 0.0, 2.0, limit=100)
    assert eval_G_antideriv(p, 2.0) == pytest.approx(ref, rel=1e-9)


def test_param_validation():
    with pytest.raises(ParamError):
        FracParams(3, 0.5)
    with pytest.raises(ParamError):
        FracParams(0, 0.5)
    with pytest.raises(ParamError):
        FracParams(1, 0.0)
    with pytest.raises(ParamError):
        FracParams(1, 1.0)
    with pytest.raises(ParamError):
        FracParams(1, float("nan"))
    with pytest.raises(ParamError):
        FracParams(True, 0.5)


def test_vector_eval_matches_scalar():
    p = FracParams(2, 0.5)
    ts = np.array([-3.0, -0.5, 0.0, 0.5, 11.0])
    vec = eval_G(p, ts)
    assert vec.shape == ts.shape
    for i, t in enumerate(ts):
        assert vec[i] == eval_G(p, float(t))
