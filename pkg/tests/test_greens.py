import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from cellflux.errors import DomainError
from cellflux.greens import (QuadratureRule, StepKernels, gradients_at_steps, grad_u_hat, heat_kernel,
                             kernel_integral, mass_in_square, phi_P_semianalytic, square_mass_steps,
                             toeplitz_apply, u_hat, values_at_step, values_at_steps)
from cellflux.intensities import (DiracLayout, FluxSpec, approx_flux, approx_flux_hat, constant_schedule,
                                  dirac_layout, make_schedule)


def _e1_series(z, terms=60):
    # independent oracle: E1(z) = -gamma - ln z - sum (-z)^k / (k k!)
    s = sum((-z) ** k / (k * math.factorial(k)) for k in range(1, terms))
    return -np.euler_gamma - math.log(z) - s


def _single(point=(0.0, 0.0)):
    return DiracLayout((float(point[0]), float(point[1])), np.empty((0, 2)), 0.5, 1.0)


def test_heat_kernel_examples():
    assert heat_kernel([1.0, 2.0], [1.0, 2.0], 0.5, 3.0) == pytest.approx(1 / (4 * np.pi * 1.5))
    a = heat_kernel([0.3, -0.2], [1.1, 0.4], 2.0, 0.7)
    b = heat_kernel([1.1, 0.4], [0.3, -0.2], 2.0, 0.7)
    assert a == b
    with pytest.raises(DomainError):
        heat_kernel([0, 0], [0, 0], 1.0, 0.0)


def test_heat_kernel_normalised():
    D, t = 1.3, 0.6
    val, _ = integrate.quad(lambda rho: 2 * np.pi * rho * heat_kernel([rho, 0.0], [0.0, 0.0], D, t),
                            0, 40, epsabs=1e-13, epsrel=1e-13)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_quadrature_rule_invariants():
    rule = QuadratureRule.graded(0.02, 10.0)
    assert np.all(rule.nodes > 0.02) and np.all(rule.nodes < 10.0)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(10.0 - 0.02, rel=1e-13)
    with pytest.raises(DomainError):
        QuadratureRule.graded(1.0, 1.0)


def test_u_hat_matches_e1_series():
    sched = constant_schedule([1.0])
    got = u_hat(np.array([1.0, 0.0]), 10.0, _single(), sched, 1.0)
    want = _e1_series(1 / 40) / (4 * np.pi)
    assert got == pytest.approx(want, rel=1e-8)
    assert kernel_integral(1.0, 1.0, 10.0) == pytest.approx(want, rel=1e-12)


def test_u_hat_zero_and_early():
    lay = dirac_layout(1, r=0.01)
    zero = constant_schedule([0.0, 0.0])
    assert u_hat(np.array([2.0, 1.0]), 3.0, lay, zero, 1.0) == 0.0
    assert np.all(grad_u_hat(np.array([2.0, 1.0]), 3.0, lay, zero, 1.0) == 0.0)
    sched = constant_schedule([1.0], tau_trunc=0.02)
    assert abs(u_hat(np.array([1.0, 0.0]), 0.02, _single(), sched, 1.0)) < 1e-12


def test_u_hat_at_source_rejected():
    lay = dirac_layout(1, r=0.01)
    with pytest.raises(DomainError):
        u_hat(np.array([0.0, 0.01]), 1.0, lay, constant_schedule([1.0, 1.0]), 1.0)


def test_u_hat_refinement_converges():
    spec = FluxSpec(1)
    lay = dirac_layout(spec, r=0.01)
    sched = make_schedule(spec, lay, 1.0, 0.02)
    x = np.array([1.0, 0.3])
    v = [u_hat(x, 10.0, lay, sched, 1.0, panels_per_decade=p) for p in (4, 8, 16)]
    assert abs(v[2] - v[1]) <= max(abs(v[1] - v[0]) / 4, 1e-14 * abs(v[2]))
    assert abs(v[2] - v[1]) < 1e-8 * abs(v[2])


def test_gradient_matches_finite_difference():
    sched = constant_schedule([1.0])
    lay = _single()
    x = np.array([2.0, 0.5])
    g = grad_u_hat(x, 5.0, lay, sched, 1.0)
    h = 1e-5
    fd = [(u_hat(x + h * e, 5.0, lay, sched, 1.0) - u_hat(x - h * e, 5.0, lay, sched, 1.0)) / (2 * h)
          for e in np.eye(2)]
    assert np.allclose(g, fd, rtol=1e-5)


def test_gradient_on_bisector():
    lay = DiracLayout((-1.0, 0.0), np.array([[1.0, 0.0]]), 0.5, 3.0)
    g = grad_u_hat(np.array([0.0, 2.0]), 4.0, lay, constant_schedule([1.0, 1.0]), 1.0)
    assert abs(g[0]) < 1e-14 * abs(g[1])


def test_phi_P_single_centre_point():
    th = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    got = phi_P_semianalytic(th, 3.0, _single(), constant_schedule([2.0]), 1.0, R=1.0)
    want = 2.0 / (2 * np.pi) * math.exp(-1 / 12)
    assert np.allclose(got, want, rtol=1e-8)
    zero = phi_P_semianalytic(th, 3.0, _single(), constant_schedule([0.0]), 1.0, R=1.0)
    assert np.all(zero == 0)


def test_phi_P_frozen_equals_phi_hat():
    spec = FluxSpec(1)
    lay = dirac_layout(spec, r=0.05)
    sched = make_schedule(spec, lay, 1.0, 0.02)
    got = phi_P_semianalytic(np.pi / 4, 2.0, lay, sched.frozen(2.0), 1.0)
    want = approx_flux_hat(1, np.pi / 4, 2.0, 1.0, 0.05)
    assert got == pytest.approx(want, rel=1e-7)


@given(st.floats(0.05, 0.9), st.floats(0, 2 * np.pi), st.floats(0.5, 20.0))
def test_frozen_reduction_arbitrary_layout(r, ang, t):
    pts = np.array([[r * math.cos(ang), r * math.sin(ang)], [-0.3 * r, 0.2 * r]])
    lay = DiracLayout((0.0, 0.0), pts, r, 1.0, symmetric=False)
    phi = np.array([1.5, -0.4, 0.8])
    th = np.linspace(0.1, 6.0, 7)
    got = phi_P_semianalytic(th, t, lay, constant_schedule(phi), 1.0)
    want = approx_flux(th, t, lay.points, phi)
    assert np.allclose(got, want, rtol=1e-7, atol=1e-10)


def test_free_space_mass_bookkeeping():
    # outflow through the circle plus growth of the mass inside it equals the injection rate
    src = np.array([0.0, 0.3])
    lay = _single(src)
    t, D, R = 10.0, 1.0, 1.0
    th = 2 * np.pi * np.arange(256) / 256
    outflow = np.sum(phi_P_semianalytic(th, t, lay, constant_schedule([1.0]), D, R=R, center=(0, 0))) \
        * 2 * np.pi * R / 256
    # probability that a Gaussian of variance 2Dt around src lies inside the disc
    inside = stats.ncx2.cdf(R * R / (2 * D * t), 2, src @ src / (2 * D * t))
    assert outflow + inside == pytest.approx(1.0, rel=1e-6)


def test_step_kernels_constant_intensity():
    sites = np.array([[1.0, 0.0], [0.0, 2.0]])
    src = np.array([[0.0, 0.0]])
    dt, M = 0.1, 30
    sk = StepKernels(sites, src, 1.0, dt, M)
    phi = np.ones((M, 1))
    vals = sk.values(phi)
    assert np.allclose(vals[-1], kernel_integral(np.sum(sites ** 2, axis=1), 1.0, M * dt), rtol=1e-12)
    assert np.allclose(values_at_steps(sites, src, phi, 1.0, dt, [10, 30]), vals[[9, 29]], rtol=1e-12)
    assert np.allclose(values_at_step(sites, src, phi, 1.0, dt, 30), vals[29])
    with pytest.raises(DomainError):
        values_at_steps(sites, src, phi, 1.0, dt, [31])
    with pytest.raises(DomainError):
        StepKernels(src, src, 1.0, dt, M)


def test_step_gradients_match_value_differences():
    rng = np.random.default_rng(2)
    src = np.array([[0.0, 0.0], [0.0, 0.1]])
    phi = rng.uniform(0.5, 2.0, size=(20, 2))
    x = np.array([[0.9, 0.4]])
    g = gradients_at_steps(x, src, phi, 1.0, 0.1, [20])[0, 0]
    h = 1e-6
    fd = [(values_at_step(x + h * e, src, phi, 1.0, 0.1, 20) - values_at_step(x - h * e, src, phi, 1.0, 0.1, 20))[0]
          / (2 * h) for e in np.eye(2)]
    assert np.allclose(g, fd, rtol=1e-6)
    # the step-mean gradient of the last step is close to the end-point gradient for smooth data
    sk = StepKernels(x, src, 1.0, 0.1, 20)
    assert np.allclose(sk.mean_gradient(phi)[-1, 0], g, rtol=0.05)


def test_toeplitz_apply():
    rng = np.random.default_rng(0)
    phi, ker = rng.normal(size=6), rng.normal(size=(6, 3))
    want = np.array([sum(phi[k] * ker[m - k] for k in range(m + 1)) for m in range(6)])
    assert np.allclose(toeplitz_apply(phi, ker), want)


def test_mass_in_large_square():
    src = np.array([[0.2, -0.1]])
    phi = np.full((25, 1), 3.0)
    assert mass_in_square(src, phi, 50.0, 1.0, 0.04, 25) == pytest.approx(3.0, rel=1e-12)
    F = square_mass_steps(src, 1.0, 1.0, 0.04, 400)
    assert np.all(np.diff(F[:, 0]) <= 1e-16)  # mass leaks out of a small square
    assert F[0, 0] == pytest.approx(0.04, rel=1e-3)
