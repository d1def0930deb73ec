import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wzbdsde.errors import CapabilityError, ConfigurationError
from wzbdsde.lab import ols_slope
from wzbdsde.noise import BrownianPair, DyadicGrid, sample_pair
from wzbdsde.problem import (
    BUILTIN,
    ZERO_DIFFUSION,
    ZERO_DRIVER,
    BdsdeProblem,
    Driver,
    SINE_DIFFUSION,
    TANH_DIFFUSION,
    affine,
    closed_form_residual,
    constant_diffusion,
    correction,
    make_problem,
    residual_steps,
    verify_hypotheses,
)


def quadratic_problem():
    """f = 0, g = 1/2, terminal W_T^2: Y = W^2 + (T - t) + (B_T - B_t)/2, Z = 2W."""

    def closed(w, b):
        t = np.linspace(0.0, 1.0, b.shape[-1])
        return w**2 + (1.0 - t) + 0.5 * (b[-1] - b), 2 * w

    return BdsdeProblem("quadratic", ZERO_DRIVER, constant_diffusion(0.5), np.square, closed_form=closed)


def test_correction_examples():
    y = np.linspace(-3, 3, 13)
    assert np.all(correction(constant_diffusion(0.7), y) == 0)
    assert correction(SINE_DIFFUSION, 0.0) == 0.0
    assert correction(SINE_DIFFUSION, math.pi / 4) == pytest.approx(0.25)


@pytest.mark.parametrize("g", [SINE_DIFFUSION, TANH_DIFFUSION])
def test_correction_odd(g):
    y = np.linspace(-5, 5, 101)
    assert np.allclose(correction(g, -y), -correction(g, y), atol=1e-15)


@pytest.mark.parametrize("name", BUILTIN)
def test_builtin_hypotheses_pass(name):
    rep = verify_hypotheses(make_problem(name), probe_count=5000)
    assert rep.passed, rep


def test_zero_g_declared_f():
    p = make_problem("zero_g")
    assert p.diffusion.is_zero
    rep = verify_hypotheses(p)
    assert rep.f_lipschitz_ok and rep.f_bound_ok and rep.f_lipschitz_ratio <= 1.0


def test_square_driver_fails_with_witness():
    bad = BdsdeProblem("square", Driver(lambda y, z: y**2, 1.0, 100.0), ZERO_DIFFUSION, np.tanh)
    rep = verify_hypotheses(bad, radius=10)
    assert not rep.f_lipschitz_ok and not rep.passed
    y1, z1, y2, z2 = rep.f_lipschitz_witness
    assert abs(y1**2 - y2**2) > abs(y1 - y2) + abs(z1 - z2)


def test_constant_g_ratios_zero():
    rep = verify_hypotheses(make_problem("const_g"))
    assert rep.g_prime_lipschitz_ratio == 0.0 and rep.g_prime_max == 0.0
    assert rep.g_bound_ok and rep.g_prime_bound_ok and rep.g_prime_lipschitz_ok and rep.g_prime_fd_ok


@given(st.floats(0.5, 20), st.floats(0.5, 20))
def test_hypotheses_monotone_in_radius(r1, r2):
    lo, hi = sorted((r1, r2))
    p = make_problem("sine_g")
    a = verify_hypotheses(p, probe_count=500, radius=lo, seed=3)
    b = verify_hypotheses(p, probe_count=500, radius=hi, seed=3)
    assert b.f_lipschitz_ratio >= a.f_lipschitz_ratio
    assert b.g_prime_lipschitz_ratio >= a.g_prime_lipschitz_ratio


def test_registry_errors():
    with pytest.raises(ConfigurationError):
        make_problem("nope")
    with pytest.raises(ConfigurationError):
        make_problem("const_g", bogus=1)


def test_residual_requires_closed_form():
    with pytest.raises(CapabilityError):
        closed_form_residual(make_problem("sine_g"), sample_pair(0, 0, DyadicGrid(4)), 4)


def test_residual_trivial_cases():
    p = affine(xi_scale=1.0)
    path = sample_pair(1, 0, DyadicGrid(6))
    assert np.max(np.abs(residual_steps(p, path, 6))) <= 1e-15
    zero = BrownianPair(DyadicGrid(6), np.zeros(64), np.zeros(64), 0, 0)
    assert closed_form_residual(make_problem("const_g"), zero, 6) == 0.0


@given(st.integers(0, 2**32), st.integers(2, 10))
def test_const_g_residual_vanishes(seed, level):
    path = sample_pair(seed, 0, DyadicGrid(10))
    assert np.max(np.abs(residual_steps(make_problem("const_g"), path, level))) <= 1e-10


def test_residual_rate_quadratic():
    levels = (6, 8, 10)
    p = quadratic_problem()
    rms = []
    for lv in levels:
        vals = [closed_form_residual(p, sample_pair(5, i, DyadicGrid(10)), lv) ** 2 for i in range(1000)]
        rms.append(math.sqrt(np.mean(vals)))
    assert ols_slope(levels, np.log2(rms)) <= -0.4


def test_affine_closed_form_shapes():
    p = affine(f_const=0.5, f_z=1.0, sigma=0.2, xi_scale=2.0)
    w = np.zeros((3, 5))
    y, z = p.closed_form(w, np.zeros(5))
    assert y.shape == (3, 5) and np.all(z == 2.0)
    assert y[0, 0] == pytest.approx(2.5)
    assert affine(f_y=1.0).closed_form is None
