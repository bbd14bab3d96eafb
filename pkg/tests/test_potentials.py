import math

import numpy as np
import pytest
from scipy.integrate import quad

from diffkit.coeffs import ModelFamily, expand_family
from diffkit.core import scale_speed
from diffkit.errors import PreconditionError, RecurrentDiffusionError
from diffkit.potentials import (
    PotentialKernel,
    alpha_potential,
    fundamental_solutions,
    hitting_laplace,
    local_time_total_law,
    potential_density,
    potential_log_derivative,
    two_sided_exit_discount,
)


@pytest.fixture(scope="module")
def bm_pairs(brownian, brownian_ss):
    return {a: fundamental_solutions(brownian, brownian_ss, a) for a in (0.5, 1.0, 2.0)}


@pytest.fixture(scope="module")
def gbm_fp(gbm03, gbm03_ss):
    return fundamental_solutions(gbm03, gbm03_ss, 0.05)


def _bm_u(alpha, x, y):
    # exp(-sqrt(2a)|x-y|) / (2 sqrt(2a)): the kernel normalized against the
    # speed measure m(dx) = 2 dx, verified by the resolvent identity below
    root = math.sqrt(2.0 * alpha)
    return math.exp(-root * abs(x - y)) / (2.0 * root)


def test_bm_alpha_potential_closed_form(bm_pairs):
    xs = np.linspace(-2.0, 2.0, 21)
    for a, fp in bm_pairs.items():
        err = max(
            abs(fp.u(x, y) - _bm_u(a, x, y)) for x in xs for y in xs
        )
        assert err < 1e-8, (a, err)


def test_resolvent_identity_pins_normalization(bm_pairs):
    # int u_alpha(x, y) m(dy) = 1/alpha for a conservative diffusion; this is
    # the independent check that the Wronskian normalization is right
    for a, fp in bm_pairs.items():
        val = quad(lambda y: fp.u(0.0, y) * 2.0, -80.0, 80.0, limit=400)[0]
        assert val == pytest.approx(1.0 / a, rel=1e-7)


def test_u_alpha_symmetry(bm_pairs, gbm_fp):
    rng = np.random.default_rng(7)
    for fp, lo, hi in [(bm_pairs[1.0], -3.0, 3.0), (gbm_fp, 0.1, 8.0)]:
        xs = rng.uniform(lo, hi, 100)
        ys = rng.uniform(lo, hi, 100)
        u1 = fp.u(xs, ys)
        u2 = fp.u(ys, xs)
        np.testing.assert_allclose(u1, u2, rtol=1e-6)


def test_u_alpha_peak_on_diagonal(bm_pairs):
    fp = bm_pairs[0.5]
    rng = np.random.default_rng(3)
    xs = rng.uniform(-2, 2, 50)
    ys = rng.uniform(-2, 2, 50)
    assert np.all(fp.u(xs, ys) <= fp.u(ys, ys) + 1e-15)


def test_resolvent_monotone_in_alpha(bm_pairs):
    xs = np.linspace(-1.5, 1.5, 7)
    u05 = bm_pairs[0.5].u(xs, 0.3)
    u10 = bm_pairs[1.0].u(xs, 0.3)
    u20 = bm_pairs[2.0].u(xs, 0.3)
    assert np.all(u05 >= u10) and np.all(u10 >= u20)


def test_wronskian_constancy(bm_pairs, gbm_fp):
    for fp in [*bm_pairs.values(), gbm_fp]:
        assert fp.diagnostics["wronskian_rel_spread"] < 1e-4


def test_left_derivative_jump_is_minus_s_prime(bm_pairs, gbm_fp, brownian_ss, gbm03_ss):
    # u_x(y+, y) - u_x(y, y) = -s'(y), by finite differences
    for fp, ss, y in [(bm_pairs[1.0], brownian_ss, 0.4), (gbm_fp, gbm03_ss, 1.3)]:
        h = 1e-6 * max(1.0, abs(y))
        right = (fp.u(y + h, y) - fp.u(y, y)) / h
        left = (fp.u(y, y) - fp.u(y - h, y)) / h
        assert (right - left) == pytest.approx(-ss.s_prime(y), rel=1e-3)


def test_gbm_alpha_potential_power_closed_form(gbm_fp):
    # 0.5 sigma0^2 x^2 f'' = alpha f has power solutions x^theta with
    # theta = (1 +- sqrt(1 + 8 alpha / sigma0^2)) / 2; here 5/3 and -2/3
    tp, tm = 5.0 / 3.0, -2.0 / 3.0
    w = tp - tm  # (psi' phi - psi phi') / s' for psi = x^tp, phi = x^tm
    for x, y in [(1.0, 2.0), (0.5, 0.5), (2.5, 0.7), (1.0, 1.0)]:
        a, b = min(x, y), max(x, y)
        want = a**tp * b**tm / w
        assert gbm_fp.u(x, y) == pytest.approx(want, rel=1e-7)


def test_alpha_potential_self_convergence(gbm03, gbm03_ss, gbm_fp):
    # doubled node density and tighter truncation target
    fine = fundamental_solutions(
        gbm03, gbm03_ss, 0.05, per_decade=64, target_delta=1e-10
    )
    pts = [(0.3, 1.1), (1.0, 1.0), (2.0, 5.0), (0.9, 0.2)]
    for x, y in pts:
        assert alpha_potential(gbm_fp, x, y) == pytest.approx(
            alpha_potential(fine, x, y), rel=1e-6
        )


def test_hitting_laplace_basics(bm_pairs):
    fp = bm_pairs[0.5]
    assert hitting_laplace(fp, 0.7, 0.7) == pytest.approx(1.0, abs=1e-12)
    # E^0[e^{-alpha T_1}] = e^{-sqrt(2 alpha)} = e^{-1}
    assert hitting_laplace(fp, 0.0, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-8)
    # monotone in |x - y|
    assert hitting_laplace(fp, 2.0, 0.0) < hitting_laplace(fp, 1.0, 0.0)


def test_hitting_laplace_in_unit_interval(bm_pairs):
    fp = bm_pairs[2.0]
    rng = np.random.default_rng(11)
    xs = rng.uniform(-3, 3, 60)
    vals = hitting_laplace(fp, xs, 0.5)
    assert np.all(vals > 0.0) and np.all(vals <= 1.0)


# ---------------------------------------------------------------------------
# zero-potential


def test_potential_density_natural_scale(natural_0inf_ss):
    # s = x: u(x, y) = x ^ y
    assert potential_density(natural_0inf_ss, 1.0, 2.0) == pytest.approx(1.0, rel=1e-9)
    assert potential_density(natural_0inf_ss, 5.0, 2.0) == pytest.approx(2.0, rel=1e-9)


def test_potential_density_interval(bm01_ss):
    # s(x) = x on (0,1): u(x, y) = (x^y)(1 - (xvy))
    assert potential_density(bm01_ss, 0.25, 0.5) == pytest.approx(0.125, rel=1e-10)
    assert potential_density(bm01_ss, 0.5, 0.25) == pytest.approx(0.125, rel=1e-10)


def test_potential_density_recurrent_error(brownian_ss):
    with pytest.raises(RecurrentDiffusionError):
        potential_density(brownian_ss, 0.0, 1.0)
    with pytest.raises(RecurrentDiffusionError):
        PotentialKernel.zero(brownian_ss)


def test_potential_log_derivative_branches(bm01_ss):
    # u(x, y) = x(1-y) below y gives u_x/u = 1/x; above, -1/(1-x)
    y = 0.5
    assert potential_log_derivative(bm01_ss, 0.25, y) == pytest.approx(4.0, rel=1e-9)
    assert potential_log_derivative(bm01_ss, 0.8, y) == pytest.approx(-5.0, rel=1e-9)
    # the atom belongs to the left branch
    assert potential_log_derivative(bm01_ss, y, y) == pytest.approx(2.0, rel=1e-9)


def test_local_time_rate_natural_scale(natural_0inf_ss):
    # rate = s'(y) / (2 u(y,y)) = 1 / (2 y): 1/4 at y = 2
    assert local_time_total_law(natural_0inf_ss, 2.0) == pytest.approx(0.25, rel=1e-9)


def test_local_time_rate_sqbessel3(sqbessel3_ss):
    # with s = 1 - x^{-1/2}: s'(1) = 1/2, u(1,1) = 1 - s(1) = 1 -> rate 1/4
    assert local_time_total_law(sqbessel3_ss, 1.0) == pytest.approx(0.25, rel=1e-6)


# ---------------------------------------------------------------------------
# two-sided discounted exit


@pytest.fixture(scope="module")
def bm_fp_l1(brownian, brownian_ss):
    return fundamental_solutions(brownian, brownian_ss, 1.0)


def test_two_sided_exit_boundary_cases(bm_fp_l1):
    # x = a = y: T_a immediate, no local time accrued
    assert two_sided_exit_discount(bm_fp_l1, 0.2, 0.8, 0.2, 0.2) == pytest.approx(
        1.0, abs=1e-9
    )
    # x = b on the T_a branch: T_a never happens first
    assert two_sided_exit_discount(
        bm_fp_l1, 0.2, 0.8, 0.8, 0.5, branch="a"
    ) == pytest.approx(0.0, abs=1e-12)


def test_two_sided_exit_branch_preconditions(bm_fp_l1):
    with pytest.raises(PreconditionError):
        two_sided_exit_discount(bm_fp_l1, 0.2, 0.8, 0.3, 0.6, branch="a")
    with pytest.raises(PreconditionError):
        two_sided_exit_discount(bm_fp_l1, 0.8, 0.2, 0.3, 0.6)


def test_two_sided_exit_symmetric_setup(bm_fp_l1):
    # at x = y centered in (a, b) with BM symmetry, both branches agree
    va = two_sided_exit_discount(bm_fp_l1, 0.2, 0.8, 0.5, 0.5, branch="a")
    vb = two_sided_exit_discount(bm_fp_l1, 0.2, 0.8, 0.5, 0.5, branch="b")
    assert va == pytest.approx(vb, rel=1e-8)
    assert 0.0 < va < 0.5
