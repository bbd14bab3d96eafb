import math

import numpy as np
import pytest
from scipy.integrate import quad

from diffkit.coeffs import ModelFamily, expand_family
from diffkit.core import scale_speed
from diffkit.errors import (
    NotRecurrentTransformError,
    PreconditionError,
)
from diffkit.potentials import fundamental_solutions
from diffkit.transforms import (
    MeasureSpec,
    composed_os_transform,
    generic_recurrent,
    h_limit_transform,
    recurrent_alpha_atom,
    recurrent_alpha_measure,
    recurrent_from_atom,
    recurrent_from_measure,
    stationary_distribution,
    transient_transform,
)


@pytest.fixture(scope="module")
def bm_fp05(brownian, brownian_ss):
    return fundamental_solutions(brownian, brownian_ss, 0.5)


# ---------------------------------------------------------------------------
# atom / measure potential transforms


def test_atom_transform_natural_scale_drift(natural_0inf, natural_0inf_ss):
    # u(x, y) = x ^ y gives drift extra sigma^2/x for x <= y, zero above
    y = 2.0
    tr = recurrent_from_atom(natural_0inf, natural_0inf_ss, y)
    xs = np.array([0.5, 1.0, 1.9, 2.0, 2.5, 4.0])
    sig2 = (1.0 + xs) ** 2
    want = np.where(xs <= y, sig2 / xs, 0.0)
    np.testing.assert_allclose(tr.drift(xs), want, rtol=1e-8)
    # charge rate 1/(2y)
    (level, rate), = tr.local_time_charges
    assert level == y
    assert rate == pytest.approx(1.0 / (2.0 * y), rel=1e-9)
    assert tr.continuous_rate is None


def test_atom_transform_interval_drift(bm01, bm01_ss):
    # u(x, y) = x(1 - y) below y: extra = 1/x; above: -1/(1 - x)
    tr = recurrent_from_atom(bm01, bm01_ss, 0.5)
    xs = np.array([0.1, 0.25, 0.5, 0.7, 0.9])
    want = np.where(xs <= 0.5, 1.0 / xs, -1.0 / (1.0 - xs))
    np.testing.assert_allclose(tr.drift(xs), want, rtol=1e-8)
    # finite-difference oracle for u_x/u away from the kink
    for x in (0.2, 0.8):
        h = 1e-7
        u = lambda z: float(tr.h(np.asarray(z)))
        fd = (u(x + h) - u(x - h)) / (2 * h) / u(x)
        assert tr.drift(np.array([x]))[0] == pytest.approx(fd, rel=1e-5)


def test_atom_transform_rejects_recurrent(brownian, brownian_ss):
    from diffkit.errors import RecurrentDiffusionError

    with pytest.raises(RecurrentDiffusionError):
        recurrent_from_atom(brownian, brownian_ss, 0.0)


def test_measure_single_atom_matches_atom(bm01, bm01_ss):
    tr_atom = recurrent_from_atom(bm01, bm01_ss, 0.4)
    tr_meas = recurrent_from_measure(bm01, bm01_ss, MeasureSpec(((0.4, 1.0),)))
    xs = np.linspace(0.02, 0.98, 20)
    np.testing.assert_allclose(tr_meas.drift(xs), tr_atom.drift(xs), rtol=1e-10)
    (l1, r1), = tr_atom.local_time_charges
    (l2, r2), = tr_meas.local_time_charges
    assert l1 == l2
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_measure_two_atoms_h_value(natural_0inf, natural_0inf_ss):
    mu = MeasureSpec(((1.0, 0.5), (2.0, 0.5)))
    tr = recurrent_from_measure(natural_0inf, natural_0inf_ss, mu)
    # h(x) = 0.5 (x^1) + 0.5 (x^2): h(1.5) = 0.5 + 0.75
    assert float(tr.h(np.asarray(1.5))) == pytest.approx(1.25, rel=1e-9)


def test_measure_two_atoms_sh_diverges(natural_0inf, natural_0inf_ss):
    mu = MeasureSpec(((1.0, 0.5), (2.0, 0.5)))
    tr = recurrent_from_measure(natural_0inf, natural_0inf_ss, mu)
    verdicts = tr.validate_recurrent()
    assert verdicts["left"].infinite and verdicts["right"].infinite


def test_measure_validation():
    with pytest.raises(PreconditionError):
        MeasureSpec(((1.0, 0.7), (2.0, 0.5)))
    with pytest.raises(PreconditionError):
        MeasureSpec(((1.0, -0.5), (2.0, 1.5)))
    with pytest.raises(PreconditionError):
        MeasureSpec(())


def test_atom_transform_sh_diverges(bm01, bm01_ss):
    tr = recurrent_from_atom(bm01, bm01_ss, 0.5)
    verdicts = tr.validate_recurrent()
    assert verdicts["left"].infinite and verdicts["right"].infinite


# ---------------------------------------------------------------------------
# alpha transforms


def test_alpha_atom_brownian_drift(brownian, brownian_ss, bm_fp05):
    tr = recurrent_alpha_atom(brownian, brownian_ss, bm_fp05, 0.0)
    root = math.sqrt(2.0 * 0.5)
    xs = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    # -sqrt(2 alpha) sgn(x) with sgn(0) = +1
    want = -root * np.where(xs < 0, -1.0, 1.0)
    np.testing.assert_allclose(tr.drift(xs), want, rtol=1e-7)


def test_alpha_atom_charge_rate(brownian, brownian_ss, bm_fp05):
    # rate = s'(y)/(2 u_a(y,y)) = sqrt(2 alpha) under the speed-measure
    # normalization (this is the rate that makes h(X) M a martingale)
    tr = recurrent_alpha_atom(brownian, brownian_ss, bm_fp05, 0.0)
    (level, rate), = tr.local_time_charges
    assert level == 0.0
    assert rate == pytest.approx(math.sqrt(2.0 * 0.5), rel=1e-8)
    assert float(tr.continuous_rate(np.asarray(1.0))) == -0.5


def test_alpha_atom_sh_odd_and_matches_quadrature(brownian, brownian_ss, bm_fp05):
    tr = recurrent_alpha_atom(brownian, brownian_ss, bm_fp05, 0.0)
    sh = tr.s_h
    root = math.sqrt(2.0 * 0.5)
    for x in (0.3, 1.0, 2.0):
        want = quad(lambda z: 1.0 / bm_fp05.u(z, 0.0) ** 2, 0.0, x)[0]
        assert sh(x) == pytest.approx(want, rel=1e-8)
        assert sh(-x) == pytest.approx(-want, rel=1e-6)
        closed = 2.0 * root * (math.exp(2.0 * root * x) - 1.0)
        assert sh(x) == pytest.approx(closed, rel=1e-6)


def test_alpha_measure_two_atoms(brownian, brownian_ss, bm_fp05):
    mu = MeasureSpec(((-1.0, 0.5), (1.0, 0.5)))
    tr = recurrent_alpha_measure(brownian, brownian_ss, bm_fp05, mu)
    # h(0) = u(0, 1) = e^{-1} / (2 sqrt(2 alpha)) by symmetry of the two atoms
    assert float(tr.h(np.asarray(0.0))) == pytest.approx(
        math.exp(-1.0) / 2.0, rel=1e-7
    )
    h1 = float(tr.h(np.asarray(1.0)))
    for (level, rate), y in zip(tr.local_time_charges, (-1.0, 1.0)):
        assert level == y
        assert rate == pytest.approx(0.5 / (2.0 * h1), rel=1e-7)


def test_alpha_measure_single_atom_matches(brownian, brownian_ss, bm_fp05):
    tr1 = recurrent_alpha_atom(brownian, brownian_ss, bm_fp05, 0.3)
    tr2 = recurrent_alpha_measure(
        brownian, brownian_ss, bm_fp05, MeasureSpec(((0.3, 1.0),))
    )
    xs = np.linspace(-2, 2, 20)
    np.testing.assert_allclose(tr2.drift(xs), tr1.drift(xs), rtol=1e-9)


def test_alpha_atom_works_on_recurrent_base(brownian, brownian_ss, bm_fp05):
    # unlike the zero-potential transform, the alpha transform accepts
    # recurrent bases
    tr = recurrent_alpha_atom(brownian, brownian_ss, bm_fp05, 0.0)
    assert tr.target_behavior == "recurrent"
    verdicts = tr.validate_recurrent()
    assert verdicts["left"].infinite and verdicts["right"].infinite


# ---------------------------------------------------------------------------
# generic recurrent transform


def test_generic_recurrent_sqbessel5():
    spec = expand_family(ModelFamily("squared-bessel", (5.0,)))
    ss = scale_speed(spec)

    def h(x):
        return np.asarray(x, dtype=float) ** -0.75

    def h1(x):
        return -0.75 * np.asarray(x, dtype=float) ** -1.75

    def h2(x):
        return 0.75 * 1.75 * np.asarray(x, dtype=float) ** -2.75

    tr = generic_recurrent(spec, ss, h, h1, h2)
    xs = np.array([0.25, 1.0, 4.0])
    # 5 + 4x * h'/h = 5 - 3 = 2 regardless of delta
    np.testing.assert_allclose(tr.drift(xs), 2.0 * np.ones(3), rtol=1e-10)
    # continuous rate +(delta-2)^2/(8x) = 9/(8x)
    np.testing.assert_allclose(
        np.asarray(tr.continuous_rate(xs)), 9.0 / (8.0 * xs), rtol=1e-10
    )
    # transformed scale: s'(z) = 1.5 z^{-5/2} after normalization, so
    # s_h = 1.5 log x (the 2-d squared Bessel, recurrent with log scale)
    for x in (0.2, 1.0, 7.0):
        assert tr.s_h(x) == pytest.approx(1.5 * math.log(x), rel=1e-6, abs=1e-9)


def test_generic_recurrent_identity(brownian, brownian_ss):
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    tr = generic_recurrent(brownian, brownian_ss, one, zero, zero)
    xs = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(tr.drift(xs), np.zeros(7), atol=1e-14)
    np.testing.assert_allclose(np.asarray(tr.continuous_rate(xs)), np.zeros(7), atol=1e-14)
    assert tr.local_time_charges == ()


def test_generic_recurrent_rejects_bad_h(natural_0inf, natural_0inf_ss):
    # h = exp(x) grows so fast that s_h = int exp(-2z) dz stays bounded at
    # both ends: not a recurrent transform
    def h(x):
        return np.exp(np.asarray(x, dtype=float))

    with pytest.raises(NotRecurrentTransformError):
        generic_recurrent(natural_0inf, natural_0inf_ss, h, h, h)


# ---------------------------------------------------------------------------
# stationary law


def test_stationary_distribution_laplace(brownian, brownian_ss, bm_fp05):
    tr = recurrent_alpha_atom(brownian, brownian_ss, bm_fp05, 0.0)
    pi, Z = stationary_distribution(tr, brownian_ss)
    root2a = math.sqrt(2.0 * 0.5)
    xs = np.linspace(-3, 3, 13)
    want = root2a * np.exp(-2.0 * root2a * np.abs(xs))
    np.testing.assert_allclose(pi(xs), want, rtol=1e-6)
    # integrates to one
    total = quad(lambda x: float(pi(np.asarray(x))), -40, 0)[0]
    total += quad(lambda x: float(pi(np.asarray(x))), 0, 40)[0]
    assert total == pytest.approx(1.0, abs=1e-8)
    # symmetric about the atom
    np.testing.assert_allclose(pi(xs), pi(-xs), rtol=1e-9)


def test_stationary_requires_alpha_kind(bm01, bm01_ss):
    tr = recurrent_from_atom(bm01, bm01_ss, 0.5)
    with pytest.raises(PreconditionError):
        stationary_distribution(tr, bm01_ss)


# ---------------------------------------------------------------------------
# transient transform


def test_transient_transform_brownian(brownian, brownian_ss):
    tr = transient_transform(brownian, brownian_ss, 1.0)
    xs = np.array([-3.0, -1.0, 0.5, 2.0])
    want = np.sign(xs) / (1.0 + np.abs(xs))
    np.testing.assert_allclose(tr.drift(xs), want, rtol=1e-9)
    assert tr.s_tilde(np.asarray(0.0)) == pytest.approx(0.5, abs=1e-12)
    # scale limits 0 and 1
    assert float(tr.s_tilde(np.asarray(-80.0))) == pytest.approx(0.0, abs=0.02)
    assert float(tr.s_tilde(np.asarray(80.0))) == pytest.approx(1.0, abs=0.02)
    (level, rate), = tr.local_time_charges
    assert level == 0.0
    assert rate == pytest.approx(-1.0, rel=1e-9)  # killing charge -c s'(y*)


def test_transient_transform_rejects_transient(gbm03, gbm03_ss):
    with pytest.raises(PreconditionError):
        transient_transform(gbm03, gbm03_ss, 1.0)


# ---------------------------------------------------------------------------
# composed optimal-stopping transform


def test_composed_transform_values(brownian, brownian_ss, bm_fp05):
    y = 0.0
    tr = composed_os_transform(brownian, brownian_ss, bm_fp05, y)
    u_yy = bm_fp05.u(y, y)
    assert float(tr.weight(np.asarray(y))) == pytest.approx(u_yy, rel=1e-9)
    assert float(tr.s_tilde(np.asarray(y))) == pytest.approx(0.5, abs=1e-12)
    assert tr.local_time_charges == ()
    assert float(np.asarray(tr.continuous_rate(np.asarray(1.0)))) == -0.5
    # weight Phi(x) = u(x, y)(1 + c |s_h(x)|) against direct quadrature
    c = u_yy / 2.0
    for x in (-1.2, 0.7, 2.0):
        sh = quad(lambda z: 1.0 / bm_fp05.u(z, y) ** 2, y, x)[0]
        want = bm_fp05.u(x, y) * (1.0 + c * abs(sh))
        assert float(tr.weight(np.asarray(x))) == pytest.approx(want, rel=1e-6)


def test_composed_transform_scale_in_unit_interval(brownian, brownian_ss, bm_fp05):
    tr = composed_os_transform(brownian, brownian_ss, bm_fp05, 0.0)
    xs = np.linspace(-4, 4, 41)
    z = tr.s_tilde(xs)
    assert np.all((z > 0) & (z < 1))
    assert np.all(np.diff(z) > 0)


def test_composed_weight_is_lambda_harmonic(brownian, brownian_ss, bm_fp05):
    # away from the atom, (1/2) Phi'' = lambda Phi  (charges cancel exactly)
    tr = composed_os_transform(brownian, brownian_ss, bm_fp05, 0.0)
    for x in (-1.5, 0.8, 2.2):
        h = 1e-4
        vals = tr.weight(np.asarray([x - h, x, x + h]))
        second = (vals[0] - 2 * vals[1] + vals[2]) / h**2
        assert 0.5 * second == pytest.approx(0.5 * vals[1], rel=1e-4)


# ---------------------------------------------------------------------------
# h-limit transform


def test_h_limit_gbm(gbm03, gbm03_ss):
    tr = h_limit_transform(gbm03, gbm03_ss)
    xs = np.array([0.5, 1.0, 3.0])
    np.testing.assert_allclose(tr.drift(xs), 0.09 * xs, rtol=1e-12)
    assert tr.extras["explosive"] == "no"
    # transformed scale 1 - 1/x
    for x in (0.5, 2.0, 10.0):
        assert tr.s_h(x) == pytest.approx(1.0 - 1.0 / x, rel=1e-9)


def test_h_limit_inverse_bessel3(inverse_bessel3, inverse_bessel3_ss):
    tr = h_limit_transform(inverse_bessel3, inverse_bessel3_ss)
    xs = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(tr.drift(xs), xs**3, rtol=1e-12)
    assert tr.extras["explosive"] == "yes"


def test_h_limit_requires_natural_scale(sqbessel3, sqbessel3_ss):
    with pytest.raises(PreconditionError):
        h_limit_transform(sqbessel3, sqbessel3_ss)


def test_transform_composes_as_diffusion(bm01, bm01_ss):
    tr = recurrent_from_atom(bm01, bm01_ss, 0.5)
    spec2 = tr.as_diffusion()
    assert spec2.l == 0.0 and spec2.r == 1.0
    xs = np.array([0.3, 0.6])
    np.testing.assert_allclose(np.asarray(spec2.b(xs)), tr.drift(xs))
