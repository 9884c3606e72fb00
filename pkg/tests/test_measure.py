import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from levyfield import _rng
from levyfield.errors import DivergenceError, ShellError, ValidationError
from levyfield.measure import (JumpMeasure, LevyTriplet, exp_integral, jump_moment,
                               levy_characteristic, sample_jump, shell_partition)


def psi_oracle(b, sigma2, density, t):
    """Characteristic exponent by direct quadrature of the Levy-Khintchine integrand."""
    def re(s):
        return (math.cos(t * s) - 1.0) * density(s)

    def im(s):
        comp = t * s if abs(s) <= 1 else 0.0
        return (math.sin(t * s) - comp) * density(s)

    out = 0j
    for lo, hi in ((-np.inf, -1), (-1, 0), (0, 1), (1, np.inf)):
        r = integrate.quad(re, lo, hi, limit=400, epsabs=1e-12)[0]
        i = integrate.quad(im, lo, hi, limit=400, epsabs=1e-12)[0]
        out += complex(r, i)
    return 1j * b * t - 0.5 * sigma2 * t * t + out


def gamma_density(v, w):
    return lambda s: v * math.exp(-w * s) / s if s > 0 else 0.0


def bigamma_density(v, w):
    return lambda s: v * math.exp(-w * abs(s)) / abs(s) if s != 0 else 0.0


class TestCharacteristic:
    def test_null_triplet(self):
        assert levy_characteristic(LevyTriplet(0.0, 0.0), 1.0) == 0

    def test_gaussian(self):
        assert levy_characteristic(LevyTriplet(0.0, 1.0), 2.0) == pytest.approx(-2.0 + 0j)

    def test_point_mass_outside_unit_ball(self):
        psi = levy_characteristic(LevyTriplet(0.0, 0.0, JumpMeasure.dirac(2.0)), 1.0)
        assert psi == pytest.approx(cmath.exp(2j) - 1, abs=1e-14)
        assert psi == pytest.approx(-1.4161468 + 0.9092974j, abs=1e-7)

    def test_point_mass_inside_unit_ball_is_compensated(self):
        psi = levy_characteristic(LevyTriplet(0.0, 0.0, JumpMeasure.dirac(0.5)), 3.0)
        assert psi == pytest.approx(cmath.exp(1.5j) - 1 - 1.5j, abs=1e-14)

    @pytest.mark.parametrize("t", [0.3, 1.0, 2.5, -4.0])
    def test_gamma_against_quadrature(self, t):
        trip = LevyTriplet(0.2, 0.5, JumpMeasure.gamma(1.5, 2.0))
        ref = psi_oracle(0.2, 0.5, gamma_density(1.5, 2.0), t)
        assert levy_characteristic(trip, t) == pytest.approx(ref, abs=1e-8)

    @pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
    def test_bigamma_closed_form(self, t):
        # symmetric gamma: psi = -2 v log sqrt(1 + t^2/w^2) = -v log(1 + t^2/w^2)
        trip = LevyTriplet(0.0, 0.0, JumpMeasure.bigamma(1.0, 2.0))
        assert levy_characteristic(trip, t) == pytest.approx(-math.log1p(t * t / 4.0), abs=1e-9)
        ref = psi_oracle(0.0, 0.0, bigamma_density(1.0, 2.0), t)
        assert levy_characteristic(trip, t) == pytest.approx(ref, abs=1e-8)

    def test_array_shape_and_exact_zero(self):
        trip = LevyTriplet(1.0, 1.0, JumpMeasure.gamma(1.0, 1.0))
        out = levy_characteristic(trip, np.array([[0.0, 1.0], [2.0, 0.0]]))
        assert out.shape == (2, 2)
        assert out[0, 0] == 0 and out[1, 1] == 0

    def test_non_finite_t_rejected(self):
        with pytest.raises(ValidationError):
            levy_characteristic(LevyTriplet(0.0, 1.0), np.inf)

    @settings(max_examples=40, deadline=None)
    @given(t=st.floats(-20, 20), b=st.floats(-3, 3), s2=st.floats(0, 4),
           loc=st.floats(0.1, 3).map(lambda x: x) | st.floats(-3, -0.1))
    def test_conjugate_symmetry(self, t, b, s2, loc):
        trip = LevyTriplet(b, s2, JumpMeasure.dirac(loc, 0.7))
        a, c = levy_characteristic(trip, t), levy_characteristic(trip, -t)
        assert a == pytest.approx(c.conjugate(), abs=1e-12)
        assert a.real <= 1e-12

    def test_conjugate_symmetry_gamma(self):
        trip = LevyTriplet(0.3, 0.0, JumpMeasure.gamma(1.0, 1.0))
        for t in (0.7, 2.0, 9.0):
            assert levy_characteristic(trip, t) == pytest.approx(
                levy_characteristic(trip, -t).conjugate(), abs=1e-10)


class TestJumpMoments:
    def test_point_mass_square(self):
        assert jump_moment(JumpMeasure.dirac(2.0), 2) == 4.0

    def test_first_moment_ignores_small_jumps(self):
        assert jump_moment(JumpMeasure.dirac(0.5), 1) == 0.0

    def test_gamma_second_moment(self):
        nu = JumpMeasure.gamma(1.0, 1.0)
        assert jump_moment(nu, 2) == pytest.approx(1.0)
        ref = integrate.quad(lambda s: s * math.exp(-s), 0, np.inf)[0]
        assert jump_moment(nu, 2) == pytest.approx(ref)

    def test_gamma_first_moment_tail(self):
        nu = JumpMeasure.gamma(2.0, 3.0)
        ref = integrate.quad(lambda s: 2.0 * math.exp(-3.0 * s), 1, np.inf)[0]
        assert jump_moment(nu, 1) == pytest.approx(ref)

    def test_bigamma_odd_vanish(self):
        nu = JumpMeasure.bigamma(1.0, 2.0)
        assert jump_moment(nu, 3) == 0.0
        assert jump_moment(nu, 4) == pytest.approx(2 * math.gamma(4) / 2 ** 4)

    @settings(max_examples=50, deadline=None)
    @given(locs=st.lists(st.floats(0.05, 4) | st.floats(-4, -0.05), min_size=1, max_size=4),
           n=st.integers(2, 6), data=st.data())
    def test_discrete_sum(self, locs, n, data):
        masses = data.draw(st.lists(st.floats(0.01, 3), min_size=len(locs), max_size=len(locs)))
        want = sum(c * s ** n for s, c in zip(locs, masses))
        assert jump_moment(JumpMeasure.discrete(locs, masses), n) == pytest.approx(want, rel=1e-12)

    def test_bad_order(self):
        with pytest.raises(ValidationError):
            jump_moment(JumpMeasure.null(), 0)


class TestExpIntegral:
    def test_point_mass(self):
        assert exp_integral(JumpMeasure.dirac(2.0), 1.0) == pytest.approx(math.e ** 2 - 1)
        assert exp_integral(JumpMeasure.dirac(2.0), 1.0) == pytest.approx(6.3891, abs=1e-4)

    def test_frullani(self):
        assert exp_integral(JumpMeasure.gamma(1.0, 2.0), 1.0) == pytest.approx(math.log(2.0))
        ref = integrate.quad(lambda s: (math.exp(-s) - math.exp(-2 * s)) / s, 0, np.inf)[0]
        assert exp_integral(JumpMeasure.gamma(1.0, 2.0), 1.0) == pytest.approx(ref, rel=1e-8)

    def test_null(self):
        assert exp_integral(JumpMeasure.null(), 7.0) == 0.0

    def test_divergent(self):
        with pytest.raises(DivergenceError):
            exp_integral(JumpMeasure.gamma(1.0, 2.0), 2.0)

    @settings(max_examples=30, deadline=None)
    @given(b1=st.floats(0.01, 1.9), b2=st.floats(0.01, 1.9))
    def test_monotone_in_beta(self, b1, b2):
        nu = JumpMeasure.bigamma(0.7, 2.0)
        lo, hi = sorted((b1, b2))
        assert exp_integral(nu, lo) <= exp_integral(nu, hi) + 1e-12


class TestShells:
    def test_point_mass_single_shell(self):
        dec = shell_partition(JumpMeasure.dirac(2.0), 1e-3)
        assert list(dec.indices) == [0]
        assert dec.masses[0] == 1.0 and dec.residual == 0.0

    def test_gamma_ell_max(self):
        dec = shell_partition(JumpMeasure.gamma(1.0, 1.0), 1e-3)
        eps = 1.0 / (dec.ell_max + 1)
        resid = integrate.quad(lambda s: math.exp(-s), 0, eps)[0]
        assert resid <= 1e-3
        assert dec.ell_max >= 999
        # minimal: one shell fewer misses the tolerance
        assert integrate.quad(lambda s: math.exp(-s), 0, 1.0 / dec.ell_max)[0] > 1e-3

    def test_partition_and_mass_additivity(self):
        nu = JumpMeasure.gamma(1.0, 1.0)
        dec = shell_partition(nu, 1e-2)
        assert np.all(dec.upper[1:] == dec.lower[:-1])
        eps = dec.lower[-1]
        ref = integrate.quad(lambda s: math.exp(-s) / s, eps, 1)[0] + \
            integrate.quad(lambda s: math.exp(-s) / s, 1, np.inf)[0]
        assert dec.total_mass == pytest.approx(ref, rel=1e-9)
        assert dec.total_mass == pytest.approx(nu.tail_mass(eps), rel=1e-12)

    def test_cap_raises_with_residual(self):
        with pytest.raises(ShellError) as info:
            shell_partition(JumpMeasure.gamma(1.0, 1.0), 1e-3, max_shells=10)
        assert info.value.residual > 1e-3

    def test_point_mass_draws(self):
        dec = shell_partition(JumpMeasure.dirac(2.0), 1e-3)
        rng = _rng.stream(0, "jump")
        assert np.all(dec.sample_sizes(np.zeros(100, int), rng) == 2.0)

    def test_two_point_mean(self):
        nu = JumpMeasure.discrete([1.0, 3.0], [0.5, 0.5])
        dec = shell_partition(nu, 1e-3)
        # size-biased draw across shells by mass, then within shell
        rng = _rng.stream(1, "count")
        pos = rng.choice(len(dec.masses), size=100_000, p=dec.masses / dec.total_mass)
        draws = dec.sample_sizes(pos, _rng.stream(1, "jump"))
        se = draws.std() / math.sqrt(len(draws))
        assert abs(draws.mean() - 2.0) <= 3 * se

    def test_gamma_shell_support(self):
        dec = shell_partition(JumpMeasure.gamma(1.0, 1.0), 1e-3)
        rng = _rng.stream(2, "jump")
        assert np.all(dec.sample_sizes(np.zeros(5000, int), rng) > 1.0)
        pos = 7
        x = dec.sample_sizes(np.full(2000, pos), rng)
        assert np.all((x > dec.lower[pos]) & (x <= dec.upper[pos]))
        assert sample_jump(dec, 0, rng) > 1.0

    def test_gamma_shell_distribution(self):
        # conditional law on (1, inf): P(S > 2 | S > 1) = E1(2) / E1(1)
        from scipy.special import exp1
        dec = shell_partition(JumpMeasure.gamma(1.0, 1.0), 1e-3)
        x = dec.sample_sizes(np.zeros(40_000, int), _rng.stream(3, "jump"))
        p = exp1(2.0) / exp1(1.0)
        assert abs(np.mean(x > 2.0) - p) <= 4 * math.sqrt(p * (1 - p) / len(x))

    def test_bigamma_sign_symmetry(self):
        dec = shell_partition(JumpMeasure.bigamma(1.0, 2.0), 1e-3)
        x = dec.sample_sizes(np.zeros(20_000, int), _rng.stream(4, "jump"))
        assert np.all(np.abs(x) > 1)
        assert abs(np.mean(x > 0) - 0.5) <= 4 * 0.5 / math.sqrt(len(x))


class TestTriplet:
    def test_from_jumps_adds_compensator(self):
        trip = LevyTriplet.from_jumps(JumpMeasure.dirac(0.5, 2.0), drift=0.25)
        assert trip.b == pytest.approx(1.25)
        assert trip.effective_drift == pytest.approx(0.25)

    def test_validation(self):
        with pytest.raises(ValidationError):
            LevyTriplet(0.0, -1.0)
        with pytest.raises(ValidationError):
            JumpMeasure.discrete([0.0], [1.0])
        with pytest.raises(ValidationError):
            JumpMeasure.gamma(-1.0, 1.0)
