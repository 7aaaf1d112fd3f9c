"""Kernel-level unit and property tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikegrad.kernels import (AhpParams, EPSILON_MS, ImpactParams, PspParams,
                               ahp_deriv, ahp_value, impact_kernel,
                               pair_kernel, psp_deriv, psp_value)
from spikegrad.oracles import impact_product_quadrature

EXC = PspParams(alpha=1.5, beta=1.0, tau1=20.0, delay=0.5, sign=1.0)
INH = PspParams(alpha=1.2, beta=1.0, tau1=10.0, delay=0.7, sign=-1.0)


class TestPsp:
    def test_zero_at_and_before_onset(self):
        for p in (EXC, INH):
            assert psp_value(p, p.delay) == 0.0
            assert psp_value(p, p.delay - 0.3) == 0.0
            assert psp_value(p, -5.0) == 0.0

    def test_asymptotic_decay(self):
        p = PspParams(1.5, 1.0, 20.0, 0.0, 1.0)
        assert abs(psp_value(p, 2000.0)) < 1e-12

    def test_known_value(self):
        # frozen from a 50-digit evaluation of the formula at t' = 10
        assert psp_value(EXC, 10.5) == pytest.approx(0.10210458431188150, rel=1e-14)

    def test_inhibitory_sign_flip(self):
        t = np.linspace(0.8, 300, 500)
        v = psp_value(INH, t)
        assert np.all(v <= 0)
        assert v.min() < 0
        flipped = PspParams(INH.alpha, INH.beta, INH.tau1, INH.delay, 1.0)
        np.testing.assert_allclose(v, -psp_value(flipped, t), rtol=0, atol=0)

    def test_deriv_zero_before_onset(self):
        assert psp_deriv(EXC, 0.1) == 0.0

    def test_deriv_onset_domain_error(self):
        with pytest.raises(ValueError):
            psp_deriv(EXC, EXC.delay)
        with pytest.raises(ValueError):
            ahp_deriv(AhpParams(1000.0, 1.2), 0.0)

    def test_deriv_matches_finite_difference(self):
        h = 1e-5
        for p in (EXC, INH, PspParams(1.5, 5.0, 80.0, 0.4, 1.0),
                  PspParams(1.2, 50.0, 100.0, 0.9, -1.0)):
            for t in p.delay + np.array([0.01, 0.5, 5.0, 20.0, 80.0, 300.0]):
                fd = (psp_value(p, t + h) - psp_value(p, t - h)) / (2 * h)
                assert psp_deriv(p, t) == pytest.approx(fd, rel=1e-6, abs=1e-14)

    def test_deriv_sign_flips_at_maximum(self):
        # extremum of the rise/decay balance: t'^2/tau1 + t'/2 = beta*alpha^2
        ba2 = EXC.beta * EXC.alpha**2
        tstar = (-0.5 + np.sqrt(0.25 + 4 * ba2 / EXC.tau1)) / (2 / EXC.tau1)
        t = EXC.delay + tstar
        assert psp_deriv(EXC, t - 0.05) > 0
        assert psp_deriv(EXC, t + 0.05) < 0
        assert psp_deriv(EXC, t) == pytest.approx(0.0, abs=1e-6)


class TestAhp:
    def test_value_at_zero_plus(self):
        p = AhpParams(1000.0, 1.2)
        assert ahp_value(p, 1e-12) == pytest.approx(-1000.0, rel=1e-9)
        assert ahp_value(p, -1.0) == 0.0
        assert ahp_value(p, 0.0) == 0.0

    def test_strictly_negative_after_spike(self):
        p = AhpParams(1000.0, 1.2)
        t = np.linspace(1e-6, 50, 1000)
        assert np.all(ahp_value(p, t) < 0)

    def test_deriv_matches_finite_difference(self):
        p = AhpParams(1000.0, 1.2)
        h = 1e-7
        for t in (0.1, 1.0, 3.0, 10.0):
            fd = (ahp_value(p, t + h) - ahp_value(p, t - h)) / (2 * h)
            assert ahp_deriv(p, t) == pytest.approx(fd, rel=1e-6)


class TestImpact:
    def test_direct_substitution(self):
        assert impact_kernel(0.0, 1.0, 1.0) == pytest.approx(np.exp(-1), rel=1e-12)

    def test_singularity_suppression(self):
        assert impact_kernel(1.0, 50.0, 2e-3) < 1e-100

    def test_domain_error(self):
        with pytest.raises(ValueError):
            impact_kernel(1.0, 50.0, EPSILON_MS)
        with pytest.raises(ValueError):
            impact_kernel(1.0, 50.0, -1.0)

    def test_unimodal_for_positive_beta(self):
        t = np.linspace(0.01, 600, 20000)
        for beta in (0.5, 1.0, 2.0, 5.0):
            for tau in (10.0, 50.0, 150.0):
                v = impact_kernel(beta, tau, t)
                d = np.diff(v)
                # strictly rising then falling: exactly one sign change
                changes = np.sum(np.diff(np.sign(d[d != 0])) != 0)
                assert changes == 1
                k = int(np.argmax(v))
                assert 0 < k < len(t) - 1


class TestPairKernel:
    T = ImpactParams(150.0)

    def test_equal_ages_closed_form(self):
        for t in (0.5, 10.0, 77.0, 400.0):
            assert pair_kernel(t, t, self.T) == pytest.approx(
                0.25 * np.exp(-2 * t / 150.0), rel=1e-14)
        assert pair_kernel(77.0, 77.0, self.T) == pytest.approx(
            0.08954974233715801, rel=1e-14)

    def test_quadrature_spot_check(self):
        q = impact_product_quadrature(100.0, 200.0, 150.0)
        assert pair_kernel(100.0, 200.0, self.T) == pytest.approx(q, rel=1e-4)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            pair_kernel(0.0, 1.0, self.T)

    @given(st.floats(0.01, 500.0), st.floats(0.01, 500.0))
    @settings(max_examples=200, deadline=None)
    def test_symmetry_exact_and_bounded(self, t1, t2):
        a = pair_kernel(t1, t2, self.T)
        assert a == pair_kernel(t2, t1, self.T)
        assert 0 < a <= 0.25

    def test_bound_approached_at_small_equal_ages(self):
        assert pair_kernel(1e-6, 1e-6, self.T) == pytest.approx(0.25, rel=1e-7)


@given(st.floats(0.6, 400.0))
@settings(max_examples=100, deadline=None)
def test_excitatory_nonnegative_inhibitory_nonpositive(t):
    assert psp_value(EXC, t) >= 0
    assert psp_value(INH, t) <= 0


def test_deriv_fd_sweep_with_onset_guard_band():
    h = 1e-5
    for p in (EXC, INH):
        ages = p.delay + np.concatenate([
            np.linspace(1e-3 + 2 * h, 1.0, 40), np.linspace(1.0, 450.0, 60)])
        for t in ages:
            fd = (psp_value(p, t + h) - psp_value(p, t - h)) / (2 * h)
            assert psp_deriv(p, t) == pytest.approx(fd, rel=1e-5, abs=1e-13)
