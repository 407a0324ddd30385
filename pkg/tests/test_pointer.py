import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from grwcount import pointer as P

mpmath.mp.dps = 40


def grid(half=25.0, dx=1 / 16):
    return P.Grid.spanning(-half, half, dx)


def gauss(delta=1.0, center=0.0, g=None):
    return P.gaussian_pointer(delta, center, g or grid(), mass=1.0, hbar=1.0)


def l2(a, b):
    return math.sqrt(np.sum(np.abs(a.amplitudes - b.amplitudes) ** 2) * a.dx)


class TestPreparation:
    def test_peak_value_and_variance(self):
        psi = gauss()
        i = np.argmin(np.abs(psi.x))
        assert psi.amplitudes[i].real == pytest.approx((2 * math.pi) ** -0.25, rel=1e-12)
        # quadrature oracle for the continuum variance
        var, _ = integrate.quad(lambda x: x * x * math.exp(-x * x / 2) / math.sqrt(2 * math.pi), -np.inf, np.inf)
        assert psi.variance() == pytest.approx(var, abs=1e-8)

    def test_mean(self):
        assert gauss(center=5.0).mean() == pytest.approx(5.0, abs=1e-12)

    def test_normalized(self):
        assert gauss(delta=0.7, center=1.3).norm() == pytest.approx(1.0, abs=1e-12)

    def test_discrete_correction_small(self):
        g = grid(dx=1 / 8)
        x = g.x
        raw = (2 * math.pi) ** -0.25 * np.exp(-x * x / 4)
        assert abs(np.sum(raw**2) * g.dx - 1) < 1e-10

    def test_grid_too_small(self):
        with pytest.raises(P.GridError):
            P.gaussian_pointer(1.0, 0.0, grid(half=10.0), 1.0, 1.0)

    def test_too_coarse(self):
        with pytest.raises(P.GridError):
            P.gaussian_pointer(1.0, 0.0, grid(dx=0.5), 1.0, 1.0)

    def test_edge_invariant(self):
        g = grid()
        amp = np.ones(g.n) / math.sqrt(g.n * g.dx)
        with pytest.raises(P.SupportEscapeError):
            P.GridWavefunction(amp, g.x_min, g.dx, 1.0, 1.0)

    def test_norm_invariant(self):
        psi = gauss()
        with pytest.raises(ValueError):
            P.GridWavefunction(psi.amplitudes * 1.001, psi.x_min, psi.dx, 1.0, 1.0)

    def test_immutable(self):
        psi = gauss()
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 1.0


class TestMeasurement:
    def test_zero_shift(self):
        psi = gauss()
        c = P.MeasurementCoupling(1.0, 0.0, 1.0, 1.0)
        assert l2(P.evolve_measurement(psi, c, 0.0), psi) < 1e-12

    def test_shift_to_six(self):
        psi = gauss()
        c = P.MeasurementCoupling(1.0, 2.0, 0.0, 3.0)
        out = P.evolve_measurement(psi, c, 2.0)
        assert l2(out, gauss(center=6.0)) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-9.0, 9.0), st.floats(-9.0, 9.0))
    def test_composition(self, s1, s2):
        psi = gauss(g=grid(half=40))
        two = P.translate(P.translate(psi, s1), s2)
        one = P.translate(psi, s1 + s2)
        assert l2(two, one) < 1e-9

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-10.0, 10.0))
    def test_unitary(self, s):
        assert P.translate(gauss(), s).norm() == pytest.approx(1.0, abs=1e-10)

    def test_escape(self):
        with pytest.raises(P.SupportEscapeError):
            P.translate(gauss(), 20.0)

    def test_separated_outcomes_overlap(self):
        psi = gauss(g=grid(half=40, dx=1 / 8))
        c = P.MeasurementCoupling(1.0, -10.0, 10.0, 1.0)
        a = P.evolve_measurement(psi, c, c.omega1)
        b = P.evolve_measurement(psi, c, c.omega2)
        assert abs(P.overlap(a, b)) == pytest.approx(math.exp(-50), rel=1e-8)
        assert math.exp(-50) == pytest.approx(1.93e-22, rel=1e-2)


class TestFree:
    def test_identity(self):
        psi = gauss()
        assert P.evolve_free(psi, 0.0) is psi

    def test_variance_two(self):
        out = P.evolve_free(gauss(), 2.0)
        assert out.variance() == pytest.approx(2.0, rel=1e-10)
        assert out.norm() == pytest.approx(1.0, abs=1e-10)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            P.evolve_free(gauss(), -1.0)

    def test_escape_suggests_grid(self):
        with pytest.raises(P.SupportEscapeError, match="needs a grid"):
            P.evolve_free(gauss(), 10.0)

    def test_clipped_leaks(self):
        psi = P.clipped(gauss(), -3.0, 3.0)
        assert P.grid_leakage(psi, -3.0, 3.0) == 0.0
        out = P.evolve_free(psi, 0.01)
        assert P.grid_leakage(out, -3.0, 3.0) > 1e-30

    def test_clipped_leak_refined_grid(self):
        leaks = []
        for dx in (1 / 32, 1 / 64):
            psi = P.clipped(gauss(g=grid(dx=dx)), -3.0, 3.0)
            leaks.append(P.grid_leakage(P.evolve_free(psi, 0.01), -3.0, 3.0))
        assert all(v > 0 for v in leaks)
        assert leaks[1] / leaks[0] == pytest.approx(1.0, rel=0.1)


class TestTails:
    @pytest.mark.parametrize("D", [1.0, 2.0, 5.0, 10.0])
    def test_erfc(self, D):
        td = P.tail_decompose(gauss(), D)
        expected = float(mpmath.erfc(D / mpmath.sqrt(2)))
        assert td.N_out.value == pytest.approx(expected, rel=1e-6)

    def test_erfc_value_at_ten(self):
        assert float(mpmath.erfc(10 / mpmath.sqrt(2))) == pytest.approx(1.524e-23, rel=1e-3)

    def test_weights_sum(self):
        td = P.tail_decompose(gauss(), 1.5)
        assert td.N_in.value + td.N_out.value == pytest.approx(1.0, abs=1e-10)

    def test_pieces_disjoint(self):
        psi = gauss()
        td = P.tail_decompose(psi, 2.0)
        inside = np.abs(psi.x) < 2.0
        assert np.all(td.in_state.amplitudes[~inside] == 0)
        assert np.all(td.out_state.amplitudes[inside] == 0)
        assert P.overlap(td.in_state, td.out_state) == 0
        assert td.in_state.norm() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("D", [0.5, 3.0, 10.0])
    def test_reconstruction(self, D):
        psi = P.translate(gauss(), 0.37)
        td = P.tail_decompose(psi, D)
        err = math.sqrt(np.sum(np.abs(td.reconstruct() - psi.amplitudes) ** 2) * psi.dx)
        assert err < 1e-10

    @pytest.mark.parametrize("D", [12.0, 20.0, 35.0, 50.0, 60.0])
    def test_log_path(self, D):
        g = grid(half=62, dx=1 / 8)
        td = P.tail_decompose(gauss(g=g), D)
        assert not td.N_out.is_zero and td.N_out.log10_value > -math.inf
        expected = float(mpmath.log10(mpmath.erfc(D / mpmath.sqrt(2))))
        assert td.N_out.log10_value == pytest.approx(expected, rel=1e-9)

    def test_beyond_grid_edge(self):
        td = P.tail_decompose(gauss(), 30.0)
        assert td.out_state is None
        assert td.method == "gaussian-closed-form"
        assert td.N_out.log10_value < -190

    def test_uniform_half(self):
        Dv = 1.0
        g = P.Grid.spanning(-3, 3, 1 / 2000)
        amp = np.where(np.abs(g.x) < 2 * Dv, 1.0, 0.0)
        amp = amp / math.sqrt(np.sum(amp**2) * g.dx)
        psi = P.GridWavefunction(amp, g.x_min, g.dx, 1.0, 1.0)
        td = P.tail_decompose(psi, Dv)
        assert td.N_in.value == pytest.approx(0.5, abs=1e-3)
        assert sum(td.grid_weights) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.3, 3.0), st.floats(0.1, 40.0))
    def test_never_zero(self, delta, ratio):
        g = P.Grid.spanning(-12 * delta - 1, 12 * delta + 1, delta / 8)
        td = P.tail_decompose(P.gaussian_pointer(delta, 0.0, g, 1.0, 1.0), ratio * delta)
        assert td.N_out.log10_value > -math.inf


class TestOverlap:
    def test_self(self):
        psi = gauss()
        assert P.overlap(psi, psi) == pytest.approx(1.0, abs=1e-10)

    def test_hermitian_exact(self):
        a = P.evolve_free(P.translate(gauss(), 0.3), 0.7)
        b = P.translate(gauss(delta=1.3), -1.1)
        assert P.overlap(a, b) == np.conj(P.overlap(b, a))

    def test_four_delta(self):
        g = grid(dx=1 / 16)
        a, b = gauss(g=g), gauss(center=4.0, g=g)
        assert abs(P.overlap(a, b)) == pytest.approx(math.exp(-2), rel=1e-8)
        assert math.exp(-2) == pytest.approx(0.13534, abs=1e-5)

    def test_grid_mismatch(self):
        with pytest.raises(P.GridMismatchError):
            P.overlap(gauss(), gauss(g=grid(half=26)))

    def test_log_overlap_far(self):
        g = P.Grid.spanning(-13, 1013, 1 / 8)
        a, b = gauss(g=g), gauss(center=1000.0, g=g)
        assert P.log10_abs_overlap(a, b) == pytest.approx(-125000 / math.log(10), rel=1e-6)

    def test_report(self):
        c = P.MeasurementCoupling(2.0, 1.0, 6.0, 2.0)
        r = P.distinguishability_report(c, 1.0)
        assert r["shift"] == 20.0 and r["ratio"] == 20.0
        assert r["overlap_log10"] == pytest.approx(-21.71, abs=1e-2)
        assert P.distinguishability_report(P.MeasurementCoupling(1, 1, 1, 1), 1.0)["overlap_log10"] == 0
        big = P.distinguishability_report(P.MeasurementCoupling(1, 0, 1000, 1), 1.0)
        assert big["overlap_log10"] == pytest.approx(-54287, abs=1)


class TestBranches:
    def test_superposition(self):
        psi = gauss(g=grid(half=40, dx=1 / 8))
        c = P.MeasurementCoupling(1.0, -10.0, 10.0, 1.0)
        br = P.measure_superposition(psi, c, {"1": 0.6, "2": 0.8j})
        m = P.branch_overlaps(br)
        assert m[0, 0] == pytest.approx(1.0) and abs(m[0, 1]) == pytest.approx(math.exp(-50), rel=1e-8)
        assert sum(abs(b.amplitude) ** 2 for b in br) == pytest.approx(1.0)

    def test_csv(self):
        text = gauss().to_csv()
        assert text.splitlines()[0] == "x,re,im,density"
