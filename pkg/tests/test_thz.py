import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import dawsn

from qeos import thz
from qeos.thz import BeamProfile, CrystalSpec, KnifeEdgeScan, ThzWaveform

F_PEAK = 1.5e12
TAU = 1 / (2 * math.pi * F_PEAK)


class TestPockels:
    def test_preset_field(self):
        phi = thz.phase_from_field(13_000.0)
        assert phi == pytest.approx(7.58e-4, rel=2e-3)
        assert phi / math.pi == pytest.approx(2.4e-4, rel=0.02)

    def test_round_trip(self):
        E = np.linspace(-2e4, 2e4, 11)
        assert np.allclose(thz.field_from_phase(thz.phase_from_field(E)), E, rtol=1e-14)

    @settings(max_examples=50)
    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-10, 10))
    def test_linear(self, a, b, k):
        lhs = thz.phase_from_field(k * a + b)
        rhs = k * thz.phase_from_field(a) + thz.phase_from_field(b)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-15)

    def test_crystal_scaling(self):
        base = CrystalSpec().phase_per_field
        assert CrystalSpec(L=500e-6).phase_per_field == pytest.approx(2 * base)
        assert CrystalSpec(probe_wavelength=0.78e-6).phase_per_field == pytest.approx(2 * base)

    def test_invalid_crystal(self):
        with pytest.raises(thz.ThzError):
            CrystalSpec(r41=0.0)


def dawson_oracle():
    """Peak envelope and tau_eff/tau of the Gaussian-derivative pulse.

    The Hilbert transform of exp(-y^2) is (2/sqrt(pi)) D(y), so the pulse
    -x exp(1/2 - x^2/2) (x = t/tau) has quadrature e^(1/2) sqrt(2/pi) (1 - 2 y D(y))
    with y = x / sqrt(2).
    """

    def env2(x):
        y = x / math.sqrt(2)
        q = math.exp(0.5) * math.sqrt(2 / math.pi) * (1 - 2 * y * dawsn(y))
        return (x * math.exp(0.5 - x * x / 2)) ** 2 + q * q

    peak2 = max(env2(x) for x in np.linspace(-5, 5, 100_001))
    integral = quad(env2, -np.inf, np.inf, limit=500)[0]
    return math.sqrt(peak2), integral / peak2


class TestCalibration:
    U = 1.25e-15
    beam = BeamProfile(200e-6, 200e-6)

    def trace(self, amplitude=1.0):
        # 10x oversampled relative to tau, long span to settle the Hilbert tails
        w = thz.synth_single_cycle(F_PEAK, TAU / 10, 200 * TAU)
        return ThzWaveform(w.samples * amplitude, w.dt, w.t0)

    def test_matches_quadrature_oracle(self):
        env_peak, tau_ratio = dawson_oracle()
        expected = math.sqrt(2 * self.U * thz.VACUUM_IMPEDANCE / (self.beam.area * tau_ratio * TAU))
        field_peak_over_env = math.exp(0) / env_peak  # max |E| = 1 for the unit pulse
        cal = thz.calibrate_trace(self.trace(), self.U, self.beam)
        assert np.abs(cal.samples).max() == pytest.approx(expected * field_peak_over_env, rel=1e-3)
        _, tau_eff = thz.effective_duration(self.trace())
        assert tau_eff == pytest.approx(tau_ratio * TAU, rel=1e-3)

    def test_sqrt_energy(self):
        a = thz.calibrate_trace(self.trace(), self.U, self.beam).samples
        b = thz.calibrate_trace(self.trace(), 4 * self.U, self.beam).samples
        # exact for every normal float; subnormal tail samples round independently
        normal = np.abs(a) >= np.finfo(float).tiny
        assert np.array_equal(b[normal], 2 * a[normal])
        assert np.all(np.abs(b[~normal] - 2 * a[~normal]) <= 4 * np.finfo(float).smallest_subnormal)

    @pytest.mark.parametrize("scale", [1e-6, -3.0, 1e4])
    def test_input_scale_invariant(self, scale):
        a = thz.calibrate_trace(self.trace(), self.U, self.beam).samples
        b = thz.calibrate_trace(self.trace(scale), self.U, self.beam).samples
        assert np.allclose(b, np.sign(scale) * a, rtol=1e-12, atol=1e-12 * np.abs(a).max())

    def test_beam_area(self):
        a = thz.calibrate_trace(self.trace(), self.U, BeamProfile(200e-6, 200e-6)).samples
        b = thz.calibrate_trace(self.trace(), self.U, BeamProfile(400e-6, 100e-6)).samples
        assert np.allclose(a, b, rtol=1e-14)

    def test_envelope_bounds_field(self):
        x = self.trace().samples
        assert np.all(np.abs(thz.analytic_signal(x)) >= np.abs(x) - 1e-12)
        assert np.allclose(thz.analytic_signal(x).real, x, atol=1e-12)

    def test_report_units(self):
        rep = thz.calibration_report(self.trace(), self.U, self.beam)
        assert rep["peak_field_V_per_cm"] == pytest.approx(rep["peak_field_V_per_m"] / 100)

    @pytest.mark.parametrize("bad", [np.zeros(64), np.r_[np.ones(63), np.nan]])
    def test_bad_traces(self, bad):
        with pytest.raises(thz.ThzError):
            thz.calibrate_trace(ThzWaveform(bad, 1e-14), self.U, self.beam)

    def test_short_trace(self):
        with pytest.raises(thz.ThzError):
            ThzWaveform(np.ones(4), 1e-14)


def knife_scan(sigma, noise, rng, x0=0.0, P0=1.0, rising=False, n=81):
    x = np.linspace(x0 - 3 * sigma, x0 + 3 * sigma, n)
    p = thz.knife_edge_model(x, P0, x0, sigma)
    if rising:
        p = P0 - p
    if noise:
        p = p + noise * P0 * rng.standard_normal(n)
    return KnifeEdgeScan(x, np.clip(p, 0, None))


class TestKnifeEdge:
    def test_noise_free(self):
        fit = thz.knife_edge_fit(knife_scan(200e-6, 0.0, None, x0=1.3e-3, P0=2.5))
        assert fit.sigma == pytest.approx(200e-6, rel=1e-4)
        assert fit.x0 == pytest.approx(1.3e-3, rel=1e-4)
        assert fit.P0 == pytest.approx(2.5, rel=1e-4)

    def test_rising_scan(self):
        rng = np.random.default_rng(1)
        fit = thz.knife_edge_fit(knife_scan(150e-6, 0.0, rng, x0=5e-4, rising=True))
        assert fit.sigma == pytest.approx(150e-6, rel=1e-4)
        assert fit.x0 == pytest.approx(5e-4, rel=1e-4)

    def test_descending_positions(self):
        s = knife_scan(200e-6, 0.0, None)
        fit = thz.knife_edge_fit(KnifeEdgeScan(s.positions[::-1], s.powers[::-1]))
        assert fit.sigma == pytest.approx(200e-6, rel=1e-4)

    def test_noisy_average(self):
        rng = np.random.default_rng(2024)
        sig = [thz.knife_edge_fit(knife_scan(200e-6, 0.01, rng)).sigma for _ in range(100)]
        assert np.mean(sig) == pytest.approx(200e-6, rel=0.01)

    def test_degenerate(self):
        with pytest.raises(thz.ThzError):
            thz.knife_edge_fit(KnifeEdgeScan(np.arange(10.0), np.ones(10)))

    def test_non_monotonic(self):
        with pytest.raises(thz.ThzError):
            KnifeEdgeScan(np.array([0.0, 2.0, 1.0]), np.ones(3))


class TestSpectrum:
    @pytest.mark.parametrize("f_peak", [0.5e12, 1.0e12, 1.5e12, 2.0e12])
    def test_peak_location(self, f_peak):
        tau = 1 / (2 * math.pi * f_peak)
        w = thz.synth_single_cycle(f_peak, tau / 20, 400 * tau)
        f, p = thz.power_spectrum(w)
        df = f[1] - f[0]
        assert abs(f[np.argmax(p)] - f_peak) <= df

    @pytest.mark.parametrize("n", [64, 65])
    def test_parseval(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        w = ThzWaveform(x, 2.5e-14)
        f, p = thz.power_spectrum(w)
        assert p.sum() * (f[1] - f[0]) == pytest.approx((x**2).sum() * w.dt, rel=1e-9)

    def test_no_dc(self):
        w = thz.synth_single_cycle(F_PEAK, TAU / 20, 200 * TAU)
        f, p = thz.power_spectrum(w)
        assert p[0] < 1e-12 * p.max()


class TestSynth:
    def test_shape(self):
        w = thz.synth_single_cycle(F_PEAK, TAU / 50, 20 * TAU, amplitude=3.0)
        t = w.times
        mid = np.argmin(np.abs(t))
        assert t[mid] == pytest.approx(0.0, abs=1e-30) and w.samples[mid] == 0.0
        assert t[np.argmax(w.samples)] == pytest.approx(-TAU, abs=w.dt)
        assert t[np.argmin(w.samples)] == pytest.approx(TAU, abs=w.dt)
        assert w.samples.max() == pytest.approx(3.0, rel=1e-3)

    @pytest.mark.parametrize("dt,span", [(TAU / 5, 20 * TAU), (TAU / 20, 5 * TAU)])
    def test_under_resolved(self, dt, span):
        with pytest.raises(thz.ThzError):
            thz.synth_single_cycle(F_PEAK, dt, span)

    def test_csv_round_trip(self, tmp_path):
        w = thz.synth_single_cycle(F_PEAK, TAU / 10, 20 * TAU)
        path = tmp_path / "w.csv"
        thz.write_xy_csv(path, ("time_s", "field_V/m"), w.times, w.samples)
        back = thz.read_waveform_csv(path)
        assert np.allclose(back.samples, w.samples) and back.units is thz.Units.V_PER_M
        assert back.dt == pytest.approx(w.dt, rel=1e-9)
