"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

A summary line per criterion is printed at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import dawsn

from qeos import fock, lockin, tags, thz
from qeos.fock import DetectionMode, ProbeKind, ProbeSpec
from qeos.pipeline import ScanConfig, run_scan

PRESET = ProbeSpec()


def timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


@pytest.mark.criterion(1, "alpha reproduction")
def test_alpha(report):
    alpha, dt = timed(lambda: fock.responsivity(PRESET))
    report(alpha=alpha, seconds=dt)
    assert 0.782 <= alpha <= 0.798
    assert dt < 1.0


@pytest.mark.criterion(2, "sigma(n-) and c1 reproduction")
def test_sigma_and_c1(report):
    st, dt = timed(lambda: fock.probe_click_stats(PRESET))
    report(sigma_minus=st.sigma_diff, c1=st.c1, seconds=dt)
    assert 0.124 <= st.sigma_diff <= 0.128
    assert 0.0131 <= st.c1 <= 0.0136
    assert dt < 1.0


@pytest.mark.criterion(3, "Pockels phase at 130 V/cm")
def test_pockels_constant(report):
    ratio = thz.phase_from_field(130.0 * 100) / math.pi
    report(phase_over_pi=ratio)
    assert 2.35e-4 <= ratio <= 2.45e-4


@pytest.mark.criterion(4, "shot-noise SE evaluator")
def test_predicted_se(report):
    se = lockin.predicted_se(6.3e7, 4000, 0.790, 0.126, 0.027)
    report(se=se)
    assert se == pytest.approx(1.04e-5, rel=0.01)


def _repeat_spread(K, R, phase=0.0):
    alpha = fock.responsivity(PRESET)
    vals, ses = [], []
    for seed in range(R):
        acq = tags.AcquisitionConfig(num_periods=K, rng_seed=seed)
        est = lockin.estimate_phase(lockin.window_phases(tags.simulate_window_counts(acq, PRESET, phase)), alpha)
        vals.append(est.phi_corrected)
        ses.append(est.se)
    return float(np.std(vals, ddof=1)), float(np.mean(ses))


@pytest.mark.criterion(5, "K^-1/2 law")
def test_sqrt_k_law(report):
    t = time.perf_counter()
    ks = np.array([1e2, 1e3, 1e4])
    spreads = [_repeat_spread(int(k), 1000)[0] for k in ks]
    slope = float(np.polyfit(np.log(ks), np.log(spreads), 1)[0])
    dt = time.perf_counter() - t
    report(slope=slope, seconds=dt)
    assert slope == pytest.approx(-0.5, abs=0.03)
    assert dt <= 120


@pytest.mark.criterion(6, "noise-model match at K=1e4")
def test_noise_model(report):
    t = time.perf_counter()
    K = 10_000
    st = fock.probe_click_stats(PRESET)
    pred = lockin.predicted_se_corrected(K, 4000, st.alpha, st.sigma_diff, st.c_plus)
    spread, mean_se = _repeat_spread(K, 1000)
    dt = time.perf_counter() - t
    report(empirical=spread, predicted=pred, ratio=spread / pred, reported_ratio=mean_se / pred, seconds=dt)
    assert spread == pytest.approx(pred, rel=0.10)
    assert dt <= 60


@pytest.mark.criterion(7, "probe comparison")
def test_probe_comparison(report):
    t = time.perf_counter()
    coh = ProbeSpec(ProbeKind.COHERENT)
    s_sq = fock.probe_click_stats(PRESET).sigma_diff
    s_co = fock.probe_click_stats(coh).sigma_diff
    lossless_sq = fock.per_pulse_sensitivity(ProbeSpec(efficiency=1.0), DetectionMode.NUMBER_RESOLVED)
    lossless_co = fock.per_pulse_sensitivity(ProbeSpec(ProbeKind.COHERENT, efficiency=1.0), DetectionMode.NUMBER_RESOLVED)
    u_sq = fock.per_pulse_sensitivity(PRESET, DetectionMode.ON_OFF)
    u_co = fock.per_pulse_sensitivity(coh, DetectionMode.ON_OFF)
    dt = time.perf_counter() - t
    report(sigma_sq=s_sq, sigma_coh=s_co, resolved_gap=abs(lossless_sq - lossless_co), u_sq=u_sq, u_coh=u_co, seconds=dt)
    assert s_sq < s_co
    assert abs(lossless_sq - lossless_co) <= 1e-10
    assert u_sq > u_co
    assert dt < 1.0


@pytest.mark.criterion(8, "end-to-end scan at K=1e4")
def test_end_to_end_scan(report):
    cfg = ScanConfig.from_dict({"acquisition": {"num_periods": 10_000}})
    assert cfg.delay_grid().size == 41
    res, dt = timed(lambda: run_scan(cfg))
    corr, snr = res.correlation(), res.peak_snr()
    report(correlation=corr, peak_snr=snr, mean_se=float(res.se.mean()), seconds=dt)
    assert dt <= 600
    assert corr > 0.95
    assert snr >= 10


@pytest.mark.criterion(9, "codec round trip and fuzzing")
def test_codec(report):
    t = time.perf_counter()
    rng = np.random.default_rng(909)
    arr = np.zeros(100_000, dtype=tags.RECORD_DTYPE)
    arr["timestamp"] = np.sort(rng.integers(0, 2**64, size=arr.size, dtype=np.uint64))
    arr["channel"] = rng.integers(0, 3, size=arr.size)
    header = tags.StreamHeader(arr.size, 80_000_000, 10_000)
    data = tags.encode_stream(header, arr)
    h2, back = tags.read_stream(data)
    assert h2 == header and np.array_equal(back, arr)
    assert tags.encode_stream(h2, back) == data

    seed = tags.encode_stream(tags.StreamHeader(64, 80_000_000, 10_000), arr[:64])
    kinds = {}
    for _ in range(10_000):
        buf = bytearray(seed)
        for _ in range(rng.integers(1, 4)):
            op = rng.integers(3)
            pos = int(rng.integers(len(buf))) if buf else 0
            if op == 0 and buf:
                buf[pos] ^= 1 << int(rng.integers(8))
            elif op == 1:
                del buf[pos:]
            else:
                buf[pos:pos] = bytes([int(rng.integers(256))])
        try:
            tags.read_stream(bytes(buf))
            kinds["ok"] = kinds.get("ok", 0) + 1
        except tags.StreamError as exc:
            assert 0 <= exc.offset <= len(buf)
            kinds[exc.kind] = kinds.get(exc.kind, 0) + 1
    dt = time.perf_counter() - t
    report(outcomes=len(kinds), errors=sum(v for k, v in kinds.items() if k != "ok"), seconds=dt)
    assert dt <= 60


@pytest.mark.criterion(10, "calibration quadrature oracle")
def test_calibration_oracle(report):
    f_peak = 1.5e12
    tau = 1 / (2 * math.pi * f_peak)
    trace = thz.synth_single_cycle(f_peak, tau / 10, 200 * tau)
    beam = thz.BeamProfile(200e-6, 200e-6)
    U = 1.25e-15

    def env2(x):
        y = x / math.sqrt(2)
        q = math.exp(0.5) * math.sqrt(2 / math.pi) * (1 - 2 * y * dawsn(y))
        return (x * math.exp(0.5 - x * x / 2)) ** 2 + q * q

    peak2 = max(env2(x) for x in np.linspace(-5, 5, 100_001))
    tau_eff = quad(env2, -np.inf, np.inf, limit=500)[0] / peak2 * tau
    oracle = math.sqrt(2 * U * thz.VACUUM_IMPEDANCE / (beam.area * tau_eff)) / math.sqrt(peak2)

    got = float(np.abs(thz.calibrate_trace(trace, U, beam).samples).max())
    got4 = float(np.abs(thz.calibrate_trace(trace, 4 * U, beam).samples).max())
    report(peak_V_per_m=got, oracle=oracle, rel_err=abs(got / oracle - 1))
    assert got == pytest.approx(oracle, rel=1e-3)
    assert got4 == 2 * got


@pytest.mark.criterion(11, "knife-edge sigma recovery")
def test_knife_edge(report):
    t = time.perf_counter()
    rng = np.random.default_rng(1111)
    sigma = 200e-6
    x = np.linspace(-3 * sigma, 3 * sigma, 81)
    clean = thz.knife_edge_model(x, 1.0, 0.0, sigma)
    fits = []
    for _ in range(100):
        p = np.clip(clean + 0.01 * rng.standard_normal(x.size), 0, None)
        fits.append(thz.knife_edge_fit(thz.KnifeEdgeScan(x, p)).sigma)
    mean = float(np.mean(fits))
    dt = time.perf_counter() - t
    report(sigma_mean=mean, rel_err=abs(mean / sigma - 1), seconds=dt)
    assert mean == pytest.approx(sigma, rel=0.01)
    assert dt < 10


@pytest.mark.criterion(12, "spectrum peak at 1.5 THz")
def test_spectrum_peak(report):
    f_peak = 1.5e12
    tau = 1 / (2 * math.pi * f_peak)
    f, p = thz.power_spectrum(thz.synth_single_cycle(f_peak, tau / 20, 400 * tau))
    df = f[1] - f[0]
    peak = float(f[np.argmax(p)])
    report(peak_Hz=peak, bin_Hz=df)
    assert abs(peak - f_peak) <= df
