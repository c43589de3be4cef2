"""THz side: Pockels phase, field calibration, knife-edge fits and spectra."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfc

C_LIGHT = 299_792_458.0
VACUUM_IMPEDANCE = 376.730313668


class ThzError(ValueError):
    pass


class FitError(ThzError):
    pass


class Units(str, enum.Enum):
    ARBITRARY = "arbitrary"
    V_PER_M = "V/m"


@dataclass(frozen=True)
class CrystalSpec:
    """Electro-optic detection crystal; defaults are 250 um GaAs probed at 1560 nm."""

    r41: float = 1.5e-12
    n_index: float = 3.38
    L: float = 250e-6
    probe_wavelength: float = 1.56e-6

    def __post_init__(self):
        for name in ("r41", "n_index", "L", "probe_wavelength"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ThzError(f"{name} must be positive, got {v}")

    @property
    def omega(self) -> float:
        return 2 * math.pi * C_LIGHT / self.probe_wavelength

    @property
    def phase_per_field(self) -> float:
        """Radians of probe phase per V/m of THz field."""
        return self.r41 * self.n_index**3 * self.omega * self.L / C_LIGHT


@dataclass(frozen=True)
class BeamProfile:
    sigma_x: float = 200e-6
    sigma_y: float = 200e-6

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ThzError("beam widths must be positive")

    @property
    def area(self) -> float:
        """Integral of exp(-x^2/sx^2 - y^2/sy^2) over the plane."""
        return math.pi * self.sigma_x * self.sigma_y


@dataclass(frozen=True)
class ThzWaveform:
    samples: np.ndarray
    dt: float
    t0: float = 0.0
    units: Units = Units.ARBITRARY

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size < 8:
            raise ThzError("a waveform needs at least 8 samples")
        if not self.dt > 0:
            raise ThzError("dt must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "units", Units(self.units))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)


@dataclass(frozen=True)
class KnifeEdgeScan:
    positions: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        p = np.asarray(self.powers, dtype=float)
        if x.shape != p.shape or x.ndim != 1:
            raise ThzError("positions and powers must be 1-D and equally long")
        d = np.diff(x)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ThzError("positions must be strictly monotonic")
        if np.any(p < 0):
            raise ThzError("powers must be non-negative")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "powers", p)


@dataclass(frozen=True)
class KnifeEdgeFit:
    P0: float
    x0: float
    sigma: float
    residual_rms: float
    nfev: int


def phase_from_field(E, crystal: CrystalSpec = CrystalSpec()):
    """Signed Pockels phase ``E r41 n^3 omega L / c`` in radians."""
    return np.asarray(E, dtype=float) * crystal.phase_per_field if np.ndim(E) else float(E) * crystal.phase_per_field


def field_from_phase(phi, crystal: CrystalSpec = CrystalSpec()):
    return np.asarray(phi, dtype=float) / crystal.phase_per_field if np.ndim(phi) else float(phi) / crystal.phase_per_field


def analytic_signal(x: np.ndarray) -> np.ndarray:
    """Analytic signal by zeroing negative frequencies of a zero-padded FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    nfft = 1 << max(n - 1, 1).bit_length()
    X = np.fft.fft(x, nfft)
    h = np.zeros(nfft)
    h[0] = 1.0
    h[1 : nfft // 2] = 2.0
    h[nfft // 2] = 1.0
    return np.fft.ifft(X * h)[:n]


def effective_duration(trace: ThzWaveform) -> tuple[float, float]:
    """``(max |E_analytic|, integral |E_analytic|^2 / max^2 dt)`` by the trapezoid rule."""
    env2 = np.abs(analytic_signal(trace.samples)) ** 2
    peak2 = env2.max()
    return math.sqrt(peak2), float(np.trapezoid(env2 / peak2, dx=trace.dt))


def calibrate_trace(trace: ThzWaveform, U: float, beam: BeamProfile) -> ThzWaveform:
    """Scale an arbitrary-unit trace to V/m from pulse energy ``U`` (J) and beam profile."""
    s = trace.samples
    if not np.all(np.isfinite(s)):
        raise ThzError("trace contains non-finite samples")
    if not np.any(s):
        raise ThzError("trace is identically zero")
    if not U > 0:
        raise ThzError("pulse energy must be positive")
    env_max, tau_eff = effective_duration(trace)
    # sqrt(U) factored out so the output scales exactly with sqrt(U)
    peak = math.sqrt(U) * math.sqrt(2 * VACUUM_IMPEDANCE / (beam.area * tau_eff))
    return ThzWaveform(s / env_max * peak, trace.dt, trace.t0, Units.V_PER_M)


def calibration_report(trace: ThzWaveform, U: float, beam: BeamProfile) -> dict:
    cal = calibrate_trace(trace, U, beam)
    _, tau_eff = effective_duration(trace)
    return {
        "peak_field_V_per_cm": float(np.abs(cal.samples).max() / 100.0),
        "peak_field_V_per_m": float(np.abs(cal.samples).max()),
        "tau_eff_s": tau_eff,
        "pulse_energy_J": U,
        "sigma_x_m": beam.sigma_x,
        "sigma_y_m": beam.sigma_y,
        "vacuum_impedance_ohm": VACUUM_IMPEDANCE,
        "samples": int(trace.samples.size),
        "dt_s": trace.dt,
    }


def knife_edge_model(x, P0, x0, sigma):
    return 0.5 * P0 * erfc((np.asarray(x) - x0) / sigma)


def _knife_edge_jac(params, x, _p):
    P0, x0, sigma = params
    z = (x - x0) / sigma
    g = np.exp(-z * z) / math.sqrt(math.pi)
    return np.column_stack([0.5 * erfc(z), P0 * g / sigma, P0 * g * z / sigma])


def knife_edge_fit(scan: KnifeEdgeScan, max_nfev: int = 200) -> KnifeEdgeFit:
    """Fit ``P(x) = P0/2 erfc((x - x0)/sigma)`` by damped least squares.

    Scans whose power rises with position are mirrored before fitting.
    """
    x, p = scan.positions, scan.powers
    if x.size < 5:
        raise ThzError("need at least 5 scan points")
    if np.ptp(p) == 0:
        raise ThzError("degenerate scan: constant power")
    if x[0] > x[-1]:
        x, p = x[::-1], p[::-1]
    mirrored = np.mean(p[: max(x.size // 4, 1)]) < np.mean(p[-max(x.size // 4, 1) :])
    if mirrored:
        x = -x[::-1]
        p = p[::-1]

    P0 = float(p.max())
    frac = p / P0
    # erfc drops from 75% to 25% of P0 over 2 * 0.4769 sigma
    x75 = float(np.interp(0.75, frac[::-1], x[::-1]))
    x25 = float(np.interp(0.25, frac[::-1], x[::-1]))
    x50 = float(np.interp(0.5, frac[::-1], x[::-1]))
    sigma0 = abs(x25 - x75) / (2 * 0.476936) or np.ptp(x) / 10

    res = least_squares(
        lambda q: knife_edge_model(x, *q) - p,
        x0=[P0, x50, sigma0],
        jac=lambda q: _knife_edge_jac(q, x, p),
        method="lm",
        x_scale=[P0, sigma0, sigma0],
        max_nfev=max_nfev,
    )
    if not res.success:
        raise FitError(f"knife-edge fit did not converge: {res.message}")
    P0f, x0f, sf = res.x
    sf = abs(sf)
    if mirrored:
        x0f = -x0f
    return KnifeEdgeFit(float(P0f), float(x0f), float(sf), float(np.sqrt(np.mean(res.fun**2))), int(res.nfev))


def power_spectrum(trace: ThzWaveform) -> tuple[np.ndarray, np.ndarray]:
    """One-sided power spectral density.

    Normalized so that ``sum(power) * df == sum(samples**2) * dt``.
    """
    x = trace.samples
    n = x.size
    X = np.fft.rfft(x) * trace.dt
    f = np.fft.rfftfreq(n, trace.dt)
    power = np.abs(X) ** 2
    power[1:] *= 2
    if n % 2 == 0:
        power[-1] /= 2
    return f, power


def synth_single_cycle(
    f_peak: float, dt: float, span: float, amplitude: float = 1.0, units: Units = Units.V_PER_M
) -> ThzWaveform:
    """Gaussian-derivative pulse ``-A (t/tau) exp(1/2 - t^2 / (2 tau^2))``.

    ``tau = 1 / (2 pi f_peak)`` puts the spectral maximum at ``f_peak``.
    The grid is symmetric about ``t = 0``.
    """
    tau = 1.0 / (2 * math.pi * f_peak)
    if span < 10 * tau or dt > tau / 10:
        raise ThzError(f"grid under-resolves the pulse (need span >= {10 * tau:.3g}, dt <= {tau / 10:.3g})")
    half = int(round(span / (2 * dt)))
    t = dt * np.arange(-half, half + 1)
    return ThzWaveform(single_cycle(t, f_peak, amplitude), dt, float(t[0]), units)


def single_cycle(t, f_peak: float, amplitude: float = 1.0):
    tau = 1.0 / (2 * math.pi * f_peak)
    t = np.asarray(t, dtype=float)
    return -amplitude * (t / tau) * np.exp(0.5 - t * t / (2 * tau * tau))


def read_waveform_csv(path) -> ThzWaveform:
    """Read a two-column CSV (time in s, value) on a uniform grid."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except (ValueError, TypeError) as exc:
        raise ThzError(f"{path}: malformed CSV ({exc})") from exc
    if data.shape[0] < 8:
        raise ThzError(f"{path}: need at least 8 samples")
    t = data[:, 0]
    dt = float(np.mean(np.diff(t)))
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=0):
        raise ThzError(f"{path}: time grid is not uniform")
    units = Units.V_PER_M if "V/m" in rows[0][1] else Units.ARBITRARY
    return ThzWaveform(data[:, 1], dt, float(t[0]), units)


def write_xy_csv(path, header: tuple[str, str], x, y) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in zip(np.asarray(x).tolist(), np.asarray(y).tolist()):
            w.writerow([repr(a), repr(b)])
