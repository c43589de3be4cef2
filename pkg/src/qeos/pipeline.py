"""Configuration and the simulate -> window -> estimate pipeline used by the CLI."""

from __future__ import annotations

import copy
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fock, lockin, tags, thz

DEFAULTS = {
    "seed": 0,
    "acquisition": {"rep_rate": 80_000_000, "f_mod": 10_000, "num_periods": 10_000, "dead_time": 0.0, "dark_rate": 0.0},
    "probe": {"kind": "squeezed-vacuum", "mean_photons": 0.05, "efficiency": 0.65},
    "crystal": {"r41": 1.5e-12, "n_index": 3.38, "L": 250e-6, "probe_wavelength": 1.56e-6},
    "waveform": {"f_peak": 1.5e12, "peak_phase": 7.5e-4, "amplitude": None, "csv": None},
    "delays": {"start": -0.5e-12, "stop": 0.5e-12, "step": 0.025e-12},
    "alpha": "auto",
    "alpha_convention": "divide",
    "n_max": None,
    "workers": 1,
}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ScanConfig:
    acquisition: tags.AcquisitionConfig
    probe: fock.ProbeSpec
    crystal: thz.CrystalSpec
    waveform: dict
    delays: dict
    alpha: float | str = "auto"
    alpha_convention: str = lockin.DIVIDE
    n_max: int | None = None
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "ScanConfig":
        d = merge(DEFAULTS, data or {})
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise tags.ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            acq = tags.AcquisitionConfig(rng_seed=int(d["seed"]), **d["acquisition"])
            probe = fock.ProbeSpec(**d["probe"])
            crystal = thz.CrystalSpec(**d["crystal"])
        except (TypeError, ValueError) as exc:
            raise tags.ConfigError(str(exc)) from exc
        if not d["delays"]["step"] > 0:
            raise tags.ConfigError("delay step must be positive")
        if d["alpha"] != "auto" and not (isinstance(d["alpha"], (int, float)) and d["alpha"] > 0):
            raise tags.ConfigError("alpha must be 'auto' or a positive number")
        if d["alpha_convention"] not in (lockin.DIVIDE, lockin.MULTIPLY):
            raise tags.ConfigError("alpha_convention must be 'divide' or 'multiply'")
        return cls(acq, probe, crystal, d["waveform"], d["delays"], d["alpha"], d["alpha_convention"], d["n_max"], int(d["workers"]), d)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ScanConfig":
        data = {}
        if path:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        return cls.from_dict(merge(data, overrides or {}))

    def resolved(self) -> dict:
        """Full configuration after defaults, as plain JSON data."""
        out = copy.deepcopy(self.raw)
        out["probe"]["kind"] = self.probe.kind.value
        return out

    def delay_grid(self) -> np.ndarray:
        d = self.delays
        n = int(math.floor((d["stop"] - d["start"]) / d["step"] + 1e-9)) + 1
        return d["start"] + d["step"] * np.arange(n)

    def resolve_alpha(self) -> float:
        if self.alpha == "auto":
            return fock.responsivity(self.probe, self.n_max)
        return float(self.alpha)

    def injected_field(self, delays: np.ndarray) -> np.ndarray:
        """THz field (V/m) seen by the probe at each delay."""
        w = self.waveform
        if w.get("csv"):
            trace = thz.read_waveform_csv(w["csv"])
            return np.interp(delays, trace.times, trace.samples, left=0.0, right=0.0)
        amp = w.get("amplitude")
        if amp is None:
            amp = thz.field_from_phase(w.get("peak_phase", 0.0), self.crystal)
        return thz.single_cycle(delays, w["f_peak"], amp)


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0x5CA9, index)).generate_state(1, np.uint64)[0])


def analyze_records(records, acq: tags.AcquisitionConfig, alpha: float, convention: str = lockin.DIVIDE):
    table = tags.window_counts(records, acq)
    samples = lockin.window_phases(table)
    return lockin.estimate_phase(samples, alpha, convention), table, samples


def noise_prediction(probe: fock.ProbeSpec, K: int, M: int, n_max=None) -> dict:
    st = fock.probe_click_stats(probe, 0.0, n_max)
    return {
        "se_raw": lockin.predicted_se(K, M, st.alpha, st.sigma_diff, st.c_plus),
        "se_corrected": lockin.predicted_se_corrected(K, M, st.alpha, st.sigma_diff, st.c_plus),
        "alpha": st.alpha,
        "sigma_minus": st.sigma_diff,
        "n_plus": st.c_plus,
    }


class ScanPointError(RuntimeError):
    def __init__(self, delay: float, cause: Exception):
        super().__init__(f"scan point at delay {delay:.6g} s failed: {cause}")
        self.delay = delay
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.delay, self.cause))


def _run_point(args):
    delay, acq, probe, phase, alpha, convention = args
    try:
        records = tags.simulate_stream(acq, probe, phase)
        est, _, _ = analyze_records(records, acq, alpha, convention)
    except ValueError as exc:
        raise ScanPointError(delay, exc) from exc
    return est


@dataclass
class ScanResult:
    delays: np.ndarray
    injected_phase: np.ndarray
    estimates: list
    trace: list
    field: np.ndarray
    spectrum: tuple

    @property
    def phi(self) -> np.ndarray:
        return np.array([r.phi for r in self.trace])

    @property
    def se(self) -> np.ndarray:
        return np.array([r.se for r in self.trace])

    def correlation(self) -> float:
        if not np.any(self.injected_phase):
            return float("nan")
        return float(np.corrcoef(self.phi, self.injected_phase)[0, 1])

    def peak_snr(self) -> float:
        """Measured phase at the injected extremum over the mean standard error."""
        i = int(np.argmax(np.abs(self.injected_phase)))
        return float(abs(self.phi[i]) / self.se.mean())

    def summary(self) -> dict:
        return {
            "points": int(self.delays.size),
            "correlation": self.correlation(),
            "peak_snr": self.peak_snr(),
            "mean_se_rad": float(self.se.mean()),
            "peak_injected_phase_rad": float(np.abs(self.injected_phase).max()),
        }


def run_scan(cfg: ScanConfig) -> ScanResult:
    delays = cfg.delay_grid()
    phases = thz.phase_from_field(cfg.injected_field(delays), cfg.crystal)
    alpha = cfg.resolve_alpha()
    jobs = [
        (
            float(delays[i]),
            tags.AcquisitionConfig(**{**asdict(cfg.acquisition), "rng_seed": derived_seed(cfg.acquisition.rng_seed, i)}),
            cfg.probe,
            float(ph),
            alpha,
            cfg.alpha_convention,
        )
        for i, ph in enumerate(phases)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            estimates = list(pool.map(_run_point, jobs))
    else:
        estimates = [_run_point(j) for j in jobs]
    trace = lockin.trace_from_scan(zip(delays.tolist(), estimates))
    field_vm = thz.field_from_phase(np.array([r.phi for r in trace]), cfg.crystal)
    step = cfg.delays["step"]
    spectrum = thz.power_spectrum(thz.ThzWaveform(field_vm, step, float(delays[0]), thz.Units.V_PER_M)) if delays.size >= 8 else (np.zeros(0), np.zeros(0))
    return ScanResult(delays, np.asarray(phases), estimates, trace, field_vm, spectrum)
