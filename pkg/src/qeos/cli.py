"""Command line front end.

Exit codes: 0 success, 2 configuration error, 3 data or parse error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fock, lockin, tags, thz
from .pipeline import ScanConfig, ScanPointError, analyze_records, noise_prediction, run_scan

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


def _emit(obj, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _overrides(args) -> dict:
    o: dict = {}

    def put(path, value):
        if value is None:
            return
        d = o
        for key in path[:-1]:
            d = d.setdefault(key, {})
        d[path[-1]] = value

    put(("seed",), getattr(args, "seed", None))
    put(("acquisition", "num_periods"), getattr(args, "periods", None))
    put(("acquisition", "dead_time"), getattr(args, "dead_time", None))
    put(("acquisition", "dark_rate"), getattr(args, "dark_rate", None))
    put(("probe", "kind"), getattr(args, "kind", None))
    put(("probe", "mean_photons"), getattr(args, "mean_photons", None))
    put(("probe", "efficiency"), getattr(args, "eta", None))
    put(("n_max",), getattr(args, "n_max", None))
    put(("workers",), getattr(args, "workers", None))
    put(("alpha_convention",), getattr(args, "alpha_convention", None))
    alpha = getattr(args, "alpha", None)
    if alpha is not None:
        put(("alpha",), alpha if alpha == "auto" else _positive_float(alpha))
    put(("waveform", "peak_phase"), getattr(args, "peak_phase", None))
    put(("waveform", "csv"), getattr(args, "waveform_csv", None))
    return o


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise CliError(EXIT_CONFIG, "config", f"not a number: {text!r}") from None
    if not v > 0:
        raise CliError(EXIT_CONFIG, "config", f"must be positive: {text!r}")
    return v


def _config(args) -> ScanConfig:
    try:
        return ScanConfig.load(getattr(args, "config", None), _overrides(args))
    except (tags.ConfigError, fock.FockError, thz.ThzError) as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"cannot read config: {exc}") from exc


def cmd_stats(args) -> dict:
    cfg = _config(args)
    probe = cfg.probe
    try:
        st = fock.probe_click_stats(probe, 0.0, cfg.n_max)
        if st.alpha is None:
            raise fock.UndefinedResponsivityError("probe produces no clicks; responsivity undefined")
        u_onoff = fock.per_pulse_sensitivity(probe, fock.DetectionMode.ON_OFF)
        u_res = fock.per_pulse_sensitivity(probe, fock.DetectionMode.NUMBER_RESOLVED)
    except fock.UndefinedResponsivityError as exc:
        raise CliError(EXIT_NUMERIC, "undefined-responsivity", str(exc)) from exc
    except fock.TruncationError as exc:
        raise CliError(EXIT_NUMERIC, "truncation", str(exc)) from exc
    return {
        "probe": {"kind": probe.kind.value, "mean_photons": probe.mean_photons, "efficiency": probe.efficiency},
        "c1": st.c1,
        "c2": st.c2,
        "c_plus": st.c_plus,
        "sigma_minus": st.sigma_diff,
        "alpha": st.alpha,
        "u_onoff": u_onoff,
        "u_resolved": u_res,
        "seed": cfg.acquisition.rng_seed,
        "config": cfg.resolved(),
    }


def cmd_simulate(args) -> dict:
    cfg = _config(args)
    if args.delay is not None:
        phase = float(thz.phase_from_field(cfg.injected_field(np.array([args.delay]))[0], cfg.crystal))
    else:
        phase = args.phase
    try:
        records = tags.simulate_stream(cfg.acquisition, cfg.probe, phase, workers=cfg.workers)
    except tags.ConfigError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from exc
    header = tags.stream_header(cfg.acquisition, records)
    try:
        nbytes = tags.write_stream(args.output, header, records)
    except OSError as exc:
        raise CliError(EXIT_DATA, "io", f"cannot write {args.output}: {exc}") from exc
    summary = tags.stream_summary(cfg.acquisition, records)
    duration = cfg.acquisition.num_pulses / cfg.acquisition.rep_rate
    summary.update(
        {
            "output": str(args.output),
            "bytes": nbytes,
            "phase_on_rad": phase,
            "rate_d1_per_s": summary["clicks_d1"] / duration,
            "rate_d2_per_s": summary["clicks_d2"] / duration,
            "seed": cfg.acquisition.rng_seed,
            "config": cfg.resolved(),
        }
    )
    return summary


def cmd_analyze(args) -> dict:
    cfg = _config(args)
    try:
        header, chunks = tags.parse_stream_chunks(args.stream)
    except OSError as exc:
        raise CliError(EXIT_DATA, "io", f"cannot read {args.stream}: {exc}") from exc
    try:
        acq = tags.AcquisitionConfig(rep_rate=header.rep_rate, f_mod=header.f_mod)
    except tags.ConfigError as exc:
        raise CliError(EXIT_DATA, "header", str(exc)) from exc
    try:
        alpha = cfg.resolve_alpha()
    except fock.UndefinedResponsivityError as exc:
        raise CliError(EXIT_NUMERIC, "undefined-responsivity", str(exc)) from exc
    try:
        est, table, samples = analyze_records(chunks, acq, alpha, cfg.alpha_convention)
    except lockin.EstimationError as exc:
        raise CliError(EXIT_DATA, "too-few-windows", str(exc)) from exc
    _emit({"diagnostics": table.diagnostics()}, sys.stderr)
    if args.samples_csv:
        lockin.write_samples_csv(args.samples_csv, samples)
    pred = noise_prediction(cfg.probe, est.K_used, acq.pulses_per_half, cfg.n_max)
    return {
        "estimate": est.to_dict(),
        "predicted_se_raw": pred["se_raw"],
        "predicted_se": pred["se_corrected"] if est.convention == lockin.DIVIDE else pred["se_raw"],
        "M": acq.pulses_per_half,
        "diagnostics": table.diagnostics(),
        "seed": cfg.acquisition.rng_seed,
        "config": cfg.resolved(),
    }


def cmd_scan(args) -> dict:
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_scan(cfg)
    except ScanPointError as exc:
        raise CliError(EXIT_DATA, "scan-point", str(exc), delay_s=exc.delay) from exc
    except fock.UndefinedResponsivityError as exc:
        raise CliError(EXIT_NUMERIC, "undefined-responsivity", str(exc)) from exc
    except thz.ThzError as exc:
        raise CliError(EXIT_DATA, "waveform", str(exc)) from exc
    lockin.write_trace_csv(out / "trace.csv", result.trace)
    thz.write_xy_csv(out / "field.csv", ("t_s", "E_V_per_m"), result.delays, result.field)
    f, p = result.spectrum
    thz.write_xy_csv(out / "spectrum.csv", ("f_Hz", "power"), f, p)
    summary = result.summary()
    summary.update(
        {
            "trace_csv": str(out / "trace.csv"),
            "field_csv": str(out / "field.csv"),
            "spectrum_csv": str(out / "spectrum.csv"),
            "seed": cfg.acquisition.rng_seed,
            "config": cfg.resolved(),
        }
    )
    return summary


def _read_trace(path) -> thz.ThzWaveform:
    try:
        return thz.read_waveform_csv(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, "io", f"cannot read {path}: {exc}") from exc
    except thz.ThzError as exc:
        raise CliError(EXIT_DATA, "trace", str(exc)) from exc


def cmd_calibrate(args) -> dict:
    trace = _read_trace(args.trace)
    try:
        beam = thz.BeamProfile(args.sigma_x, args.sigma_y if args.sigma_y is not None else args.sigma_x)
        if not args.energy > 0:
            raise thz.ThzError("pulse energy must be positive")
    except thz.ThzError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from exc
    try:
        report = thz.calibration_report(trace, args.energy, beam)
        cal = thz.calibrate_trace(trace, args.energy, beam)
    except thz.ThzError as exc:
        raise CliError(EXIT_DATA, "trace", str(exc)) from exc
    if args.output:
        thz.write_xy_csv(args.output, ("t_s", "E_V_per_m"), cal.times, cal.samples)
        report["output"] = str(args.output)
    return report


def cmd_spectrum(args) -> dict:
    trace = _read_trace(args.trace)
    f, p = thz.power_spectrum(trace)
    thz.write_xy_csv(args.output, ("f_Hz", "power"), f, p)
    return {"output": str(args.output), "bins": int(f.size), "df_Hz": float(f[1] - f[0]), "peak_Hz": float(f[np.argmax(p)])}


def _add_common(p: argparse.ArgumentParser, probe=True, acq=True):
    p.add_argument("--config", help="JSON configuration file (preset defaults)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-max", type=int, dest="n_max")
    if probe:
        p.add_argument("--kind", choices=[k.value for k in fock.ProbeKind])
        p.add_argument("--mean-photons", type=float, dest="mean_photons")
        p.add_argument("--eta", type=float)
    if acq:
        p.add_argument("--periods", type=int, help="modulation periods K")
        p.add_argument("--dead-time", type=float, dest="dead_time")
        p.add_argument("--dark-rate", type=float, dest="dark_rate")
        p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qeos", description="Single-photon electro-optic sampling toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="probe click statistics and sensitivities")
    _add_common(p, acq=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("simulate", help="write a simulated .qttg stream")
    _add_common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--phase", type=float, default=0.0, help="phase on ON halves (rad)")
    g.add_argument("--delay", type=float, help="probe delay (s) on the configured waveform")
    p.add_argument("--peak-phase", type=float, dest="peak_phase")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="lock-in estimate from a .qttg stream")
    _add_common(p, acq=False)
    p.add_argument("stream")
    p.add_argument("--alpha", help="'auto' (enumerate from the probe) or a number")
    p.add_argument("--alpha-convention", choices=[lockin.DIVIDE, lockin.MULTIPLY], dest="alpha_convention")
    p.add_argument("--samples-csv", dest="samples_csv", help="write per-window phases here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scan", help="simulated delay scan of a THz waveform")
    _add_common(p)
    p.add_argument("--peak-phase", type=float, dest="peak_phase")
    p.add_argument("--waveform-csv", dest="waveform_csv")
    p.add_argument("--alpha")
    p.add_argument("--alpha-convention", choices=[lockin.DIVIDE, lockin.MULTIPLY], dest="alpha_convention")
    p.add_argument("--out-dir", default=".", dest="out_dir")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("calibrate", help="calibrate a trace to V/m")
    p.add_argument("trace")
    p.add_argument("--energy", type=float, default=1.25e-15, help="THz pulse energy (J)")
    p.add_argument("--sigma-x", type=float, default=200e-6, dest="sigma_x")
    p.add_argument("--sigma-y", type=float, dest="sigma_y")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("spectrum", help="power spectrum of a trace")
    p.add_argument("trace")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_spectrum)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except CliError as exc:
        _emit({"error": {"kind": exc.kind, "message": str(exc), **exc.extra}})
        return exc.code
    except tags.StreamError as exc:
        _emit({"error": {"kind": exc.kind, "offset": exc.offset, "message": str(exc)}})
        return EXIT_DATA
    except thz.FitError as exc:
        _emit({"error": {"kind": "numerical", "message": str(exc)}})
        return EXIT_NUMERIC
    _emit(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
