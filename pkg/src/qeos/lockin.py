"""Digital lock-in phase estimation from per-period click totals."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .tags import WINDOW_DTYPE, WindowCounts, WindowTable

PHASE_DTYPE = np.dtype([("index", "<i8"), ("value", "<f8"), ("valid", "?")])

DIVIDE = "divide"
MULTIPLY = "multiply"


class EstimationError(ValueError):
    pass


class PhaseSample(NamedTuple):
    index: int
    value: float
    valid: bool


@dataclass(frozen=True)
class PhaseEstimate:
    phi_raw: float
    phi_corrected: float
    se: float
    K_used: int
    alpha: float
    K_total: int = 0
    convention: str = DIVIDE

    @property
    def se_raw(self) -> float:
        return self.se * self.alpha if self.convention == DIVIDE else self.se / self.alpha

    def to_dict(self) -> dict:
        return asdict(self)


def _half_ratio(n1, n2):
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    tot = n1 + n2
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, (n1 - n2) / np.where(tot > 0, tot, 1), np.nan), tot > 0


def window_phase(w: WindowCounts) -> PhaseSample:
    """Recorded phase of one period: ON half ratio minus OFF half ratio.

    Each half contributes ``(N1 - N2) / (N1 + N2)``. A half without clicks
    makes the sample invalid.
    """
    on, ok_on = _half_ratio(w.n1_on, w.n2_on)
    off, ok_off = _half_ratio(w.n1_off, w.n2_off)
    valid = bool(ok_on and ok_off)
    return PhaseSample(int(w.index), float(on - off) if valid else float("nan"), valid)


def window_phases(windows: WindowTable | np.ndarray) -> np.ndarray:
    """Vectorized :func:`window_phase` over a whole table (``PHASE_DTYPE``)."""
    counts = windows.counts if isinstance(windows, WindowTable) else np.asarray(windows, dtype=WINDOW_DTYPE)
    on, ok_on = _half_ratio(counts["n1_on"], counts["n2_on"])
    off, ok_off = _half_ratio(counts["n1_off"], counts["n2_off"])
    out = np.zeros(counts.size, dtype=PHASE_DTYPE)
    out["index"] = counts["index"]
    out["valid"] = ok_on & ok_off
    out["value"] = np.where(out["valid"], on - off, np.nan)
    return out


def _as_samples(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray) and samples.dtype == PHASE_DTYPE:
        return samples
    rows = list(samples)
    out = np.zeros(len(rows), dtype=PHASE_DTYPE)
    for i, s in enumerate(rows):
        out[i] = (s.index, s.value, s.valid)
    return out


def estimate_phase(samples: Sequence[PhaseSample] | np.ndarray, alpha: float, convention: str = DIVIDE) -> PhaseEstimate:
    """Mean recorded phase over valid windows and its standard error.

    With the default ``"divide"`` convention the corrected phase is the raw
    mean divided by ``alpha`` (the click responsivity), which makes the
    estimator unbiased to first order. ``"multiply"`` applies alpha as a
    factor instead.
    """
    if not alpha > 0:
        raise EstimationError(f"alpha must be positive, got {alpha}")
    if convention not in (DIVIDE, MULTIPLY):
        raise EstimationError(f"unknown alpha convention {convention!r}")
    arr = _as_samples(samples)
    vals = arr["value"][arr["valid"]]
    if vals.size < 2:
        raise EstimationError(f"need at least 2 valid windows, got {vals.size}")
    raw = float(vals.mean())
    se_raw = float(vals.std(ddof=1) / math.sqrt(vals.size))
    factor = 1.0 / alpha if convention == DIVIDE else alpha
    return PhaseEstimate(
        phi_raw=raw,
        phi_corrected=raw * factor,
        se=se_raw * factor,
        K_used=int(vals.size),
        alpha=float(alpha),
        K_total=int(arr.size),
        convention=convention,
    )


def predicted_se(K: float, M: float, alpha: float, sigma_minus: float, n_plus: float) -> float:
    """``sqrt(2 / (K M)) * alpha * sigma_minus / n_plus``."""
    args = dict(K=K, M=M, alpha=alpha, sigma_minus=sigma_minus, n_plus=n_plus)
    bad = [k for k, v in args.items() if not v > 0]
    if bad:
        raise EstimationError(f"inputs must be positive: {', '.join(bad)}")
    return math.sqrt(2.0 / (K * M)) * alpha * sigma_minus / n_plus


def predicted_se_corrected(K: float, M: float, alpha: float, sigma_minus: float, n_plus: float) -> float:
    """Standard error of the divide-convention estimate, ``sqrt(2/(KM)) sigma / (alpha n+)``."""
    return predicted_se(K, M, alpha, sigma_minus, n_plus) / alpha**2


class TraceRow(NamedTuple):
    delay: float
    phi: float
    se: float
    K_used: int


def trace_from_scan(estimates: Iterable[tuple[float, PhaseEstimate]]) -> list[TraceRow]:
    """Delay-ordered phase trace; delays must be strictly increasing as given."""
    rows = []
    last = -math.inf
    for delay, est in estimates:
        delay = float(delay)
        if delay == last:
            raise EstimationError(f"duplicate delay {delay}")
        if delay < last:
            raise EstimationError(f"delays must increase; {delay} follows {last}")
        rows.append(TraceRow(delay, est.phi_corrected, est.se, est.K_used))
        last = delay
    return rows


def write_trace_csv(path, rows: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["delay_s", "phi_rad", "se_rad", "K_used"])
        for r in rows:
            w.writerow([repr(r.delay), repr(r.phi), repr(r.se), r.K_used])


def write_samples_csv(path, samples: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "phase_rad", "valid"])
        for s in samples:
            w.writerow([int(s["index"]), repr(float(s["value"])), int(s["valid"])])
