"""Photon-number statistics of the probe through loss, polarimetric splitting
and on/off detection.

Everything here is exact enumeration in a truncated Fock basis. A single-mode
probe is described by its photon-number distribution only; the polarimeter
routes each photon independently to port 1 with probability
``p = (1 + sin(dphi)) / 2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom, poisson

DEFAULT_N_MAX = 16
TRUNCATION_TOL = 1e-9
# tail terms inspected beyond n_max when measuring the truncation deficit
_TAIL_LOOKAHEAD = 256


class FockError(ValueError):
    """Invalid input to an enumeration routine."""


class TruncationError(FockError):
    pass


class UndefinedResponsivityError(FockError):
    """Raised when the probe never produces a click (vacuum)."""


class ProbeKind(str, enum.Enum):
    SQUEEZED_VACUUM = "squeezed-vacuum"
    COHERENT = "coherent"


class DetectionMode(str, enum.Enum):
    ON_OFF = "on-off"
    NUMBER_RESOLVED = "number-resolved"


@dataclass(frozen=True)
class ProbeSpec:
    """Probe state and lumped transmission.

    ``mean_photons`` is n_sv for squeezed vacuum and |amplitude|^2 for a
    coherent state; ``efficiency`` folds channel losses and detector
    efficiency into one number.
    """

    kind: ProbeKind = ProbeKind.SQUEEZED_VACUUM
    mean_photons: float = 0.05
    efficiency: float = 0.65

    def __post_init__(self):
        object.__setattr__(self, "kind", ProbeKind(self.kind))
        if not math.isfinite(self.mean_photons) or self.mean_photons < 0:
            raise FockError(f"mean_photons must be >= 0, got {self.mean_photons}")
        if not 0.0 <= self.efficiency <= 1.0:
            raise FockError(f"efficiency must lie in [0, 1], got {self.efficiency}")


@dataclass(frozen=True)
class PhotonNumberDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise FockError("probs must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise FockError("probabilities must be finite and non-negative")
        if p.sum() > 1 + 1e-12:
            raise FockError(f"probabilities sum to {p.sum()!r} > 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def __getitem__(self, n: int) -> float:
        return float(self.probs[n]) if 0 <= n < self.probs.size else 0.0


@dataclass(frozen=True)
class SplitJointDistribution:
    """Joint photon numbers ``probs[n1, n2]`` at the two polarimeter ports.

    Entries with ``n1 + n2 > n_max`` are identically zero.
    """

    probs: np.ndarray
    split_prob: float

    @property
    def n_max(self) -> int:
        return self.probs.shape[0] - 1

    def total_marginal(self) -> np.ndarray:
        """Distribution of ``n1 + n2`` (anti-diagonal sums)."""
        n = self.probs.shape[0]
        out = np.zeros(2 * n - 1)
        i, j = np.indices(self.probs.shape)
        np.add.at(out, (i + j).ravel(), self.probs.ravel())
        return out[:n]


@dataclass
class ClickStats:
    c1: float
    c2: float
    mean_diff: float
    sigma_diff: float
    alpha: float | None = field(default=None)

    @property
    def c_plus(self) -> float:
        return self.c1 + self.c2


def _log_pmf(spec: ProbeSpec, n: np.ndarray) -> np.ndarray:
    nbar = spec.mean_photons
    if spec.kind is ProbeKind.COHERENT:
        return poisson.logpmf(n, nbar)
    # P(2m) = C(2m, m) / 4^m * tanh(r)^(2m) / cosh(r), sinh(r)^2 = nbar
    out = np.full(n.shape, -np.inf)
    even = n % 2 == 0
    m = n[even] // 2
    log_t2 = math.log(nbar / (1 + nbar))
    out[even] = (
        gammaln(2 * m + 1)
        - 2 * gammaln(m + 1)
        - m * math.log(4.0)
        + m * log_t2
        - 0.5 * math.log1p(nbar)
    )
    return out


def truncation_deficit(spec: ProbeSpec, n_max: int) -> float:
    """Probability mass above ``n_max``, summed from the tail side."""
    if spec.mean_photons == 0:
        return 0.0
    n = np.arange(n_max + 1, n_max + 1 + _TAIL_LOOKAHEAD)
    tail = np.exp(_log_pmf(spec, n))
    return float(tail[::-1].sum())


def auto_n_max(spec: ProbeSpec, tol: float = TRUNCATION_TOL, start: int = DEFAULT_N_MAX) -> int:
    n_max = start
    while truncation_deficit(spec, n_max) >= tol:
        n_max *= 2
        if n_max > 1 << 14:
            raise TruncationError(f"cannot reach truncation deficit {tol} for {spec}")
    return n_max


def probe_distribution(spec: ProbeSpec, n_max: int | None = None) -> PhotonNumberDistribution:
    """Photon-number distribution of the probe before any loss.

    With ``n_max=None`` the cutoff starts at 16 and doubles until less than
    1e-9 of the mass is discarded; an explicit ``n_max`` that is too small
    raises :class:`TruncationError`.
    """
    if n_max is None:
        n_max = auto_n_max(spec)
    if n_max < 0:
        raise FockError("n_max must be >= 0")
    deficit = truncation_deficit(spec, n_max)
    if deficit >= TRUNCATION_TOL:
        raise TruncationError(
            f"n_max={n_max} discards {deficit:.3g} of the probability (limit {TRUNCATION_TOL})"
        )
    n = np.arange(n_max + 1)
    if spec.mean_photons == 0:
        probs = (n == 0).astype(float)
    else:
        probs = np.exp(_log_pmf(spec, n))
    return PhotonNumberDistribution(probs)


def loss_matrix(n_max: int, eta: float) -> np.ndarray:
    """``L[k, n] = C(n, k) eta^k (1 - eta)^(n - k)``."""
    if not 0.0 <= eta <= 1.0:
        raise FockError(f"transmission must lie in [0, 1], got {eta}")
    n = np.arange(n_max + 1)
    # log form: binom.pmf overflows internally for subnormal eta
    return np.exp(binom.logpmf(n[:, None], n[None, :], eta))


def apply_loss(dist: PhotonNumberDistribution, eta: float) -> PhotonNumberDistribution:
    """Binomial (beam-splitter) loss channel with transmission ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise FockError(f"transmission must lie in [0, 1], got {eta}")
    if eta == 1.0:
        return dist
    out = loss_matrix(dist.n_max, eta) @ dist.probs
    # renormalize to the input total; the channel is trace preserving
    s = out.sum()
    if s > 0:
        out *= dist.total / s
    return PhotonNumberDistribution(out)


def routing_probability(dphi: float) -> float:
    return 0.5 * (1.0 + math.sin(dphi))


def polarimetric_split(dist: PhotonNumberDistribution, dphi: float) -> SplitJointDistribution:
    if not math.isfinite(dphi):
        raise FockError("phase must be finite")
    p = routing_probability(dphi)
    size = dist.n_max + 1
    n1, n2 = np.indices((size, size))
    total = n1 + n2
    ok = total < size
    joint = np.zeros((size, size))
    joint[ok] = dist.probs[total[ok]] * binom.pmf(n1[ok], total[ok], p)
    return SplitJointDistribution(joint, p)


def click_stats(joint: SplitJointDistribution) -> ClickStats:
    """On/off statistics: detector i clicks when ``n_i >= 1``."""
    P = joint.probs
    c1 = float(P[1:, :].sum())
    c2 = float(P[:, 1:].sum())
    plus = float(P[1:, 0].sum())
    minus = float(P[0, 1:].sum())
    mean = plus - minus
    var = max(plus + minus - mean * mean, 0.0)
    return ClickStats(c1=c1, c2=c2, mean_diff=mean, sigma_diff=math.sqrt(var))


def number_resolved_stats(joint: SplitJointDistribution) -> tuple[float, float, float]:
    """Mean and variance of ``n1 - n2`` and mean of ``n1 + n2``."""
    P = joint.probs
    n1, n2 = np.indices(P.shape)
    d = n1 - n2
    mean = float((P * d).sum())
    var = float((P * d * d).sum()) - mean * mean
    n_plus = float((P * (n1 + n2)).sum())
    return mean, max(var, 0.0), n_plus


def detected_distribution(spec: ProbeSpec, n_max: int | None = None) -> PhotonNumberDistribution:
    return apply_loss(probe_distribution(spec, n_max), spec.efficiency)


def click_slope(dist: PhotonNumberDistribution, dphi: float = 0.0) -> float:
    """Analytic ``d<click1 - click2>/d(dphi)`` for a post-loss distribution.

    P(only port 1 | k) = p^k and P(only port 2 | k) = (1 - p)^k, so the slope
    is sum_k P(k) k [p^(k-1) + (1-p)^(k-1)] dp/dphi with dp/dphi = cos(dphi)/2.
    """
    p = routing_probability(dphi)
    k = np.arange(1, dist.n_max + 1)
    dk = k * (p ** (k - 1) + (1 - p) ** (k - 1))
    return float(np.dot(dist.probs[1:], dk) * 0.5 * math.cos(dphi))


def responsivity(spec: ProbeSpec, n_max: int | None = None) -> float:
    """Click-signal slope at balance divided by the click sum ``c+``."""
    det = detected_distribution(spec, n_max)
    stats = click_stats(polarimetric_split(det, 0.0))
    if stats.c_plus <= 0:
        raise UndefinedResponsivityError("probe produces no clicks; responsivity undefined")
    return click_slope(det, 0.0) / stats.c_plus


def probe_click_stats(spec: ProbeSpec, dphi: float = 0.0, n_max: int | None = None) -> ClickStats:
    """Convenience: click statistics of ``spec`` at phase ``dphi`` with alpha filled."""
    det = detected_distribution(spec, n_max)
    stats = click_stats(polarimetric_split(det, dphi))
    if stats.c_plus > 0:
        stats.alpha = responsivity(spec, n_max)
    return stats


def joint_click_pmf(spec: ProbeSpec, dphi: float, n_max: int | None = None) -> np.ndarray:
    """Per-pulse probabilities of (no click, only D1, only D2, both)."""
    det = detected_distribution(spec, n_max)
    p = routing_probability(dphi)
    k = np.arange(det.n_max + 1)
    q = det.probs
    only1 = float(np.dot(q[1:], p ** k[1:]))
    only2 = float(np.dot(q[1:], (1 - p) ** k[1:]))
    none = float(q[0])
    both = max(1.0 - none - only1 - only2, 0.0)
    return np.array([none, only1, only2, both])


def per_pulse_sensitivity(
    spec: ProbeSpec,
    mode: DetectionMode | str = DetectionMode.ON_OFF,
    n_max: int | None = None,
) -> float:
    """Phase uncertainty per probe pulse, ``sigma(signal) / |d<signal>/dphi|`` at balance."""
    mode = DetectionMode(mode)
    if spec.mean_photons == 0 or spec.efficiency == 0:
        raise UndefinedResponsivityError("vacuum probe has no phase sensitivity")
    if n_max is None:
        # the number-resolved comparison needs the truncated means to agree to ~1e-15
        n_max = auto_n_max(spec, tol=1e-17)
    det = detected_distribution(spec, n_max)
    joint = polarimetric_split(det, 0.0)
    if mode is DetectionMode.ON_OFF:
        sigma = click_stats(joint).sigma_diff
        slope = click_slope(det, 0.0)
    else:
        _, var, _ = number_resolved_stats(joint)
        sigma = math.sqrt(var)
        slope = det.mean
    return sigma / abs(slope)
