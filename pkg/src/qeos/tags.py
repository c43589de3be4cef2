"""Synthetic time-tagged click streams, the ``.qttg`` container and windowing.

File layout (little endian)::

    header   magic "QEOSTTG1" (8) | version u32 | reserved u32 = 0
             | record_count u64 | rep_rate u64 | f_mod u64            40 bytes
    record   timestamp_ps u64 | channel u8 | 7 zero bytes              16 bytes

Channels are D1 = 0, D2 = 1 and MARKER = 2. A marker opens every half of the
modulation period; even marker indices open the ON half.
"""

from __future__ import annotations

import enum
import io
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np

from .fock import ProbeSpec, detected_distribution, joint_click_pmf, routing_probability

MAGIC = b"QEOSTTG1"
VERSION = 1
HEADER_SIZE = 40
RECORD_SIZE = 16
_HEADER = struct.Struct("<8sIIQQQ")

RECORD_DTYPE = np.dtype(
    {"names": ["timestamp", "channel"], "formats": ["<u8", "u1"], "offsets": [0, 8], "itemsize": RECORD_SIZE}
)
WINDOW_DTYPE = np.dtype(
    [("index", "<i8"), ("n1_on", "<i8"), ("n2_on", "<i8"), ("n1_off", "<i8"), ("n2_off", "<i8")]
)

# periods per RNG block; part of the reproducibility contract, do not change
BLOCK_PERIODS = 256
DEFAULT_CHUNK_RECORDS = 1 << 16


class Channel(enum.IntEnum):
    D1 = 0
    D2 = 1
    MARKER = 2


class TimeTagRecord(NamedTuple):
    timestamp: int
    channel: Channel


class ConfigError(ValueError):
    pass


class StreamError(ValueError):
    """Malformed ``.qttg`` data. ``offset`` is the byte position of the fault."""

    def __init__(self, kind: str, offset: int, message: str):
        super().__init__(f"{kind} at byte {offset}: {message}")
        self.kind = kind
        self.offset = offset
        self.detail = message

    def __reduce__(self):
        return (type(self), (self.kind, self.offset, self.detail))


@dataclass(frozen=True)
class AcquisitionConfig:
    rep_rate: int = 80_000_000
    f_mod: int = 10_000
    num_periods: int = 1
    dead_time: float = 0.0
    dark_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.rep_rate <= 0 or self.f_mod <= 0:
            raise ConfigError("rep_rate and f_mod must be positive")
        if self.rep_rate % (2 * self.f_mod):
            raise ConfigError(f"rep_rate {self.rep_rate} is not divisible by 2*f_mod = {2 * self.f_mod}")
        if self.num_periods < 1:
            raise ConfigError("num_periods must be >= 1")
        if self.dead_time < 0 or self.dark_rate < 0:
            raise ConfigError("dead_time and dark_rate must be >= 0")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be an unsigned 64-bit integer")
        if self.pulses_per_half * self.pulse_period_ps != self.half_period_ps:
            raise ConfigError("pulse grid does not tile the half period in whole picoseconds")

    @property
    def pulses_per_half(self) -> int:
        return self.rep_rate // (2 * self.f_mod)

    @property
    def pulse_period_ps(self) -> int:
        return round(1e12 / self.rep_rate)

    @property
    def half_period_ps(self) -> int:
        return round(1e12 / (2 * self.f_mod))

    @property
    def num_pulses(self) -> int:
        return 2 * self.pulses_per_half * self.num_periods


@dataclass(frozen=True)
class StreamHeader:
    record_count: int
    rep_rate: int
    f_mod: int
    version: int = VERSION
    magic: bytes = MAGIC

    def pack(self) -> bytes:
        return _HEADER.pack(self.magic, self.version, 0, self.record_count, self.rep_rate, self.f_mod)


class WindowCounts(NamedTuple):
    index: int
    n1_on: int
    n2_on: int
    n1_off: int
    n2_off: int


@dataclass
class WindowTable:
    """Per-period click totals plus the windowing diagnostics."""

    counts: np.ndarray  # WINDOW_DTYPE
    skipped_periods: int = 0
    irregular_markers: int = 0

    def __len__(self):
        return len(self.counts)

    def __iter__(self) -> Iterator[WindowCounts]:
        for row in self.counts:
            yield WindowCounts(*(int(v) for v in row))

    def __getitem__(self, i) -> WindowCounts:
        return WindowCounts(*(int(v) for v in self.counts[i]))

    def diagnostics(self) -> dict:
        return {
            "windows": len(self.counts),
            "skipped_periods": self.skipped_periods,
            "irregular_markers": self.irregular_markers,
        }


# ---------------------------------------------------------------------------
# simulation


@dataclass
class ClickTrain:
    """Global pulse indices that registered a click on each detector."""

    d1: np.ndarray
    d2: np.ndarray


def _block_rng(seed: int, block: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(block, stream))
    return np.random.Generator(np.random.Philox(ss))


def _bernoulli_positions(rng: np.random.Generator, prob: float, n: int) -> np.ndarray:
    """Indices in ``range(n)`` of successes of ``n`` Bernoulli(prob) trials."""
    if prob <= 0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if prob >= 1:
        return np.arange(n, dtype=np.int64)
    parts = []
    pos = -1
    while True:
        guess = int(n * prob + 6 * math.sqrt(n * prob) + 16)
        steps = np.cumsum(rng.geometric(prob, size=guess)) + pos
        parts.append(steps[steps < n])
        if steps[-1] >= n:
            break
        pos = int(steps[-1])
    return np.concatenate(parts).astype(np.int64)


class _PulseLaw:
    """Per-pulse click law: photon number after loss, then independent routing."""

    def __init__(self, probe: ProbeSpec, phase_on: float):
        det = detected_distribution(probe)
        q = det.probs
        self.any_photon = float(1.0 - q[0]) if q[0] < 1 else 0.0
        cdf = np.cumsum(q[1:])
        self.k_cdf = cdf / cdf[-1] if cdf.size and cdf[-1] > 0 else cdf
        self.p_on = routing_probability(phase_on)
        self.p_off = routing_probability(0.0)

    def sample_k(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.searchsorted(self.k_cdf, u, side="right"), len(self.k_cdf) - 1) + 1


def _simulate_block(acq: AcquisitionConfig, law: _PulseLaw, block: int) -> tuple[np.ndarray, np.ndarray]:
    M = acq.pulses_per_half
    first = block * BLOCK_PERIODS
    periods = min(BLOCK_PERIODS, acq.num_periods - first)
    n = 2 * M * periods
    base = 2 * M * first

    rng = _block_rng(acq.rng_seed, block, 0)
    pos = _bernoulli_positions(rng, law.any_photon, n)
    u = rng.random((pos.size, 2))
    k = law.sample_k(u[:, 0])
    on = (pos // M) % 2 == 0
    p = np.where(on, law.p_on, law.p_off)
    only1 = u[:, 1] < p**k
    only2 = (u[:, 1] >= 1.0 - (1.0 - p) ** k) & ~only1
    d1 = pos[~only2]
    d2 = pos[~only1]

    if acq.dark_rate > 0:
        p_dark = -math.expm1(-acq.dark_rate / acq.rep_rate)
        d1 = np.union1d(d1, _bernoulli_positions(_block_rng(acq.rng_seed, block, 1), p_dark, n))
        d2 = np.union1d(d2, _bernoulli_positions(_block_rng(acq.rng_seed, block, 2), p_dark, n))
    return d1 + base, d2 + base


def apply_dead_time(pulses: np.ndarray, dead_pulses: float) -> np.ndarray:
    """Drop clicks arriving less than ``dead_pulses`` pulse periods after a kept click."""
    if dead_pulses <= 0 or pulses.size < 2:
        return pulses
    keep = []
    i = 0
    n = pulses.size
    while i < n:
        keep.append(i)
        i = int(np.searchsorted(pulses, pulses[i] + dead_pulses, side="left"))
    return pulses[np.asarray(keep, dtype=np.int64)]


def simulate_clicks(
    acq: AcquisitionConfig, probe: ProbeSpec, phase_on: float, workers: int | None = None
) -> ClickTrain:
    """Click pulse indices for every detector, dead time applied.

    Randomness is drawn per block of periods from a Philox stream keyed on
    ``(seed, block)``, so the result does not depend on ``workers``. For a
    fixed seed, runs at different ``phase_on`` share their random numbers.
    """
    if not abs(phase_on) < math.pi / 2:
        raise ConfigError("|phase_on| must be below pi/2")
    law = _PulseLaw(probe, phase_on)
    n_blocks = -(-acq.num_periods // BLOCK_PERIODS)
    blocks = range(n_blocks)
    if workers and workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: _simulate_block(acq, law, b), blocks))
    else:
        parts = [_simulate_block(acq, law, b) for b in blocks]
    d1 = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
    d2 = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
    dead = acq.dead_time * acq.rep_rate
    return ClickTrain(apply_dead_time(d1, dead), apply_dead_time(d2, dead))


def records_from_clicks(acq: AcquisitionConfig, clicks: ClickTrain) -> np.ndarray:
    """Merge clicks with the half-period markers (including the closing one)."""
    n_markers = 2 * acq.num_periods + 1
    pp = acq.pulse_period_ps
    ts = np.concatenate(
        [
            np.arange(n_markers, dtype=np.uint64) * np.uint64(acq.half_period_ps),
            clicks.d1.astype(np.uint64) * np.uint64(pp),
            clicks.d2.astype(np.uint64) * np.uint64(pp),
        ]
    )
    ch = np.concatenate(
        [
            np.full(n_markers, Channel.MARKER, np.uint8),
            np.full(clicks.d1.size, Channel.D1, np.uint8),
            np.full(clicks.d2.size, Channel.D2, np.uint8),
        ]
    )
    # markers sort ahead of clicks sharing their timestamp
    order = np.lexsort(((ch + 1) % 3, ts))
    out = np.zeros(ts.size, dtype=RECORD_DTYPE)
    out["timestamp"] = ts[order]
    out["channel"] = ch[order]
    return out


def simulate_stream(
    acq: AcquisitionConfig, probe: ProbeSpec, phase_on: float, workers: int | None = None
) -> np.ndarray:
    """Time-tagged records (``RECORD_DTYPE``) for ``acq.num_periods`` modulation periods.

    ON halves see ``phase_on``, OFF halves zero phase.
    """
    return records_from_clicks(acq, simulate_clicks(acq, probe, phase_on, workers))


def simulate_window_counts(acq: AcquisitionConfig, probe: ProbeSpec, phase_on: float) -> WindowTable:
    """Window totals drawn directly from the per-half multinomial of click outcomes.

    Only valid without dead time and dark counts (pulses are then independent);
    otherwise the exact per-pulse path is used.
    """
    if acq.dead_time > 0 or acq.dark_rate > 0:
        return window_counts_from_clicks(acq, simulate_clicks(acq, probe, phase_on))
    if not abs(phase_on) < math.pi / 2:
        raise ConfigError("|phase_on| must be below pi/2")
    M = acq.pulses_per_half
    pmf_on = joint_click_pmf(probe, phase_on)
    pmf_off = joint_click_pmf(probe, 0.0)
    out = np.zeros(acq.num_periods, dtype=WINDOW_DTYPE)
    out["index"] = np.arange(acq.num_periods)
    for block in range(-(-acq.num_periods // BLOCK_PERIODS)):
        first = block * BLOCK_PERIODS
        sl = slice(first, min(first + BLOCK_PERIODS, acq.num_periods))
        size = sl.stop - sl.start
        rng = _block_rng(acq.rng_seed, block, 3)
        on = rng.multinomial(M, pmf_on, size=size)
        off = rng.multinomial(M, pmf_off, size=size)
        out["n1_on"][sl] = on[:, 1] + on[:, 3]
        out["n2_on"][sl] = on[:, 2] + on[:, 3]
        out["n1_off"][sl] = off[:, 1] + off[:, 3]
        out["n2_off"][sl] = off[:, 2] + off[:, 3]
    return WindowTable(out)


def window_counts_from_clicks(acq: AcquisitionConfig, clicks: ClickTrain) -> WindowTable:
    M = acq.pulses_per_half
    nh = 2 * acq.num_periods
    c1 = np.bincount(clicks.d1 // M, minlength=nh)[:nh]
    c2 = np.bincount(clicks.d2 // M, minlength=nh)[:nh]
    out = np.zeros(acq.num_periods, dtype=WINDOW_DTYPE)
    out["index"] = np.arange(acq.num_periods)
    out["n1_on"], out["n2_on"] = c1[0::2], c2[0::2]
    out["n1_off"], out["n2_off"] = c1[1::2], c2[1::2]
    return WindowTable(out)


# ---------------------------------------------------------------------------
# codec


def _as_record_array(records) -> np.ndarray:
    if isinstance(records, np.ndarray) and records.dtype == RECORD_DTYPE:
        return records
    if isinstance(records, np.ndarray) and records.dtype.names and {"timestamp", "channel"} <= set(records.dtype.names):
        out = np.zeros(records.size, dtype=RECORD_DTYPE)
        out["timestamp"] = records["timestamp"]
        out["channel"] = records["channel"]
        return out
    rows = list(records)
    out = np.zeros(len(rows), dtype=RECORD_DTYPE)
    if rows:
        out["timestamp"] = [int(r[0]) for r in rows]
        out["channel"] = [int(r[1]) for r in rows]
    return out


def _check_records(arr: np.ndarray) -> None:
    ts = arr["timestamp"]
    if ts.size > 1 and np.any(ts[1:] < ts[:-1]):
        raise ValueError("records are not sorted by timestamp")
    if arr.size and np.any(arr["channel"] > Channel.MARKER):
        raise ValueError("channel must be 0, 1 or 2")


def encode_stream(header: StreamHeader, records) -> bytes:
    arr = _as_record_array(records)
    if header.record_count != arr.size:
        raise ValueError(f"header declares {header.record_count} records, got {arr.size}")
    _check_records(arr)
    if header.magic != MAGIC or header.version != VERSION:
        raise ValueError("unsupported magic or version")
    return header.pack() + arr.tobytes()


def write_stream(path: str | os.PathLike, header: StreamHeader, records) -> int:
    """Write a stream to ``path``; returns the number of bytes written."""
    data = encode_stream(header, records)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        part = fh.read(n - len(buf))
        if not part:
            break
        buf += part
    return bytes(buf)


def _parse_header(raw: bytes) -> StreamHeader:
    if not MAGIC.startswith(raw[:8]):
        raise StreamError("bad-magic", 0, f"expected {MAGIC!r}")
    if len(raw) < HEADER_SIZE:
        raise StreamError("truncated-header", len(raw), f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    magic, version, reserved, count, rep_rate, f_mod = _HEADER.unpack(raw)
    if version != VERSION:
        raise StreamError("unsupported-version", 8, f"version {version}")
    if reserved != 0:
        raise StreamError("nonzero-padding", 12, "reserved header field must be zero")
    return StreamHeader(record_count=count, rep_rate=rep_rate, f_mod=f_mod, version=version, magic=magic)


def _validate_chunk(raw: np.ndarray, first_record: int, prev_ts: int | None) -> np.ndarray:
    """Check one chunk of raw ``(n, 16)`` bytes; returns it as records."""
    recs = raw.reshape(-1).view(RECORD_DTYPE)
    ts = recs["timestamp"]
    bad_pad = np.any(raw[:, 9:] != 0, axis=1)
    bad_ch = raw[:, 8] > Channel.MARKER
    regress = np.zeros(ts.size, dtype=bool)
    if ts.size:
        regress[1:] = ts[1:] < ts[:-1]
        if prev_ts is not None:
            regress[0] = ts[0] < prev_ts
    bad = bad_pad | bad_ch | regress
    if bad.any():
        r = int(np.argmax(bad))
        base = HEADER_SIZE + (first_record + r) * RECORD_SIZE
        if regress[r]:
            raise StreamError("timestamp-regression", base, f"record {first_record + r} goes back in time")
        if bad_ch[r]:
            raise StreamError("bad-channel", base + 8, f"channel byte {raw[r, 8]}")
        col = int(np.argmax(raw[r, 9:] != 0))
        raise StreamError("nonzero-padding", base + 9 + col, f"padding byte 0x{raw[r, 9 + col]:02x}")
    return recs


def _iter_chunks(fh: BinaryIO, header: StreamHeader, chunk_records: int, close: bool) -> Iterator[np.ndarray]:
    try:
        done = 0
        prev = None
        while done < header.record_count:
            want = min(chunk_records, header.record_count - done)
            buf = _read_exact(fh, want * RECORD_SIZE)
            full = len(buf) // RECORD_SIZE
            if full:
                raw = np.frombuffer(buf, dtype=np.uint8, count=full * RECORD_SIZE).reshape(full, RECORD_SIZE)
                recs = _validate_chunk(raw, done, prev)
                prev = int(recs["timestamp"][-1])
                yield recs
                done += full
            if full < want:
                raise StreamError(
                    "truncated-record",
                    HEADER_SIZE + done * RECORD_SIZE,
                    f"stream ends after {done} of {header.record_count} records",
                )
    finally:
        if close:
            fh.close()


def _open_source(source) -> tuple[BinaryIO, bool]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source)), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), True
    return source, False


def parse_stream_chunks(
    source, chunk_records: int = DEFAULT_CHUNK_RECORDS
) -> tuple[StreamHeader, Iterator[np.ndarray]]:
    """Header plus a lazy iterator of validated ``RECORD_DTYPE`` chunks.

    ``source`` may be bytes, a path or a binary file object. At most
    ``chunk_records`` records are held at a time and nothing past the
    declared record count is read.
    """
    fh, close = _open_source(source)
    try:
        header = _parse_header(_read_exact(fh, HEADER_SIZE))
    except BaseException:
        if close:
            fh.close()
        raise
    return header, _iter_chunks(fh, header, chunk_records, close)


def parse_stream(source, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> tuple[StreamHeader, Iterator[TimeTagRecord]]:
    header, chunks = parse_stream_chunks(source, chunk_records)

    def records():
        for chunk in chunks:
            for t, c in zip(chunk["timestamp"].tolist(), chunk["channel"].tolist()):
                yield TimeTagRecord(t, Channel(c))

    return header, records()


def read_stream(source) -> tuple[StreamHeader, np.ndarray]:
    """Parse a whole stream into one record array."""
    header, chunks = parse_stream_chunks(source)
    parts = list(chunks)
    arr = np.concatenate(parts) if parts else np.zeros(0, dtype=RECORD_DTYPE)
    return header, arr


# ---------------------------------------------------------------------------
# windowing


def window_counts(records, acq: AcquisitionConfig) -> WindowTable:
    """Click totals per full modulation period, delimited by markers.

    Period ``l`` needs markers at half indices ``2l`` (opens ON), ``2l + 1``
    (opens OFF) and ``2l + 2`` (closes it). Markers off the half-period grid
    are discarded; periods with a missing marker between the first and the
    last marker are skipped and tallied. ``records`` may be a record array, an
    iterable of record arrays (chunks) or an iterable of records.
    """
    H = np.uint64(acq.half_period_ps)
    M = acq.pulses_per_half
    marker_idx = []
    irregular = 0
    halves = {Channel.D1: [], Channel.D2: []}

    for chunk in _iter_record_chunks(records):
        ts = chunk["timestamp"]
        ch = chunk["channel"]
        mk = ts[ch == Channel.MARKER]
        on_grid = mk % H == 0
        irregular += int((~on_grid).sum())
        marker_idx.append((mk[on_grid] // H).astype(np.int64))
        for c, acc in halves.items():
            acc.append(np.unique((ts[ch == c] // H).astype(np.int64), return_counts=True))

    idx = np.unique(np.concatenate(marker_idx)) if marker_idx else np.zeros(0, np.int64)
    if idx.size == 0:
        return WindowTable(np.zeros(0, WINDOW_DTYPE), 0, irregular)
    # candidate periods lie between the first and the last marker
    l_lo = -(-int(idx[0]) // 2)
    l_hi = (int(idx[-1]) - 2) // 2
    starts = idx[(idx % 2 == 0) & (idx // 2 >= l_lo) & (idx // 2 <= l_hi)]
    valid = starts[np.isin(starts + 1, idx) & np.isin(starts + 2, idx)] // 2
    skipped = max(l_hi - l_lo + 1, 0) - valid.size

    def lookup(c, h):
        keys = np.concatenate([k for k, _ in halves[c]] or [np.zeros(0, np.int64)])
        vals = np.concatenate([v for _, v in halves[c]] or [np.zeros(0, np.int64)])
        uk, inv = np.unique(keys, return_inverse=True)
        tot = np.bincount(inv.ravel(), weights=vals, minlength=uk.size).astype(np.int64)
        pos = np.searchsorted(uk, h)
        hit = pos < uk.size
        hit[hit] = uk[pos[hit]] == h[hit]
        out = np.zeros(h.size, np.int64)
        out[hit] = tot[pos[hit]]
        return out

    out = np.zeros(valid.size, dtype=WINDOW_DTYPE)
    out["index"] = valid
    out["n1_on"] = lookup(Channel.D1, 2 * valid)
    out["n2_on"] = lookup(Channel.D2, 2 * valid)
    out["n1_off"] = lookup(Channel.D1, 2 * valid + 1)
    out["n2_off"] = lookup(Channel.D2, 2 * valid + 1)
    if out.size and max(out[f].max() for f in ("n1_on", "n2_on", "n1_off", "n2_off")) > M:
        raise StreamError("too-many-clicks", 0, f"a half window holds more than M={M} clicks")
    return WindowTable(out, int(skipped), irregular)


def _iter_record_chunks(records) -> Iterator[np.ndarray]:
    if isinstance(records, np.ndarray):
        yield _as_record_array(records)
        return
    batch = []
    for item in records:
        if isinstance(item, np.ndarray):
            if batch:
                yield _as_record_array(batch)
                batch = []
            yield _as_record_array(item)
        else:
            batch.append(item)
            if len(batch) >= DEFAULT_CHUNK_RECORDS:
                yield _as_record_array(batch)
                batch = []
    if batch:
        yield _as_record_array(batch)


def stream_summary(acq: AcquisitionConfig, records: np.ndarray) -> dict:
    ch = records["channel"]
    return {
        "pulses": acq.num_pulses,
        "periods": acq.num_periods,
        "records": int(records.size),
        "clicks_d1": int((ch == Channel.D1).sum()),
        "clicks_d2": int((ch == Channel.D2).sum()),
        "markers": int((ch == Channel.MARKER).sum()),
    }


def stream_header(acq: AcquisitionConfig, records: np.ndarray) -> StreamHeader:
    return StreamHeader(record_count=int(records.size), rep_rate=acq.rep_rate, f_mod=acq.f_mod)
