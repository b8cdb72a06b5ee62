"""Time-tag streams: data model, HTAG/CSV files, coincidences and slot folding.

Times are stored as integer multiples of the stream resolution (``int64``).
Phase arithmetic (folding modulo the slot period) is done exactly in integer
femtoseconds so that post-selection is idempotent and reproducible.

HTAG file layout (little-endian)::

    magic     4s   b"HTAG"
    version   u16  1
    res_fs    u32  resolution in femtoseconds
    reserved  u32  0
    records   {channel u8, time u64} * n, packed, sorted by (time, channel)
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

MAGIC = b"HTAG"
VERSION = 1
HEADER = struct.Struct("<4sHII")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("time", "<u8")])
assert RECORD_DTYPE.itemsize == 9

DEFAULT_RESOLUTION = 32e-12
DEFAULT_WINDOW = 580e-12
DEFAULT_POST_SELECT = 175e-12


class TagFormatError(ValueError):
    pass


class BadMagicError(TagFormatError):
    pass


class VersionError(TagFormatError):
    pass


class TruncatedRecordError(TagFormatError):
    pass


class UnsortedError(TagFormatError):
    pass


class ResolutionMismatchError(ValueError):
    pass


def to_fs(seconds: float) -> int:
    return int(round(seconds * 1e15))


@dataclass(frozen=True)
class TimeTagStream:
    """Sorted detection timestamps with their channel numbers.

    ``times`` are in units of ``resolution`` seconds. The arrays are made
    read-only on construction.
    """

    times: np.ndarray
    channels: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.int64)
        c = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if c.ndim == 0:
            c = np.full(t.shape, c, dtype=np.uint8)
        if t.shape != c.shape or t.ndim != 1:
            raise ValueError("times and channels must be 1-D arrays of equal length")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if t.size and t[0] < 0:
            raise ValueError("times must be >= 0")
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "channels", c)

    @classmethod
    def single(cls, times, channel=0, resolution=DEFAULT_RESOLUTION, metadata=None):
        times = np.asarray(times, dtype=np.int64)
        return cls(times, np.full(times.shape, channel, dtype=np.uint8), resolution,
                   dict(metadata or {}))

    def __len__(self):
        return int(self.times.size)

    @property
    def resolution_fs(self) -> int:
        return to_fs(self.resolution)

    @property
    def duration(self) -> float:
        """Run duration in seconds: from metadata if recorded, else the tag span."""
        if "duration" in self.metadata:
            return float(self.metadata["duration"])
        if len(self) < 2:
            return 0.0
        return float(self.times[-1] - self.times[0]) * self.resolution

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        dt = np.diff(self.times)
        if np.any(dt < 0):
            return False
        same = dt == 0
        return not np.any(self.channels[1:][same] < self.channels[:-1][same])

    def validate(self):
        if not self.is_sorted():
            raise UnsortedError("tags are not sorted by (time, channel)")
        if np.any(self.channels > 1):
            raise ValueError("channel numbers must be 0 or 1")
        return self

    def channel(self, ch: int) -> "TimeTagStream":
        keep = self.channels == ch
        return TimeTagStream(self.times[keep], self.channels[keep], self.resolution,
                             dict(self.metadata))

    def seconds(self) -> np.ndarray:
        return self.times * self.resolution

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (self.resolution_fs == other.resolution_fs
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.channels, other.channels))


def merge(*streams: TimeTagStream) -> TimeTagStream:
    """Merge streams into one, ordered by time then channel."""
    res = _common_resolution(*streams)
    t = np.concatenate([s.times for s in streams])
    c = np.concatenate([s.channels for s in streams])
    order = np.lexsort((c, t))
    return TimeTagStream(t[order], c[order], res, {})


def _common_resolution(*streams):
    fs = {s.resolution_fs for s in streams}
    if len(fs) > 1:
        raise ResolutionMismatchError(f"streams have different resolutions: {sorted(fs)} fs")
    return streams[0].resolution


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _greedy_pairs(t1, t2, w, off):
    n1 = t1.size
    n2 = t2.size
    consumed = np.zeros(n2, dtype=np.bool_)
    lo = 0
    count = 0
    for i in range(n1):
        t = t1[i]
        while lo < n2 and (t2[lo] + off < t - w or consumed[lo]):
            lo += 1
        best = -1
        bestd = w + 1
        j = lo
        while j < n2 and t2[j] + off <= t + w:
            if not consumed[j]:
                d = abs(t2[j] + off - t)
                if d < bestd:
                    best = j
                    bestd = d
            j += 1
        if best >= 0:
            consumed[best] = True
            count += 1
    return count


@njit(cache=True)
def _pair_histogram(t1, t2, r, bin_u, nhalf, off):
    hist = np.zeros(2 * nhalf + 1, dtype=np.int64)
    n2 = t2.size
    lo = 0
    for i in range(t1.size):
        t = t1[i]
        while lo < n2 and t2[lo] + off < t - r:
            lo += 1
        j = lo
        while j < n2 and t2[j] + off <= t + r:
            dt = t2[j] + off - t
            # half away from zero keeps the histogram mirror-symmetric
            m = int(np.floor(abs(dt) / bin_u + 0.5))
            k = (m if dt >= 0 else -m) + nhalf
            if 0 <= k < hist.size:
                hist[k] += 1
            j += 1
    return hist


@njit(cache=True)
def dead_time_mask(t, d):
    """Keep-mask enforcing a non-extending dead time ``d`` on sorted times ``t``."""
    keep = np.zeros(t.size, dtype=np.bool_)
    if t.size == 0:
        return keep
    last = t[0]
    keep[0] = True
    for i in range(1, t.size):
        if t[i] - last >= d:
            keep[i] = True
            last = t[i]
    return keep


# --------------------------------------------------------------------------
# coincidences and histograms


@dataclass
class CoincidenceResult:
    window: float
    count: int
    singles: tuple
    histogram: tuple  # (bin centers in seconds, counts)
    accidental_estimate: float
    duration: float
    offset: float = 0.0

    def to_dict(self):
        centers, counts = self.histogram
        return {
            "window_s": self.window,
            "offset_s": self.offset,
            "count": int(self.count),
            "singles": [int(s) for s in self.singles],
            "accidental_estimate": float(self.accidental_estimate),
            "duration_s": float(self.duration),
            "histogram": {"bin_center_s": [float(x) for x in centers],
                          "counts": [int(x) for x in counts]},
        }


def _check_pair(s1: TimeTagStream, s2: TimeTagStream):
    res = _common_resolution(s1, s2)
    for s in (s1, s2):
        if np.any(np.diff(s.times) < 0):
            raise UnsortedError("input stream is not sorted")
    return res


def _offset_units(offset, res):
    return int(round(offset / res))


def count_coincidences(s1: TimeTagStream, s2: TimeTagStream, window: float = DEFAULT_WINDOW,
                       *, offset: float = 0.0, hist_bin: float | None = None,
                       hist_range: float | None = None) -> CoincidenceResult:
    """Count pairs with ``|t1 - (t2 + offset)| <= window`` by greedy nearest matching.

    Tags of ``s1`` are visited in time order and each takes the nearest
    not-yet-used tag of ``s2`` inside the window (ties go to the earlier
    one), so every tag is in at most one coincidence. The histogram holds
    all pairs, not just matched ones, over ``+/- hist_range`` (default
    ``4 * window``).
    """
    res = _check_pair(s1, s2)
    w = math.floor(window / res + 1e-9)
    off = _offset_units(offset, res)
    count = int(_greedy_pairs(s1.times, s2.times, w, off))
    hist_bin = res if hist_bin is None else hist_bin
    hist_range = max(4 * window, hist_bin) if hist_range is None else hist_range
    hist = correlation_histogram(s1, s2, hist_bin, hist_range, offset=offset)
    duration = max(s1.duration, s2.duration)
    return CoincidenceResult(window, count, (len(s1), len(s2)), hist,
                             accidental_estimate(s1, s2, window, duration), duration, offset)


def coincidence_count(s1, s2, window=DEFAULT_WINDOW, offset=0.0) -> int:
    """Bare greedy coincidence count; no histogram."""
    res = _check_pair(s1, s2)
    return int(_greedy_pairs(s1.times, s2.times, math.floor(window / res + 1e-9),
                             _offset_units(offset, res)))


def accidental_estimate(s1, s2, window, duration=None):
    """Expected uncorrelated coincidences ``r1 r2 (2 window) T``."""
    duration = max(s1.duration, s2.duration) if duration is None else duration
    if duration <= 0:
        return 0.0
    r1 = len(s1) / duration
    r2 = len(s2) / duration
    return r1 * r2 * 2.0 * window * duration


def correlation_histogram(s1, s2, bin: float, range: float, *, offset: float = 0.0):
    """Histogram of ``t2 - t1`` over all pairs within ``+/- range``.

    Returns ``(centers, counts)``; bins are centred on multiples of ``bin``.
    """
    if not bin > 0:
        raise ValueError("bin must be > 0")
    if range < bin:
        raise ValueError("range must be >= bin")
    res = _check_pair(s1, s2)
    bin_u = bin / res
    r = math.floor(range / res + 1e-9)
    nhalf = int(math.floor(r / bin_u + 0.5))
    counts = _pair_histogram(s1.times, s2.times, r, bin_u, nhalf, _offset_units(offset, res))
    centers = (np.arange(counts.size) - nhalf) * bin
    return centers, counts


# --------------------------------------------------------------------------
# folding modulo the slot period


def slot_phase_fs(stream: TimeTagStream, slot_period: float) -> np.ndarray:
    """Exact phase of every tag within the slot, in integer femtoseconds."""
    r = stream.resolution_fs
    p = to_fs(slot_period)
    g = math.gcd(r, p)
    return (stream.times % (p // g)) * r % p


def post_select(stream: TimeTagStream, slot_period: float, window_center: float,
                window_width: float) -> TimeTagStream:
    """Keep tags whose slot phase lies within +/- width/2 of ``window_center``."""
    if not slot_period > window_width > 0:
        raise ValueError("need slot_period > window_width > 0")
    p = to_fs(slot_period)
    c = to_fs(window_center) % p
    w = to_fs(window_width)
    d = (slot_phase_fs(stream, slot_period) - c + p // 2) % p - p // 2
    keep = 2 * np.abs(d) <= w
    cut = {"slot_period": slot_period, "center": window_center, "width": window_width}
    md = dict(stream.metadata)
    cuts = list(md.get("post_select", []))
    if cut not in cuts:
        cuts.append(cut)
    md["post_select"] = cuts
    return TimeTagStream(stream.times[keep], stream.channels[keep], stream.resolution, md)


def slot_phase_histogram(stream: TimeTagStream, slot_period: float, bin: float):
    """Fold tags modulo the slot period. Returns ``(bin centers [s], counts)``; bin ``k`` is centred on ``k * bin``."""
    nb = slot_period / bin
    n = int(round(nb))
    if n < 1 or abs(nb - n) > 1e-6 * n:
        raise ValueError(f"bin {bin} does not divide slot period {slot_period}")
    p = to_fs(slot_period)
    # bin k is centred on phase k * bin
    idx = ((2 * slot_phase_fs(stream, slot_period) * n + p) // (2 * p)) % n
    counts = np.bincount(idx, minlength=n)
    centers = np.arange(n) * slot_period / n
    return centers, counts


@dataclass
class PulseProfile:
    center: float
    fwhm: float
    background: float
    peak: float


def measure_pulse(centers, counts, slot_period: float) -> PulseProfile:
    """Locate the pulse in a folded histogram and measure its FWHM.

    The background is the median of the bins farthest from the peak (the
    half-slot opposite it); the FWHM comes from linear interpolation of the
    half-maximum crossings, and the center is the background-subtracted
    centroid within one FWHM of the peak.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.size
    bin = slot_period / n
    k_peak = int(np.argmax(counts))
    shift = n // 2 - k_peak
    y = np.roll(counts, shift)
    x = (np.arange(n) - n // 2) * bin
    k0 = n // 2
    bg = float(np.median(np.concatenate([y[: n // 4], y[-n // 4:]])))
    y = y - bg
    half = 0.5 * y[k0]
    left = k0
    while left > 0 and y[left - 1] > half:
        left -= 1
    right = k0
    while right < n - 1 and y[right + 1] > half:
        right += 1
    if left == 0 or right == n - 1:
        raise ValueError("pulse does not fall to half maximum inside the slot")
    xl = x[left - 1] + (half - y[left - 1]) / (y[left] - y[left - 1]) * bin
    xr = x[right] + (y[right] - half) / (y[right] - y[right + 1]) * bin
    fwhm = xr - xl
    sel = np.abs(x) <= fwhm
    centroid = float(np.sum(x[sel] * y[sel]) / np.sum(y[sel]))
    return PulseProfile((centers[k_peak] + centroid) % slot_period, float(fwhm), bg, float(y[k0]))


def locate_pulse(stream: TimeTagStream, slot_period: float, bin: float = 16e-12) -> PulseProfile:
    return measure_pulse(*slot_phase_histogram(stream, slot_period, bin), slot_period)


def post_select_pulse(stream: TimeTagStream, slot_period: float, window_width: float,
                      fallback_center: float | None = None):
    """Post-select around the pulse located in the stream's own folded histogram.

    Tag phases only take values on a lattice of ``gcd(resolution,
    slot_period)``, so the located centre is snapped to that lattice;
    otherwise estimation noise far below the lattice spacing would still
    move whole lattice rows in or out of the window. Returns
    ``(selected_stream, center)``.
    """
    try:
        center = locate_pulse(stream, slot_period).center
    except ValueError:
        if fallback_center is None:
            raise
        center = fallback_center
    q = math.gcd(stream.resolution_fs, to_fs(slot_period)) * 1e-15
    center = float(f"{round(center / q) * q:.12g}")
    return post_select(stream, slot_period, center, window_width), center


# --------------------------------------------------------------------------
# files


def write_tags(stream: TimeTagStream, path, chunk: int = 1 << 20):
    """Write an HTAG file; records are written in chunks of ``chunk`` tags."""
    stream.validate()
    res_fs = stream.resolution_fs
    if not 0 < res_fs < 2 ** 32:
        raise ValueError("resolution does not fit the HTAG header")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, res_fs, 0))
        for i in range(0, len(stream), chunk):
            rec = np.empty(min(chunk, len(stream) - i), dtype=RECORD_DTYPE)
            rec["channel"] = stream.channels[i:i + chunk]
            rec["time"] = stream.times[i:i + chunk]
            fh.write(rec.tobytes())


def _read_header(fh):
    raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise TruncatedRecordError("file shorter than the HTAG header")
    magic, version, res_fs, _ = HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"unsupported HTAG version {version}")
    if res_fs == 0:
        raise TagFormatError("zero resolution in header")
    return res_fs * 1e-15


def iter_tags(path, chunk: int = 1 << 20):
    """Yield ``(resolution, channels, times)`` chunks of at most ``chunk`` records."""
    with open(path, "rb") as fh:
        res = _read_header(fh)
        prev = None
        while True:
            raw = fh.read(chunk * RECORD_DTYPE.itemsize)
            if not raw:
                break
            if len(raw) % RECORD_DTYPE.itemsize:
                raise TruncatedRecordError(
                    f"{len(raw) % RECORD_DTYPE.itemsize} trailing bytes: truncated record")
            rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
            t = rec["time"].astype(np.int64)
            c = rec["channel"].copy()
            if prev is not None:
                t_all = np.concatenate([[prev[0]], t])
                c_all = np.concatenate([[prev[1]], c])
            else:
                t_all, c_all = t, c
            dt = np.diff(t_all)
            if np.any(dt < 0) or np.any(c_all[1:][dt == 0] < c_all[:-1][dt == 0]):
                raise UnsortedError("HTAG payload is not sorted")
            prev = (t[-1], c[-1])
            yield res, c, t


def read_tags(path, chunk: int = 1 << 20) -> TimeTagStream:
    with open(path, "rb") as fh:
        res = _read_header(fh)
    ts, cs = [], []
    for res, c, t in iter_tags(path, chunk):
        ts.append(t)
        cs.append(c)
    t = np.concatenate(ts) if ts else np.zeros(0, np.int64)
    c = np.concatenate(cs) if cs else np.zeros(0, np.uint8)
    return TimeTagStream(t, c, res, {"source": str(path)})


def write_tags_csv(stream: TimeTagStream, path):
    res_ps = stream.resolution * 1e12
    with open(path, "w") as fh:
        fh.write("channel,time_ps\n")
        if float(res_ps).is_integer():
            vals = stream.times * int(res_ps)
            for c, v in zip(stream.channels.tolist(), vals.tolist()):
                fh.write(f"{c},{v}\n")
        else:
            for c, t in zip(stream.channels.tolist(), stream.times.tolist()):
                fh.write(f"{c},{t * res_ps!r}\n")


def read_tags_csv(path, resolution: float = DEFAULT_RESOLUTION) -> TimeTagStream:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
    if header.replace(" ", "") != "channel,time_ps":
        raise TagFormatError(f"unexpected CSV header {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return TimeTagStream(np.zeros(0, np.int64), np.zeros(0, np.uint8), resolution,
                             {"source": str(path)})
    units = data[:, 1] / (resolution * 1e12)
    t = np.rint(units).astype(np.int64)
    if np.any(np.abs(units - t) > 1e-6):
        raise TagFormatError("CSV times are not multiples of the resolution")
    s = TimeTagStream(t, data[:, 0].astype(np.uint8), resolution, {"source": str(path)})
    return s.validate()
