"""Seeded event-level simulation of the two-transmitter HOM experiment.

Physics notes
-------------
A 50:50 beam splitter maps a pair of coherent states onto another pair of
coherent states, so conditioned on the relative phase of a slot the photon
numbers at the two outputs are independent Poisson variables with the means
given by :func:`homdip.optics.beamsplitter_outputs`. Sampling those Poisson
numbers per slot with a fresh uniform phase is therefore exact for
phase-randomized weak coherent pulses; no Fock-space treatment is needed.

The relative phase is redrawn independently every slot. Real lasers drift
slowly instead, but every statistic computed here is phase-insensitive, so
the long-time average is the same.

Sampling scheme
---------------
Slots are grouped into fixed blocks of ``BLOCK_SLOTS``. Each block owns a
Philox generator keyed by ``(seed, block index)``, so a run is bit-identical
however the blocks are distributed over workers. Inside a block, candidate
photons are drawn as a Poisson process at the maximal per-slot rate and then
thinned to the four physical categories (pulse or leakage light at either
detector) using the phase-conditioned means. Cost scales with the number of
detections, not with the number of slots.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import optics
from .config import (DetectorModel, ExperimentConfig, PulseSourceConfig, ScanOptions,
                     config_to_dict, scan_to_dict)
from .tags import TimeTagStream, coincidence_count, dead_time_mask, post_select_pulse

__all__ = ["ExperimentConfig", "PulseSourceConfig", "DetectorModel", "ScanOptions",
           "RunMetadata", "ScanPoint", "DipScan", "SaturationError", "simulate_run",
           "simulate_scan", "derive_seed", "count_point"]

BLOCK_SLOTS = 1 << 22
SEED_SCHEME = "philox-seedseq-block22-v1"
SATURATION_FACTOR = 10.0


class SaturationError(ValueError):
    pass


def derive_seed(master: int, *keys: int) -> int:
    """64-bit sub-seed for ``keys`` under ``master``; independent of sibling keys."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed),
                                                                       spawn_key=(block,))))


@dataclass
class RunMetadata:
    config: dict
    seed: int
    n_slots: int
    duration: float
    t_p: float
    delta_omega: float
    expected_visibility: float
    raw_counts: tuple
    counts: tuple
    seed_scheme: str = SEED_SCHEME
    software_version: str = __version__
    fwhm_convention: str = optics.FWHM_CONVENTION
    dead_time_clean: bool = True

    def to_dict(self):
        return {
            "config": self.config,
            "seed": int(self.seed),
            "seed_scheme": self.seed_scheme,
            "software_version": self.software_version,
            "n_slots": int(self.n_slots),
            "duration_s": self.duration,
            "fwhm_convention": self.fwhm_convention,
            "t_p_s": self.t_p,
            "delta_omega_rad_s": self.delta_omega,
            "expected_visibility": self.expected_visibility,
            "raw_counts": [int(x) for x in self.raw_counts],
            "counts": [int(x) for x in self.counts],
            "dead_time_clean": self.dead_time_clean,
        }


def _physics(cfg: ExperimentConfig) -> dict:
    """Per-slot constants of the sampler, all times in picoseconds."""
    a, b = cfg.source_a, cfg.source_b
    lam0 = 0.5 * (a.lambda0 + b.lambda0)
    t_a, t_b = optics.tp_from_fwhm(a.fwhm), optics.tp_from_fwhm(b.fwhm)
    d_omega = float(optics.detuning_from_wavelength(cfg.delta_lambda, lam0))
    o = complex(cfg.mode_overlap)
    f = optics.overlap_factor(d_omega, t_a, t_b, cfg.timing_offset)
    s = a.mu + b.mu
    leak = (optics.background_in_window(a.mu, a.extinction_db)
            + optics.background_in_window(b.mu, b.extinction_db))
    eta = (cfg.detector_1.efficiency, cfg.detector_2.efficiency)
    return {
        "period": cfg.slot_period * 1e12,
        "center": cfg.center * 1e12,
        "offset_b": cfg.timing_offset * 1e12,
        "sum": s,
        "cross": math.sqrt(a.mu * b.mu) * abs(o) * float(f),
        "arg": float(np.angle(o)),
        "leak": leak,
        "eta": eta,
        "rate_max": max(eta) * (s + leak),
        "weight_a": a.mu / s if s > 0 else 1.0,
        "sigma": (optics.intensity_sigma(a.fwhm) * 1e12, optics.intensity_sigma(b.fwhm) * 1e12),
        "jitter": tuple(optics.intensity_sigma(d.jitter_fwhm) * 1e12
                        for d in (cfg.detector_1, cfg.detector_2)),
        "dark": (cfg.detector_1.dark_rate * cfg.slot_period,
                 cfg.detector_2.dark_rate * cfg.slot_period),
        "t_p": math.sqrt(0.5 * (t_a ** 2 + t_b ** 2)),
        "delta_omega": d_omega,
    }


def _simulate_block(ph: dict, seed: int, block: int, n_slots: int):
    """Raw (unsorted, unquantized) detection times in ps for one block, per channel."""
    rng = _block_rng(seed, block)
    first = block * BLOCK_SLOTS
    nb = min(BLOCK_SLOTS, n_slots - first)
    period = ph["period"]
    out = [[], []]

    m = ph["rate_max"]
    n = rng.poisson(m * nb) if m > 0 else 0
    if n:
        slot = np.sort(rng.integers(0, nb, n))
        uniq, inv = np.unique(slot, return_inverse=True)
        phase = rng.uniform(0.0, 2.0 * math.pi, uniq.size)[inv]
        u = rng.uniform(0.0, m, n)
        from_a = rng.random(n) < ph["weight_a"]
        z = rng.standard_normal(n)
        leak_pos = rng.random(n)
        jit = rng.standard_normal(n)

        cross = ph["cross"] * np.cos(phase + ph["arg"])
        p1 = 0.5 * ph["sum"] + cross
        p2 = 0.5 * ph["sum"] - cross
        e1, e2 = ph["eta"]
        half_leak = 0.5 * ph["leak"]
        c0 = e1 * p1
        c1 = c0 + e1 * half_leak
        c2 = c1 + e2 * p2
        c3 = c2 + e2 * half_leak
        cat = np.where(u < c0, 0, np.where(u < c1, 1, np.where(u < c2, 2, np.where(u < c3, 3, 4))))

        base = (first + slot).astype(np.float64) * period
        pulse_t = np.where(from_a, ph["center"] + ph["sigma"][0] * z,
                           ph["center"] + ph["offset_b"] + ph["sigma"][1] * z)
        t = base + np.where((cat == 0) | (cat == 2), pulse_t, leak_pos * period)
        for ch, cats in ((0, (0, 1)), (1, (2, 3))):
            sel = (cat == cats[0]) | (cat == cats[1])
            out[ch].append(t[sel] + ph["jitter"][ch] * jit[sel])

    for ch in (0, 1):
        nd = rng.poisson(ph["dark"][ch] * nb)
        if nd:
            out[ch].append((first + rng.random(nd) * nb) * period)
    return [np.concatenate(x) if x else np.zeros(0) for x in out]


def _simulate_blocks(args):
    ph, seed, blocks, n_slots = args
    parts = [_simulate_block(ph, seed, b, n_slots) for b in blocks]
    return [np.concatenate([p[ch] for p in parts]) if parts else np.zeros(0) for ch in (0, 1)]


def _finish_channel(times_ps: np.ndarray, det: DetectorModel, res_ps: float):
    units = np.rint(np.sort(times_ps) / res_ps).astype(np.int64)
    units = units[units >= 0]
    raw = units.size
    d = math.ceil(det.dead_time * 1e12 / res_ps - 1e-9)
    if d > 0:
        units = units[dead_time_mask(units, d)]
    return units, raw


def check_saturation(cfg: ExperimentConfig):
    ph = _physics(cfg)
    for ch, det in enumerate((cfg.detector_1, cfg.detector_2)):
        rate = ph["eta"][ch] * 0.5 * (ph["sum"] + ph["leak"]) / cfg.slot_period + det.dark_rate
        if det.dead_time > 0 and rate > SATURATION_FACTOR / det.dead_time:
            raise SaturationError(
                f"detector_{ch + 1}: mean rate {rate:.3g} Hz exceeds "
                f"{SATURATION_FACTOR:g}/dead_time; saturation is not modelled")


def simulate_run(cfg: ExperimentConfig, workers: int = 1):
    """Simulate one run. Returns ``(stream_ch0, stream_ch1, RunMetadata)``.

    Output streams are sorted, quantized to the tagger resolution and free
    of dead-time violations. The dead time is applied on the tagger grid
    (``ceil(dead_time / resolution)`` units), so quantized spacings never
    fall below it.
    """
    cfg.validate()
    check_saturation(cfg)
    ph = _physics(cfg)
    n_blocks = -(-cfg.n_slots // BLOCK_SLOTS)
    if workers > 1 and n_blocks > 1:
        chunks = [list(range(i, n_blocks, workers)) for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate_blocks,
                                  [(ph, cfg.seed, c, cfg.n_slots) for c in chunks]))
    else:
        parts = [_simulate_blocks((ph, cfg.seed, range(n_blocks), cfg.n_slots))]

    res_ps = cfg.resolution * 1e12
    streams, raw = [], []
    for ch, det in enumerate((cfg.detector_1, cfg.detector_2)):
        t, n_raw = _finish_channel(np.concatenate([p[ch] for p in parts]), det, res_ps)
        raw.append(n_raw)
        streams.append(t)

    a, b = cfg.source_a, cfg.source_b
    v = (optics.expected_visibility(a.mu, b.mu, min(abs(cfg.mode_overlap), 1.0),
                                    min(a.extinction_db, b.extinction_db))
         if a.mu + b.mu > 0 else 0.0)
    meta = RunMetadata(config=config_to_dict(cfg), seed=cfg.seed, n_slots=cfg.n_slots,
                       duration=cfg.duration, t_p=ph["t_p"], delta_omega=ph["delta_omega"],
                       expected_visibility=v, raw_counts=tuple(raw),
                       counts=tuple(len(s) for s in streams))
    md = {"duration": cfg.duration, "simulated": True, "slot_period": cfg.slot_period}
    out = [TimeTagStream(t, np.full(t.size, ch, np.uint8), cfg.resolution, dict(md, channel=ch))
           for ch, t in enumerate(streams)]
    return out[0], out[1], meta


# --------------------------------------------------------------------------
# scans


def _count(c):
    # noiseless synthetic scans carry fractional expected counts
    c = float(c)
    return int(c) if c.is_integer() else c


@dataclass
class ScanPoint:
    delta_lambda: float
    coincidences: int
    singles: tuple
    accidentals: float
    integration: int
    n_offsets: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict)
    raw_singles: tuple | None = None

    def to_dict(self):
        return {
            "delta_lambda_m": self.delta_lambda,
            "coincidences": _count(self.coincidences),
            "singles": [int(s) for s in self.singles],
            "accidentals": float(self.accidentals),
            "accidental_offsets": int(self.n_offsets),
            "integration_slots": int(self.integration),
            "seed": self.seed,
            **({"raw_singles": [int(s) for s in self.raw_singles]}
               if self.raw_singles is not None else {}),
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["delta_lambda_m"]), _count(d["coincidences"]),
                   tuple(int(s) for s in d["singles"]), float(d.get("accidentals", 0.0)),
                   int(d["integration_slots"]), int(d.get("accidental_offsets", 0)),
                   d.get("seed"), dict(d.get("extra", {})),
                   tuple(int(s) for s in d["raw_singles"]) if "raw_singles" in d else None)


@dataclass
class DipScan:
    points: list
    lambda0: float = 1550e-9
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        dl = [p.delta_lambda for p in self.points]
        if any(b <= a for a, b in zip(dl, dl[1:])):
            raise ValueError("scan detunings must be strictly increasing")

    @property
    def delta_lambda(self):
        return np.array([p.delta_lambda for p in self.points])

    @property
    def coincidences(self):
        return np.array([p.coincidences for p in self.points], dtype=float)

    @property
    def singles(self):
        return np.array([p.singles for p in self.points], dtype=float)

    @property
    def raw_singles(self):
        """Detector singles before post-selection (falls back to ``singles``)."""
        return np.array([p.singles if p.raw_singles is None else p.raw_singles
                         for p in self.points], dtype=float)

    @property
    def accidentals(self):
        return np.array([p.accidentals for p in self.points], dtype=float)

    @property
    def integration(self):
        return np.array([p.integration for p in self.points], dtype=float)

    def to_dict(self):
        return {"format": "homdip-dipscan-1", "lambda0_m": self.lambda0,
                "points": [p.to_dict() for p in self.points],
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls([ScanPoint.from_dict(p) for p in d["points"]], float(d["lambda0_m"]),
                   dict(d.get("provenance", {})))


def count_point(s1: TimeTagStream, s2: TimeTagStream, cfg: ExperimentConfig,
                opts: ScanOptions, delta_lambda: float | None = None) -> ScanPoint:
    """Reduce one run's streams to singles, same-slot coincidences and accidentals.

    With post-selection enabled each channel is cut around its own located
    pulse (see :func:`homdip.tags.post_select_pulse`).
    """
    extra = {}
    raw = (len(s1), len(s2))
    if opts.post_select is not None:
        s1, extra["pulse_center_0_s"] = post_select_pulse(s1, cfg.slot_period, opts.post_select,
                                                          cfg.center)
        s2, extra["pulse_center_1_s"] = post_select_pulse(s2, cfg.slot_period, opts.post_select,
                                                          cfg.center)
    same = coincidence_count(s1, s2, opts.window)
    acc = [coincidence_count(s1, s2, opts.window, offset=k * cfg.slot_period)
           for k in opts.accidental_offsets]
    return ScanPoint(cfg.delta_lambda if delta_lambda is None else delta_lambda, same,
                     (len(s1), len(s2)), float(np.mean(acc)), cfg.n_slots, len(acc),
                     cfg.seed, extra, raw)


def scan_point_config(cfg: ExperimentConfig, delta_lambda: float, index: int) -> ExperimentConfig:
    return replace(cfg, delta_lambda=delta_lambda, seed=derive_seed(cfg.seed, index))


def _run_point(args):
    cfg, opts, dl, i = args
    pcfg = scan_point_config(cfg, dl, i)
    try:
        s1, s2, _ = simulate_run(pcfg)
    except SaturationError as err:
        raise SaturationError(f"scan point {i} (delta_lambda={dl!r}): {err}") from err
    return count_point(s1, s2, pcfg, opts)


def simulate_scan(cfg: ExperimentConfig, opts: ScanOptions | None = None, *,
                  workers: int = 1, progress=None) -> DipScan:
    """Run :func:`simulate_run` over a detuning grid.

    Point ``i`` uses the sub-seed ``derive_seed(cfg.seed, i)``; the mean
    photon numbers stay fixed across the grid.
    """
    opts = (opts or ScanOptions()).validate()
    cfg.validate()
    jobs = [(cfg, opts, dl, i) for i, dl in enumerate(opts.detunings)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            points = list(pool.map(_run_point, jobs))
    else:
        points = []
        for job in jobs:
            points.append(_run_point(job))
            if progress is not None:
                progress(len(points), len(jobs))
    return DipScan(points, scan_lambda0(cfg), scan_provenance(cfg, opts))


def scan_lambda0(cfg: ExperimentConfig) -> float:
    return 0.5 * (cfg.source_a.lambda0 + cfg.source_b.lambda0)


def scan_provenance(cfg: ExperimentConfig, opts: ScanOptions) -> dict:
    return {"config": config_to_dict(cfg), "scan": scan_to_dict(opts),
            "seed_scheme": SEED_SCHEME, "software_version": __version__,
            "fwhm_convention": optics.FWHM_CONVENTION}
