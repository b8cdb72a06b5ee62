"""End-to-end acceptance checks of the simulator and analysis chain.

Every check returns a :class:`CheckResult` carrying the measured value, the
target and a pass flag. Monte Carlo checks come in two sizes where it
matters: the run length stated by the criterion, and a longer run whose
statistical error is small compared with the tolerance (see README).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import optics, tags
from .analysis import bootstrap_uncertainty, dip_halfwidth, fit_dip, normalize_dip, synthetic_scan
from .config import ScanOptions, load_preset_document, preset, scan_from_dict
from .montecarlo import DipScan, count_point, derive_seed, simulate_run, simulate_scan

MASTER_SEED = 20190611
STATED_SLOTS = 10 ** 7
SCAN_SLOTS = 10 ** 10
FLOOR_SLOTS = 3 * 10 ** 10
PULSE_SLOTS = 10 ** 9

TARGET_V = 0.465
TARGET_TP = optics.tp_from_fwhm(120e-12)


@dataclass
class CheckResult:
    id: str
    title: str
    passed: bool
    measured: str
    target: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.id:<20s} {self.title}: "
                f"{self.measured} (target {self.target}) [{self.seconds:.1f} s]")

    def to_dict(self):
        return {"id": self.id, "title": self.title, "passed": bool(self.passed),
                "measured": self.measured, "target": self.target, "seconds": self.seconds,
                "details": self.details}


def preset_scan_options(name: str) -> ScanOptions:
    return scan_from_dict(load_preset_document(name).get("scan"))


# --------------------------------------------------------------------------
# AC-1: dip floor


def check_ideal_bound() -> CheckResult:
    v = optics.expected_visibility(1e-3, 1e-3, 1.0, math.inf)
    return CheckResult("AC-1/analytic", "expected visibility, balanced, ideal", v == 0.5,
                       f"V = {v:.4f}", "0.5000 exactly")


def dip_floor(n_slots: int, seed: int = MASTER_SEED) -> dict:
    """Same-slot coincidences over cross-slot accidentals at zero detuning, ideal preset."""
    cfg = replace(preset("ideal"), n_slots=n_slots, seed=seed, delta_lambda=0.0)
    opts = preset_scan_options("ideal")
    s1, s2, _ = simulate_run(cfg)
    p = count_point(s1, s2, cfg, opts)
    n, acc, k = p.coincidences, p.accidentals, p.n_offsets
    floor = n / acc if acc > 0 else float("nan")
    sigma = (math.sqrt(max(n, 1) / acc ** 2 + n ** 2 / (acc ** 3 * k)) if acc > 0
             else float("nan"))
    return {"floor": floor, "sigma": sigma, "coincidences": n, "accidentals_per_offset": acc,
            "n_slots": n_slots, "singles": list(p.singles)}


def check_dip_floor(n_slots: int, seed: int = MASTER_SEED) -> CheckResult:
    d = dip_floor(n_slots, seed)
    ok = bool(abs(d["floor"] - 0.5) <= 0.02)
    return CheckResult(f"AC-1/mc-{n_slots:.0e}".replace("+", ""),
                       f"MC dip floor, {n_slots:.0e} slots", ok,
                       f"{d['floor']:.4f} +/- {d['sigma']:.4f}", "0.500 +/- 0.02", d)


# --------------------------------------------------------------------------
# AC-2, AC-3, AC-5: full scan


def run_visibility_scan(n_slots: int, *, seed: int = MASTER_SEED, workers: int = 1,
                        progress=None) -> DipScan:
    cfg = replace(preset("paper-v465"), n_slots=n_slots, seed=seed)
    return simulate_scan(cfg, preset_scan_options("paper-v465"), workers=workers,
                         progress=progress)


def check_visibility(scan: DipScan, n_boot: int = 200) -> CheckResult:
    label = f"{int(scan.integration[0]):.0e}".replace("+", "")
    fit = fit_dip(normalize_dip(scan))
    boot = bootstrap_uncertainty(scan, n_boot, seed=derive_seed(MASTER_SEED, 2))
    ratio = fit.sigma_visibility / boot.sigma if boot.sigma > 0 else float("inf")
    ok_v = abs(fit.visibility - TARGET_V) <= 0.02
    ok_s = abs(ratio - 1.0) <= 0.3
    return CheckResult(
        f"AC-2/{label}", f"fitted visibility, 41 x {label} slots", bool(ok_v and ok_s),
        f"V = {fit.visibility:.4f} +/- {fit.sigma_visibility:.4f}, "
        f"bootstrap sigma {boot.sigma:.4f} (ratio {ratio:.2f})",
        "V = 0.465 +/- 0.02, sigma ratio within 30%",
        {"fit": fit.to_dict(), "bootstrap_sigma": boot.sigma, "bootstrap_failed": boot.n_failed,
         "sigma_ratio": ratio, "visibility_ok": bool(ok_v), "sigma_ok": bool(ok_s)})


def check_dip_width(scan: DipScan) -> CheckResult:
    label = f"{int(scan.integration[0]):.0e}".replace("+", "")
    fit = fit_dip(normalize_dip(scan))
    t_p = abs(fit.t_p)
    rel = t_p / TARGET_TP - 1.0
    hw = dip_halfwidth(t_p, scan.lambda0)
    return CheckResult(f"AC-3/{label}", f"fitted t_p, 41 x {label} slots",
                       bool(abs(rel) <= 0.05),
                       f"t_p = {t_p * 1e12:.2f} +/- {fit.sigma_t_p * 1e12:.2f} ps "
                       f"({rel:+.1%}), half-width {hw * 1e12:.2f} pm",
                       f"{TARGET_TP * 1e12:.2f} ps +/- 5% "
                       f"(half-width {dip_halfwidth(TARGET_TP, scan.lambda0) * 1e12:.2f} pm)",
                       {"t_p_s": t_p, "sigma_t_p_s": fit.sigma_t_p, "halfwidth_m": hw})


def check_singles(scan: DipScan) -> CheckResult:
    label = f"{int(scan.integration[0]):.0e}".replace("+", "")
    s = scan.raw_singles
    pvals = []
    for ch in range(2):
        x = s[:, ch]
        chi2 = float(np.sum((x - x.mean()) ** 2) / x.mean())
        pvals.append(float(stats.chi2.sf(chi2, x.size - 1)))
    return CheckResult(f"AC-5/{label}", f"constant singles, 41 x {label} slots",
                       bool(min(pvals) > 0.01),
                       f"p = {pvals[0]:.3f}, {pvals[1]:.3f}", "p > 0.01 on both detectors",
                       {"p_values": pvals, "mean_singles": s.mean(axis=0).tolist()})


# --------------------------------------------------------------------------
# AC-4: detected pulse shape


def check_pulse_shape(n_slots: int = PULSE_SLOTS, seed: int = MASTER_SEED) -> CheckResult:
    cfg = replace(preset("paper-calibrated"), n_slots=n_slots, seed=seed)
    s1, s2, _ = simulate_run(cfg)
    fwhm = [tags.locate_pulse(s, cfg.slot_period, 16e-12).fwhm for s in (s1, s2)]
    ok = all(abs(f - 175e-12) <= 9e-12 for f in fwhm)
    return CheckResult("AC-4", "folded pulse FWHM, calibrated jitter", ok,
                       f"{fwhm[0] * 1e12:.1f} ps, {fwhm[1] * 1e12:.1f} ps", "175 +/- 9 ps",
                       {"fwhm_s": fwhm, "jitter_fwhm_s": cfg.detector_1.jitter_fwhm})


# --------------------------------------------------------------------------
# AC-6: oracles


def brute_force_coincidences(t1, t2, w: int, off: int = 0) -> int:
    """O(n1 n2) greedy nearest matching; ties go to the earlier partner."""
    t2 = np.asarray(t2, dtype=np.int64) + off
    free = np.ones(t2.size, dtype=bool)
    n = 0
    for t in np.asarray(t1, dtype=np.int64):
        d = np.abs(t2 - t)
        cand = np.flatnonzero(free & (d <= w))
        if cand.size:
            free[cand[np.argmin(d[cand])]] = False
            n += 1
    return n


def check_pairing_oracle(n_instances: int = 1000, seed: int = MASTER_SEED) -> CheckResult:
    rng = np.random.default_rng(derive_seed(seed, 6))
    res = 32e-12
    bad = 0
    for _ in range(n_instances):
        n1, n2 = rng.integers(0, 300, 2)
        span = int(rng.choice([30, 300, 3000, 30000]))
        t1 = np.sort(rng.integers(0, span, n1))
        t2 = np.sort(rng.integers(0, span, n2))
        w = int(rng.integers(0, 30))
        off = int(rng.integers(-20, 21))
        s1 = tags.TimeTagStream.single(t1, 0, res)
        s2 = tags.TimeTagStream.single(t2, 1, res)
        got = tags.count_coincidences(s1, s2, w * res, offset=off * res).count
        bad += got != brute_force_coincidences(t1, t2, w, off)
    return CheckResult("AC-6/pairing", "coincidences vs brute force", bad == 0,
                       f"{n_instances - bad}/{n_instances} exact", "all exact",
                       {"mismatches": bad})


def check_phase_average_oracle(n_sets: int = 100, seed: int = MASTER_SEED) -> CheckResult:
    rng = np.random.default_rng(derive_seed(seed, 66))
    worst = 0.0
    for _ in range(n_sets):
        t_p = rng.uniform(10e-12, 200e-12)
        i1, i2 = rng.uniform(0.01, 2.0, 2)
        o = rng.uniform(0, 1) * np.exp(1j * rng.uniform(0, 2 * math.pi))
        dw = rng.uniform(-3, 3) / t_p
        inp = optics.InterferenceInput(optics.PulseField(t_p, intensity=i1),
                                       optics.PulseField(t_p, intensity=i2),
                                       delta_omega=dw, delta_phi=rng.uniform(0, 2 * math.pi),
                                       mode_overlap=o)
        v = 2 * i1 * i2 * abs(o) ** 2 / (i1 + i2) ** 2
        closed = 1 - v * math.exp(-(t_p * dw) ** 2)
        worst = max(worst, abs(optics.phase_averaged_coincidence(inp) - closed))
    return CheckResult("AC-6/phase-average", "phase average vs closed form", worst <= 1e-3,
                       f"max |diff| = {worst:.2e}", "<= 1e-3", {"max_abs_diff": worst})


# --------------------------------------------------------------------------
# AC-7: pull test


def check_pulls(n_rep: int = 200, baseline: float = 4000.0, seed: int = MASTER_SEED) -> CheckResult:
    opts = preset_scan_options("paper-v465")
    pulls = []
    for r in range(n_rep):
        rng = np.random.default_rng(derive_seed(seed, 7, r))
        scan = synthetic_scan(opts.detunings, baseline=baseline, visibility=TARGET_V,
                              t_p=TARGET_TP, rng=rng)
        f = fit_dip(normalize_dip(scan))
        pulls.append((f.visibility - TARGET_V) / f.sigma_visibility)
    pulls = np.array(pulls)
    m, s = float(pulls.mean()), float(pulls.std(ddof=1))
    ok = abs(m) < 0.1 and 0.85 <= s <= 1.15
    return CheckResult("AC-7", f"visibility pulls, {n_rep} replications", ok,
                       f"mean {m:+.3f}, std {s:.3f}", "|mean| < 0.1, std in [0.85, 1.15]",
                       {"mean": m, "std": s, "n": n_rep, "baseline_counts": baseline})


# --------------------------------------------------------------------------
# AC-8: dark counts


def check_dark_counts(seed: int = MASTER_SEED) -> CheckResult:
    cfg = preset("paper")
    off = replace(cfg.source_a, mu=0.0)
    cfg = replace(cfg, source_a=off, source_b=replace(off), seed=seed,
                  n_slots=round(10.0 / cfg.slot_period))
    s1, s2, _ = simulate_run(cfg)
    counts = [len(s1), len(s2)]
    mean = cfg.detector_1.dark_rate * cfg.duration
    gaps = [float(np.diff(s.times).min() * s.resolution) if len(s) > 1 else math.inf
            for s in (s1, s2)]
    ok = all(abs(c - mean) <= 5 * math.sqrt(mean) for c in counts) and min(gaps) >= 50e-9
    return CheckResult("AC-8", "dark counts over 10 s", ok,
                       f"counts {counts[0]}, {counts[1]}; min gap {min(gaps) * 1e9:.3f} ns",
                       f"{mean:.0f} +/- {5 * math.sqrt(mean):.0f}, gap >= 50 ns",
                       {"counts": counts, "min_gap_s": gaps})


# --------------------------------------------------------------------------


class Suite:
    """Runs checks by id, sharing the expensive scans between AC-2, AC-3 and AC-5."""

    def __init__(self, workers: int = 1, progress=None):
        self.workers = workers
        self.progress = progress
        self._scans = {}

    def scan(self, n_slots: int) -> DipScan:
        if n_slots not in self._scans:
            self._scans[n_slots] = run_visibility_scan(n_slots, workers=self.workers,
                                                       progress=self.progress)
        return self._scans[n_slots]

    @property
    def checks(self) -> dict:
        return {
            "AC-1/analytic": check_ideal_bound,
            "AC-1/mc-1e07": lambda: check_dip_floor(STATED_SLOTS),
            "AC-1/mc-3e10": lambda: check_dip_floor(FLOOR_SLOTS),
            "AC-2/1e07": lambda: check_visibility(self.scan(STATED_SLOTS)),
            "AC-2/1e10": lambda: check_visibility(self.scan(SCAN_SLOTS)),
            "AC-3/1e07": lambda: check_dip_width(self.scan(STATED_SLOTS)),
            "AC-3/1e10": lambda: check_dip_width(self.scan(SCAN_SLOTS)),
            "AC-4": check_pulse_shape,
            "AC-5/1e07": lambda: check_singles(self.scan(STATED_SLOTS)),
            "AC-5/1e10": lambda: check_singles(self.scan(SCAN_SLOTS)),
            "AC-6/pairing": check_pairing_oracle,
            "AC-6/phase-average": check_phase_average_oracle,
            "AC-7": check_pulls,
            "AC-8": check_dark_counts,
        }

    def run(self, check_id: str) -> CheckResult:
        t0 = time.perf_counter()
        try:
            res = self.checks[check_id]()
        except Exception as err:  # a crashed check is a failed check, not a crashed report
            res = CheckResult(check_id, "check raised", False, f"{type(err).__name__}: {err}", "-")
        res.id = check_id
        res.seconds = time.perf_counter() - t0
        return res

    def run_all(self, ids=None) -> list:
        return [self.run(i) for i in (ids or self.checks)]
