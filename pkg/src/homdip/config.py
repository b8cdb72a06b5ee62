"""Experiment configuration: dataclasses, JSON mapping and named presets.

JSON documents use unit-suffixed keys (``fwhm_ps``, ``dark_rate_hz``...);
the dataclasses hold SI base units. Unknown keys are errors.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

JITTER_NOMINAL = 100e-12
# detected 175 ps = sqrt(120^2 + jitter^2 + 32^2) ps
JITTER_CALIBRATED = math.sqrt(175.0 ** 2 - 120.0 ** 2 - 32.0 ** 2) * 1e-12


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class PulseSourceConfig:
    lambda0: float = 1550e-9
    fwhm: float = 120e-12
    mu: float = 1e-3
    extinction_db: float = 20.0

    def validate(self, path="source"):
        if not self.lambda0 > 0:
            raise ConfigError(f"{path}.lambda0_nm", "must be > 0")
        if not self.fwhm > 0:
            raise ConfigError(f"{path}.fwhm_ps", "must be > 0")
        if not self.mu >= 0:
            raise ConfigError(f"{path}.mu", "must be >= 0")
        if not self.extinction_db > 0:
            raise ConfigError(f"{path}.extinction_db", "must be > 0")
        return self


@dataclass
class DetectorModel:
    efficiency: float = 0.80
    jitter_fwhm: float = JITTER_NOMINAL
    dark_rate: float = 500.0
    dead_time: float = 50e-9
    tag_resolution: float = 32e-12

    def validate(self, path="detector"):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError(f"{path}.efficiency", "must lie in [0, 1]")
        for key, val, unit in (("jitter_fwhm", self.jitter_fwhm, "_ps"),
                               ("dark_rate", self.dark_rate, "_hz"),
                               ("dead_time", self.dead_time, "_ns")):
            if not val >= 0:
                raise ConfigError(f"{path}.{key}{unit}", "must be >= 0")
        if not self.tag_resolution > 0:
            raise ConfigError(f"{path}.tag_resolution_ps", "must be > 0")
        return self


@dataclass
class ExperimentConfig:
    source_a: PulseSourceConfig = field(default_factory=PulseSourceConfig)
    source_b: PulseSourceConfig = field(default_factory=PulseSourceConfig)
    detector_1: DetectorModel = field(default_factory=DetectorModel)
    detector_2: DetectorModel = field(default_factory=DetectorModel)
    slot_period: float = 2.32e-9
    clock_bin: float = 580e-12
    n_slots: int = 10_000_000
    delta_lambda: float = 0.0
    timing_offset: float = 0.0
    mode_overlap: complex = 1.0
    pulse_center: float | None = None
    seed: int = 0

    def validate(self):
        self.source_a.validate("source_a")
        self.source_b.validate("source_b")
        self.detector_1.validate("detector_1")
        self.detector_2.validate("detector_2")
        if not self.slot_period > 0:
            raise ConfigError("slot_period_ps", "must be > 0")
        if not self.clock_bin > 0:
            raise ConfigError("clock_bin_ps", "must be > 0")
        if not (isinstance(self.n_slots, int) and self.n_slots >= 1):
            raise ConfigError("n_slots", "must be an integer >= 1")
        if abs(self.mode_overlap) > 1.0 + 1e-12:
            raise ConfigError("mode_overlap", "magnitude must be <= 1")
        if self.detector_1.tag_resolution != self.detector_2.tag_resolution:
            raise ConfigError("detector_2.tag_resolution_ps", "both channels share one tagger")
        if self.pulse_center is not None and not 0 <= self.pulse_center < self.slot_period:
            raise ConfigError("pulse_center_ps", "must lie inside the slot")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        return self

    @property
    def duration(self) -> float:
        return self.n_slots * self.slot_period

    @property
    def center(self) -> float:
        return 0.5 * self.slot_period if self.pulse_center is None else self.pulse_center

    @property
    def resolution(self) -> float:
        return self.detector_1.tag_resolution


@dataclass
class ScanOptions:
    """Detuning grid and the counting pipeline applied to every scan point."""

    detunings: tuple = tuple(x * 1e-12 for x in range(-60, 61, 3))
    window: float = 580e-12
    post_select: float | None = 175e-12
    accidental_offsets: tuple = tuple(k for k in range(-40, 41) if abs(k) >= 25)

    def validate(self):
        if len(self.detunings) == 0:
            raise ConfigError("scan.points", "detuning list is empty")
        if not self.window > 0:
            raise ConfigError("scan.window_ps", "must be > 0")
        if self.post_select is not None and not self.post_select > 0:
            raise ConfigError("scan.post_select_ps", "must be > 0")
        if 0 in self.accidental_offsets or not self.accidental_offsets:
            raise ConfigError("scan.accidental_offsets", "need non-zero slot offsets")
        return self


# --------------------------------------------------------------------------
# JSON mapping: (json key, attribute, scale to SI)

_SOURCE_KEYS = [("lambda0_nm", "lambda0", 1e-9), ("fwhm_ps", "fwhm", 1e-12),
                ("mu", "mu", 1.0), ("extinction_db", "extinction_db", 1.0)]
_DETECTOR_KEYS = [("efficiency", "efficiency", 1.0), ("jitter_fwhm_ps", "jitter_fwhm", 1e-12),
                  ("dark_rate_hz", "dark_rate", 1.0), ("dead_time_ns", "dead_time", 1e-9),
                  ("tag_resolution_ps", "tag_resolution", 1e-12)]
_EXPERIMENT_KEYS = [("slot_period_ps", "slot_period", 1e-12), ("clock_bin_ps", "clock_bin", 1e-12),
                    ("delta_lambda_pm", "delta_lambda", 1e-12),
                    ("timing_offset_ps", "timing_offset", 1e-12),
                    ("pulse_center_ps", "pulse_center", 1e-12)]
_SUBSECTIONS = {"source_a": (PulseSourceConfig, _SOURCE_KEYS),
                "source_b": (PulseSourceConfig, _SOURCE_KEYS),
                "detector_1": (DetectorModel, _DETECTOR_KEYS),
                "detector_2": (DetectorModel, _DETECTOR_KEYS)}
_SCAN_KEYS = {"start_pm", "stop_pm", "points", "detunings_pm", "window_ps", "post_select_ps",
              "accidental_offsets", "accidental_offset_list"}


def _num(val, path, allow_none=False):
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(path, f"expected a number, got {val!r}")
    return float(val)


def _si(x, scale):
    if x is None:
        return None
    return x if scale == 1.0 else float(f"{x / scale:.12g}")


def _from_unit(x, scale):
    # 1550 nm * 1e-9 would otherwise come out as 1.5500000000000002e-06
    return x if scale == 1.0 else float(f"{x * scale:.15g}")


def _check_keys(doc, allowed, path):
    if not isinstance(doc, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _section_from_dict(cls, keys, doc, path):
    _check_keys(doc, {k for k, _, _ in keys}, path)
    kw = {}
    for key, attr, scale in keys:
        if key in doc:
            if key == "extinction_db" and doc[key] is None:
                kw[attr] = math.inf
                continue
            kw[attr] = _from_unit(_num(doc[key], f"{path}.{key}"), scale)
    return cls(**kw).validate(path)


def config_from_dict(doc: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a JSON document.

    Keys absent from ``doc`` keep the values of ``base`` (default: paper preset).
    """
    doc = dict(doc)
    doc.pop("scan", None)
    doc.pop("preset", None)
    allowed = set(_SUBSECTIONS) | {k for k, _, _ in _EXPERIMENT_KEYS} | {
        "n_slots", "duration_s", "mode_overlap", "seed"}
    _check_keys(doc, allowed, "")
    cfg = copy.deepcopy(base) if base is not None else ExperimentConfig()
    for name, (cls, keys) in _SUBSECTIONS.items():
        if name in doc:
            merged = {**section_to_dict(getattr(cfg, name), keys), **doc[name]} \
                if isinstance(doc[name], dict) else doc[name]
            setattr(cfg, name, _section_from_dict(cls, keys, merged, name))
    for key, attr, scale in _EXPERIMENT_KEYS:
        if key in doc:
            val = _num(doc[key], key, allow_none=(key == "pulse_center_ps"))
            setattr(cfg, attr, None if val is None else _from_unit(val, scale))
    if "n_slots" in doc and "duration_s" in doc:
        raise ConfigError("duration_s", "give n_slots or duration_s, not both")
    if "n_slots" in doc:
        n = doc["n_slots"]
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("n_slots", "must be an integer >= 1")
        cfg.n_slots = n
    if "duration_s" in doc:
        d = _num(doc["duration_s"], "duration_s")
        if not d > 0:
            raise ConfigError("duration_s", "must be > 0")
        cfg.n_slots = max(1, int(round(d / cfg.slot_period)))
    if "mode_overlap" in doc:
        o = doc["mode_overlap"]
        if isinstance(o, list):
            if len(o) != 2:
                raise ConfigError("mode_overlap", "expected [re, im]")
            o = complex(_num(o[0], "mode_overlap[0]"), _num(o[1], "mode_overlap[1]"))
        else:
            o = complex(_num(o, "mode_overlap"))
        cfg.mode_overlap = o
    if "seed" in doc:
        s = doc["seed"]
        if isinstance(s, bool) or not isinstance(s, int):
            raise ConfigError("seed", "must be an integer")
        cfg.seed = s
    return cfg.validate()


def section_to_dict(obj, keys):
    out = {}
    for key, attr, scale in keys:
        val = getattr(obj, attr)
        if key == "extinction_db" and math.isinf(val):
            out[key] = None
        else:
            out[key] = _si(val, scale)
    return out


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {name: section_to_dict(getattr(cfg, name), keys)
           for name, (_, keys) in _SUBSECTIONS.items()}
    for key, attr, scale in _EXPERIMENT_KEYS:
        out[key] = _si(getattr(cfg, attr), scale)
    out["n_slots"] = cfg.n_slots
    o = complex(cfg.mode_overlap)
    out["mode_overlap"] = [o.real, o.imag]
    out["seed"] = int(cfg.seed)
    return out


def scan_from_dict(doc: dict | None) -> ScanOptions:
    doc = dict(doc or {})
    _check_keys(doc, _SCAN_KEYS, "scan")
    opts = ScanOptions()
    if {"start_pm", "stop_pm", "points"} & set(doc):
        try:
            start, stop, n = doc["start_pm"], doc["stop_pm"], doc["points"]
        except KeyError as err:
            raise ConfigError(f"scan.{err.args[0]}", "start_pm, stop_pm and points go together")
        n = int(_num(n, "scan.points"))
        if n < 1:
            raise ConfigError("scan.points", "must be >= 1")
        opts.detunings = detuning_grid(_num(start, "scan.start_pm") * 1e-12,
                                       _num(stop, "scan.stop_pm") * 1e-12, n)
    if "detunings_pm" in doc:
        if {"start_pm", "stop_pm", "points"} & set(doc):
            raise ConfigError("scan.detunings_pm", "give detunings_pm or start_pm/stop_pm/points")
        grid = doc["detunings_pm"]
        if not isinstance(grid, list) or not grid:
            raise ConfigError("scan.detunings_pm", "expected a non-empty list")
        opts.detunings = tuple(float(f"{_num(x, f'scan.detunings_pm[{i}]') * 1e-12:.12g}")
                               for i, x in enumerate(grid))
    if "window_ps" in doc:
        opts.window = _num(doc["window_ps"], "scan.window_ps") * 1e-12
    if "post_select_ps" in doc:
        v = _num(doc["post_select_ps"], "scan.post_select_ps", allow_none=True)
        opts.post_select = None if v is None else v * 1e-12
    if "accidental_offsets" in doc and "accidental_offset_list" in doc:
        raise ConfigError("scan.accidental_offset_list",
                          "give accidental_offsets or accidental_offset_list")
    if "accidental_offsets" in doc:
        rng = doc["accidental_offsets"]
        if not isinstance(rng, list) or len(rng) != 2:
            raise ConfigError("scan.accidental_offsets", "expected [min |k|, max |k|]")
        lo, hi = (int(_num(v, f"scan.accidental_offsets[{i}]")) for i, v in enumerate(rng))
        opts.accidental_offsets = tuple(k for k in range(-hi, hi + 1) if abs(k) >= lo)
    if "accidental_offset_list" in doc:
        ks = doc["accidental_offset_list"]
        if not isinstance(ks, list):
            raise ConfigError("scan.accidental_offset_list", "expected a list of integers")
        opts.accidental_offsets = tuple(int(_num(v, f"scan.accidental_offset_list[{i}]"))
                                        for i, v in enumerate(ks))
    return opts.validate()


def scan_to_dict(opts: ScanOptions) -> dict:
    return {
        "detunings_pm": [_si(x, 1e-12) for x in opts.detunings],
        "window_ps": _si(opts.window, 1e-12),
        "post_select_ps": _si(opts.post_select, 1e-12),
        "accidental_offset_list": list(opts.accidental_offsets),
    }


def detuning_grid(start: float, stop: float, n: int) -> tuple:
    if n == 1:
        return (start,)
    step = (stop - start) / (n - 1)
    # snap to the grid so that the centre point is an exact zero
    return tuple(float(f"{start + i * step:.12g}") for i in range(n))


def parse_points(spec: str) -> tuple:
    """Parse ``"start:stop:n"`` (meters) into a detuning grid."""
    try:
        start, stop, n = spec.split(":")
        return detuning_grid(float(start), float(stop), int(n))
    except ValueError as err:
        raise ConfigError("--points", f"expected start:stop:n, got {spec!r}") from err


# --------------------------------------------------------------------------
# presets

PRESETS = ("paper", "paper-calibrated", "ideal", "paper-v465")


def load_preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("homdip.data").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def preset(name: str) -> ExperimentConfig:
    return config_from_dict(load_preset_document(name))


def with_jitter(cfg: ExperimentConfig, jitter: float) -> ExperimentConfig:
    return replace(cfg, detector_1=replace(cfg.detector_1, jitter_fwhm=jitter),
                   detector_2=replace(cfg.detector_2, jitter_fwhm=jitter))
