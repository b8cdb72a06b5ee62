import math

import pytest

from homdip import optics
from homdip.config import (JITTER_CALIBRATED, PRESETS, ConfigError, ExperimentConfig, ScanOptions,
                           config_from_dict, config_to_dict, detuning_grid, load_preset_document,
                           parse_points, preset, scan_from_dict, scan_to_dict)


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.slot_period == pytest.approx(4 * cfg.clock_bin)
    assert cfg.source_a.fwhm == 120e-12 and cfg.source_a.mu == 1e-3
    assert cfg.detector_1.efficiency == 0.8 and cfg.detector_1.dead_time == 50e-9
    assert cfg.center == pytest.approx(cfg.slot_period / 2)
    assert 1 / cfg.slot_period == pytest.approx(431e6, rel=1e-3)


def test_calibrated_jitter():
    assert JITTER_CALIBRATED == pytest.approx(123.29e-12, abs=0.01e-12)


@pytest.mark.parametrize("doc,path", [
    ({"source_a": {"mu": -1}}, "source_a.mu"),
    ({"source_b": {"fwhm_ps": 0}}, "source_b.fwhm_ps"),
    ({"detector_2": {"efficiency": 1.5}}, "detector_2.efficiency"),
    ({"detector_1": {"jitter": 100}}, "detector_1.jitter"),
    ({"sorce_a": {}}, "sorce_a"),
    ({"n_slots": 0}, "n_slots"),
    ({"n_slots": 10, "duration_s": 1.0}, "duration_s"),
    ({"seed": "x"}, "seed"),
    ({"mode_overlap": [1, 2, 3]}, "mode_overlap"),
    ({"source_a": {"mu": "lots"}}, "source_a.mu"),
])
def test_errors_name_the_key(doc, path):
    with pytest.raises(ConfigError) as err:
        config_from_dict(doc)
    assert err.value.path == path
    assert path in str(err.value)


def test_unit_suffixed_keys_convert_to_si():
    cfg = config_from_dict({"source_a": {"fwhm_ps": 100, "lambda0_nm": 1551},
                            "detector_1": {"dead_time_ns": 20}, "duration_s": 1e-3,
                            "delta_lambda_pm": 12, "mode_overlap": [0.6, 0.8]})
    assert cfg.source_a.fwhm == pytest.approx(100e-12)
    assert cfg.source_a.lambda0 == pytest.approx(1551e-9)
    assert cfg.detector_1.dead_time == pytest.approx(20e-9)
    assert cfg.delta_lambda == pytest.approx(12e-12)
    assert cfg.n_slots == round(1e-3 / 2.32e-9)
    assert cfg.mode_overlap == complex(0.6, 0.8)
    # untouched keys keep their defaults
    assert cfg.source_a.mu == 1e-3 and cfg.source_b.fwhm == 120e-12


def test_null_extinction_is_infinite():
    cfg = config_from_dict({"source_a": {"extinction_db": None}})
    assert math.isinf(cfg.source_a.extinction_db)
    assert config_to_dict(cfg)["source_a"]["extinction_db"] is None


@pytest.mark.parametrize("name", PRESETS)
def test_preset_round_trip(name):
    cfg = preset(name)
    assert config_from_dict(config_to_dict(cfg)) == cfg
    doc = load_preset_document(name)
    opts = scan_from_dict(doc["scan"])
    assert scan_from_dict(scan_to_dict(opts)) == opts
    assert len(opts.detunings) == 41 and opts.detunings[20] == 0.0


def test_presets_differ_only_where_intended():
    paper = preset("paper")
    assert paper == ExperimentConfig(seed=paper.seed)
    assert preset("paper-calibrated").detector_1.jitter_fwhm == pytest.approx(JITTER_CALIBRATED)
    assert math.isinf(preset("ideal").source_b.extinction_db)
    v465 = preset("paper-v465")
    assert v465.mode_overlap != 1.0


def test_v465_preset_hits_target():
    cfg = preset("paper-v465")
    det = math.sqrt(cfg.source_a.fwhm ** 2 + cfg.detector_1.jitter_fwhm ** 2
                    + cfg.detector_1.tag_resolution ** 2)
    frac = optics.gaussian_fraction_within(87.5e-12, det)
    v = optics.expected_visibility(cfg.source_a.mu, cfg.source_b.mu, abs(cfg.mode_overlap),
                                   cfg.source_a.extinction_db, window=175e-12,
                                   period=cfg.slot_period, pulse_fraction=frac)
    assert v == pytest.approx(0.465, abs=1e-5)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


def test_scan_section():
    opts = scan_from_dict({"start_pm": -30, "stop_pm": 30, "points": 5, "window_ps": 400,
                           "post_select_ps": None, "accidental_offsets": [30, 31]})
    assert opts.detunings == (-3e-11, -1.5e-11, 0.0, 1.5e-11, 3e-11)
    assert opts.window == pytest.approx(400e-12)
    assert opts.post_select is None
    assert opts.accidental_offsets == (-31, -30, 30, 31)
    with pytest.raises(ConfigError, match="scan.stop_pm"):
        scan_from_dict({"start_pm": -30, "points": 5})
    with pytest.raises(ConfigError, match="scan.bins"):
        scan_from_dict({"bins": 3})
    with pytest.raises(ConfigError):
        scan_from_dict({"accidental_offset_list": [0, 1]})


def test_detuning_grid_and_points():
    g = detuning_grid(-60e-12, 60e-12, 41)
    assert len(g) == 41 and g[20] == 0.0 and g[1] == -57e-12
    assert parse_points("-60e-12:60e-12:41") == g
    assert detuning_grid(1e-12, 5e-12, 1) == (1e-12,)
    with pytest.raises(ConfigError):
        parse_points("1:2")


def test_scan_options_validation():
    with pytest.raises(ConfigError):
        ScanOptions(detunings=()).validate()
    with pytest.raises(ConfigError):
        ScanOptions(window=0.0).validate()
