import json
import math

import numpy as np
import pytest

from homdip import cli, optics
from homdip.analysis import synthetic_scan
from homdip.config import ExperimentConfig, config_to_dict, preset
from homdip.tags import read_tags, write_tags


def run(*argv):
    return cli.main([str(a) for a in argv])


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "-o", out, "--slots", "1e6", "--seed", "5") == 0
    return out


# --- argument parsing -------------------------------------------------------

def test_quantity_parsers():
    assert cli.time_arg("580ps") == pytest.approx(580e-12)
    assert cli.time_arg("2.32ns") == pytest.approx(2.32e-9)
    assert cli.time_arg("1e-9") == 1e-9
    assert cli.optional_time_arg("none") is None
    assert cli.length_arg("17.7pm") == pytest.approx(17.7e-12)
    assert cli.count_arg("1e7") == 10 ** 7
    g = cli.points_arg("−60e-12:60e-12:41")
    assert len(g) == 41 and g[0] == -60e-12 and g[20] == 0.0
    assert cli.points_arg("-60pm:60pm:41") == g


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv("HOMDIP_THREADS", "3")
    assert cli.default_workers() == 3
    monkeypatch.setenv("HOMDIP_THREADS", "zero")
    with pytest.raises(cli.ConfigError):
        cli.default_workers()


# --- simulate ---------------------------------------------------------------

def test_simulate_outputs_and_manifest(sim):
    m = manifest(sim)
    assert set(m["outputs"]) == {"ch1.htag", "ch2.htag", "run.json"}
    assert m["seed"] == 5 and m["config"]["n_slots"] == 10 ** 6
    assert m["software_version"] and "started" in m["timestamps"]
    assert json.loads((sim / "run.json").read_text())["manifest"] == "manifest.json"
    s1 = read_tags(sim / "ch1.htag")
    assert len(s1) > 0 and s1.is_sorted


def test_simulate_deterministic(sim, tmp_path):
    assert run("simulate", "-o", tmp_path, "--slots", "1e6", "--seed", "5") == 0
    assert manifest(tmp_path)["outputs"] == manifest(sim)["outputs"]


def test_rerun_from_manifest_is_byte_identical(sim, tmp_path):
    assert run("simulate", sim / "manifest.json", "-o", tmp_path) == 0
    a, b = manifest(sim), manifest(tmp_path)
    a.pop("timestamps"), b.pop("timestamps")
    assert a == b
    assert (sim / "ch1.htag").read_bytes() == (tmp_path / "ch1.htag").read_bytes()


def test_seed_changes_digests_only(sim, tmp_path):
    assert run("simulate", "-o", tmp_path, "--slots", "1e6", "--seed", "6") == 0
    a, b = manifest(sim), manifest(tmp_path)
    assert a["outputs"]["ch1.htag"] != b["outputs"]["ch1.htag"]
    ca, cb = a["config"], b["config"]
    ca.pop("seed"), cb.pop("seed")
    assert ca == cb


def test_defaults_equal_paper_preset(tmp_path):
    assert run("simulate", "-o", tmp_path / "a", "--slots", "1000") == 0
    assert run("simulate", "-o", tmp_path / "b", "--slots", "1000", "--preset", "paper") == 0
    ca, cb = manifest(tmp_path / "a")["config"], manifest(tmp_path / "b")["config"]
    assert ca == cb
    expect = config_to_dict(ExperimentConfig(seed=preset("paper").seed, n_slots=1000))
    assert {k: v for k, v in ca.items() if k != "preset"} == expect


def test_config_file_and_csv_format(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "ideal", "source_a": {"mu": 0.002}, "n_slots": 1000}))
    assert run("simulate", cfg, "-o", tmp_path / "o", "--format", "csv") == 0
    c = manifest(tmp_path / "o")["config"]
    assert c["source_a"]["mu"] == 0.002 and c["source_a"]["extinction_db"] is None
    assert (tmp_path / "o" / "ch1.csv").read_text().startswith("channel,time_ps")


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"source_a": {"mu": -0.1}}))
    assert run("simulate", cfg, "-o", tmp_path / "o") == 2
    assert "source_a.mu" in capsys.readouterr().err
    cfg.write_text("{not json")
    assert run("simulate", cfg, "-o", tmp_path / "o") == 2
    hot = tmp_path / "hot.json"
    hot.write_text(json.dumps({"source_a": {"mu": 5}, "source_b": {"mu": 5}}))
    assert run("simulate", hot, "-o", tmp_path / "o") == 2


def test_missing_config_exit_3(tmp_path):
    assert run("simulate", tmp_path / "nope.json", "-o", tmp_path / "o") == 3


# --- scan -------------------------------------------------------------------

SCAN = ("--slots", "1e5", "--seed", "9", "-q", "--workers", "1")


def test_scan_grid_and_outputs(tmp_path):
    assert run("scan", "-o", tmp_path, "--points=−60e-12:60e-12:41", *SCAN) == 0
    doc = json.loads((tmp_path / "scan.json").read_text())
    assert doc["format"] == "homdip-dipscan-1" and doc["manifest"] == "manifest.json"
    dl = [p["delta_lambda_m"] for p in doc["points"]]
    assert len(dl) == 41 and dl[20] == 0.0 and dl[0] == -60e-12
    m = manifest(tmp_path)
    assert len(m["outputs"]) == 42 and m["config"]["scan"]["post_select_ps"] == 175.0


def test_scan_resume_only_recomputes_missing(tmp_path, capsys, monkeypatch):
    assert run("scan", "-o", tmp_path, "--points=-30pm:30pm:5", *SCAN) == 0
    first = (tmp_path / "scan.json").read_bytes()
    (tmp_path / "points" / "point_0002.json").unlink()
    calls = []
    real = cli._run_point
    monkeypatch.setattr(cli, "_run_point", lambda job: calls.append(job[3]) or real(job))
    capsys.readouterr()
    assert run("scan", "-o", tmp_path, "--points=-30pm:30pm:5", *SCAN) == 0
    assert calls == [2]
    assert "resuming: 4/5" in capsys.readouterr().err
    assert (tmp_path / "scan.json").read_bytes() == first


def test_scan_changed_config_invalidates_points(tmp_path, monkeypatch):
    assert run("scan", "-o", tmp_path, "--points=-30pm:30pm:3", *SCAN) == 0
    calls = []
    real = cli._run_point
    monkeypatch.setattr(cli, "_run_point", lambda job: calls.append(job[3]) or real(job))
    assert run("scan", "-o", tmp_path, "--points=-30pm:30pm:3", "--slots", "1e5",
               "--seed", "10", "-q", "--workers", "1") == 0
    assert calls == [0, 1, 2]


def test_scan_interrupt_keeps_partial_state(tmp_path, monkeypatch):
    real = cli._run_point

    def flaky(job):
        if job[3] == 2:
            raise KeyboardInterrupt
        return real(job)

    monkeypatch.setattr(cli, "_run_point", flaky)
    assert run("scan", "-o", tmp_path, "--points=-30pm:30pm:4", *SCAN) == 130
    assert sorted(p.name for p in (tmp_path / "points").iterdir()) == [
        "point_0000.json", "point_0001.json"]
    assert not (tmp_path / "scan.json").exists()
    monkeypatch.setattr(cli, "_run_point", real)
    assert run("scan", "-o", tmp_path, "--points=-30pm:30pm:4", *SCAN) == 0
    assert len(json.loads((tmp_path / "scan.json").read_text())["points"]) == 4


def test_scan_worker_count_does_not_change_output(tmp_path):
    assert run("scan", "-o", tmp_path / "a", "--points=-30pm:30pm:3", *SCAN) == 0
    assert run("scan", "-o", tmp_path / "b", "--points=-30pm:30pm:3", "--slots", "1e5",
               "--seed", "9", "-q", "--workers", "2") == 0
    assert (tmp_path / "a" / "scan.json").read_bytes() == (tmp_path / "b" / "scan.json").read_bytes()


def test_scan_rejects_unsorted_grid(tmp_path):
    assert run("scan", "-o", tmp_path, "--points", "30pm:-30pm:3", *SCAN) == 2


# --- analyze ----------------------------------------------------------------

def test_analyze_tag_pair(sim, tmp_path):
    assert run("analyze", sim / "ch1.htag", sim / "ch2.htag", "-o", tmp_path) == 0
    doc = json.loads((tmp_path / "coincidences.json").read_text())
    assert doc["thresholds"]["window_s"] == pytest.approx(580e-12)
    assert doc["thresholds"]["post_select_s"] == pytest.approx(175e-12)
    assert doc["result"]["singles"][0] < len(read_tags(sim / "ch1.htag"))
    rows = (tmp_path / "histogram.csv").read_text().splitlines()
    assert rows[0] == "delay_ps,counts" and len(rows) > 10


def test_analyze_options_echoed(sim, tmp_path):
    assert run("analyze", sim / "ch1.htag", sim / "ch2.htag", "-o", tmp_path,
               "--post-select", "none", "--window", "1ns") == 0
    doc = json.loads((tmp_path / "coincidences.json").read_text())
    assert doc["thresholds"]["post_select_s"] is None
    assert doc["thresholds"]["window_s"] == pytest.approx(1e-9)
    assert doc["result"]["singles"][0] == len(read_tags(sim / "ch1.htag"))


def test_analyze_single_two_channel_file(sim, tmp_path):
    from homdip.tags import merge
    both = merge(read_tags(sim / "ch1.htag"), read_tags(sim / "ch2.htag"))
    write_tags(both, tmp_path / "both.htag")
    assert run("analyze", tmp_path / "both.htag", "-o", tmp_path / "a", "--post-select", "none") == 0
    assert run("analyze", sim / "ch1.htag", sim / "ch2.htag", "-o", tmp_path / "b",
               "--post-select", "none") == 0
    a = json.loads((tmp_path / "a" / "coincidences.json").read_text())["result"]
    b = json.loads((tmp_path / "b" / "coincidences.json").read_text())["result"]
    assert a == b


def test_analyze_bad_file_exit_3(sim, tmp_path, capsys):
    bad = tmp_path / "bad.htag"
    bad.write_bytes(b"NOPE" + bytes(10))
    assert run("analyze", bad, sim / "ch2.htag", "-o", tmp_path / "o") == 3
    assert "bad.htag" in capsys.readouterr().err
    assert run("analyze", tmp_path / "missing.htag", sim / "ch2.htag", "-o", tmp_path / "o") == 3


def test_analyze_scan_json(tmp_path):
    scan = synthetic_scan(np.linspace(-60e-12, 60e-12, 41), baseline=1e6, visibility=0.465,
                          t_p=optics.tp_from_fwhm(120e-12))
    (tmp_path / "s.json").write_text(json.dumps(scan.to_dict()))
    assert run("analyze", tmp_path / "s.json", "-o", tmp_path / "o", "--normalize", "wings") == 0
    rows = (tmp_path / "o" / "points.csv").read_text().splitlines()
    assert rows[0] == "delta_lambda_pm,normalized_coincidence,sigma" and len(rows) == 42


# --- fit --------------------------------------------------------------------

def _synthetic(tmp_path, rng=None, baseline=1e4):
    scan = synthetic_scan(np.linspace(-60e-12, 60e-12, 41), baseline=baseline, visibility=0.465,
                          t_p=optics.tp_from_fwhm(120e-12), rng=rng)
    path = tmp_path / "scan.json"
    path.write_text(json.dumps(scan.to_dict()))
    return path


def test_fit_noiseless_synthetic(tmp_path, capsys):
    assert run("fit", _synthetic(tmp_path), "-o", tmp_path / "f") == 0
    out = capsys.readouterr().out
    assert "V        = 0.46500 +/- 0.00000" in out
    assert (tmp_path / "f" / "report.txt").read_text() == out
    fit = json.loads((tmp_path / "f" / "fit.json").read_text())["fit"]
    assert fit["t_p_s"] == pytest.approx(optics.tp_from_fwhm(120e-12), rel=1e-6)
    rows = (tmp_path / "f" / "plot.csv").read_text().splitlines()
    assert rows[0] == "delta_lambda_pm,normalized_coincidence,sigma,model_value"


def test_fit_bootstrap_flag(tmp_path, capsys):
    path = _synthetic(tmp_path, np.random.default_rng(1), baseline=2000.0)
    assert run("fit", path, "-o", tmp_path / "a") == 0
    assert "boot" not in capsys.readouterr().out
    assert run("fit", path, "-o", tmp_path / "b", "--bootstrap", "100") == 0
    assert "V (boot) sigma" in capsys.readouterr().out
    doc = json.loads((tmp_path / "b" / "fit.json").read_text())
    assert doc["bootstrap"]["resamples"] == 100 and doc["bootstrap"]["sigma"] > 0


def test_fit_points_csv_round_trip(tmp_path):
    path = _synthetic(tmp_path, np.random.default_rng(2))
    assert run("fit", path, "-o", tmp_path / "a") == 0
    assert run("fit", tmp_path / "a" / "plot.csv", "-o", tmp_path / "b") == 0
    va = json.loads((tmp_path / "a" / "fit.json").read_text())["fit"]["visibility"]
    vb = json.loads((tmp_path / "b" / "fit.json").read_text())["fit"]["visibility"]
    assert vb == pytest.approx(va, abs=1e-6)
    assert run("fit", tmp_path / "a" / "plot.csv", "-o", tmp_path / "c", "--bootstrap", "100") == 2


def test_fit_failure_exit_4_with_table(tmp_path, capsys):
    bad = tmp_path / "nan.csv"
    bad.write_text("delta_lambda_pm,normalized_coincidence,sigma\n"
                   + "".join(f"{x},nan,0.1\n" for x in range(-10, 11)))
    assert run("fit", bad, "-o", tmp_path / "o") == 4
    err = capsys.readouterr().err
    assert "fit failed" in err and "init" in err


def test_fit_shipped_example(tmp_path, capsys):
    assert run("fit", "--example", "-o", tmp_path, "--bootstrap", "500") == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    v, s = fit["fit"]["visibility"], fit["fit"]["sigma_visibility"]
    assert abs(v - 0.465) <= 2 * math.hypot(s, 0.008)
    assert fit["bootstrap"]["sigma"] == pytest.approx(s, rel=0.3)


def test_example_dataset_has_manifest():
    root = cli.example_dataset().parent
    m = manifest(root)
    assert m["command"] == "scan" and m["config"]["preset"] == "paper-v465"
    assert m["outputs"]["scan.json"] == cli.sha256_file(root / "scan.json")
    assert len(m["outputs"]) == 42


# --- report -----------------------------------------------------------------

def test_report_subset(capsys, tmp_path):
    assert run("report", "--only", "AC-1/analytic", "AC-6/phase-average",
               "--json", tmp_path / "r.json") == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
    assert len(json.loads((tmp_path / "r.json").read_text())["results"]) == 2


def test_report_unknown_id():
    assert run("report", "--only", "AC-99") == 2


def test_report_list(capsys):
    assert run("report", "--list") == 0
    ids = capsys.readouterr().out.split()
    assert "AC-8" in ids and "AC-2/1e10" in ids
