"""Command-line entry point: ``homdip simulate | scan | analyze | fit | report``.

Exit codes: 0 success, 2 configuration or argument error, 3 I/O or file-format
error, 4 numerical failure (including failed acceptance checks). Every output
directory gets a ``manifest.json`` holding the full effective configuration,
the seed, the software version and SHA-256 digests of inputs and outputs.
Wall-clock times are kept in the manifest's ``timestamps`` field only, so
re-running from a manifest reproduces every other byte.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, optics, tags
from .analysis import (STRATEGIES, DipNotCapturedError, FitError, NormalizedPoints,
                       bootstrap_uncertainty, dip_halfwidth, fit_dip, normalize_dip,
                       read_points_csv, write_plot_csv)
from .config import (PRESETS, ConfigError, config_from_dict, config_to_dict, detuning_grid,
                     load_preset_document, scan_from_dict, scan_to_dict)
from .montecarlo import (SEED_SCHEME, DipScan, SaturationError, ScanPoint, _run_point,
                         scan_lambda0, scan_point_config, scan_provenance, simulate_run)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST_FORMAT = "homdip-manifest-1"
MANIFEST = "manifest.json"

_TIME_UNITS = {"fs": 1e-15, "ps": 1e-12, "ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0}
_LENGTH_UNITS = {"pm": 1e-12, "nm": 1e-9, "um": 1e-6, "m": 1.0}
_GRID_KEYS = {"start_pm", "stop_pm", "points", "detunings_pm"}
_OFFSET_KEYS = {"accidental_offsets", "accidental_offset_list"}


# --------------------------------------------------------------------------
# argument parsing helpers


def _quantity(text: str, units: dict) -> float:
    t = text.strip().replace("−", "-")
    for suffix in sorted(units, key=len, reverse=True):
        if t.endswith(suffix):
            return float(t[:-len(suffix)]) * units[suffix]
    return float(t)


def time_arg(text: str) -> float:
    """Time with optional unit suffix (``580ps``, ``2.32ns``); bare numbers are seconds."""
    try:
        return _quantity(text, _TIME_UNITS)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a time: {text!r}") from None


def optional_time_arg(text: str):
    return None if text.strip().lower() in ("none", "off", "0") else time_arg(text)


def length_arg(text: str) -> float:
    """Length with optional unit suffix (``12pm``); bare numbers are meters."""
    try:
        return _quantity(text, _LENGTH_UNITS)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a length: {text!r}") from None


def count_arg(text: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a count: {text!r}") from None
    if not v.is_integer() or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def points_arg(text: str) -> tuple:
    """``start:stop:n`` with lengths as in :func:`length_arg`."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:n, got {text!r}")
    start, stop = length_arg(parts[0]), length_arg(parts[1])
    return detuning_grid(start, stop, count_arg(parts[2]))


def default_workers() -> int:
    env = os.environ.get("HOMDIP_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("HOMDIP_THREADS", f"expected an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("HOMDIP_THREADS", "must be >= 1")
        return n
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# files, digests, manifests


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    """Write canonical JSON atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(_dumps(obj))
    os.replace(tmp, path)


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(str(path), f"invalid JSON: {err}") from None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def build_manifest(command: str, config: dict | None, out_dir: Path, outputs: list,
                   inputs: list = (), started: str | None = None, **extra) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "command": command,
        "software_version": __version__,
        "seed_scheme": SEED_SCHEME,
        "seed": None if config is None else config.get("seed"),
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {name: sha256_file(out_dir / name) for name in sorted(outputs)},
        **extra,
        "timestamps": {"started": started or _now(), "finished": _now()},
    }


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# configuration


def _merge_scan(base: dict, over: dict) -> dict:
    merged = dict(base)
    if _GRID_KEYS & set(over):
        merged = {k: v for k, v in merged.items() if k not in _GRID_KEYS}
    if _OFFSET_KEYS & set(over):
        merged = {k: v for k, v in merged.items() if k not in _OFFSET_KEYS}
    merged.update(over)
    return merged


def load_config(path=None, preset_name=None):
    """Effective ``(ExperimentConfig, ScanOptions, preset name)``.

    ``path`` may be a config document or a manifest; keys it leaves out
    come from the preset (``--preset``, else the document's ``preset``
    key, else ``paper``).
    """
    doc = {}
    if path is not None:
        doc = read_json(path)
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "expected an object")
        if doc.get("format") == MANIFEST_FORMAT:
            doc = doc.get("config") or {}
    name = preset_name or doc.get("preset") or "paper"
    base = load_preset_document(name)
    cfg = config_from_dict(doc, config_from_dict(base))
    scan_doc = doc.get("scan") or {}
    if not isinstance(scan_doc, dict):
        raise ConfigError("scan", "expected an object")
    opts = scan_from_dict(_merge_scan(base.get("scan") or {}, scan_doc))
    return cfg, opts, name


def _config_doc(cfg, name, opts=None) -> dict:
    doc = {"preset": name, **config_to_dict(cfg)}
    if opts is not None:
        doc["scan"] = scan_to_dict(opts)
    return doc


def _apply_run_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "slots", None) is not None:
        cfg = replace(cfg, n_slots=args.slots)
    if getattr(args, "duration", None) is not None:
        if not args.duration > 0:
            raise ConfigError("--duration", "must be > 0")
        cfg = replace(cfg, n_slots=max(1, round(args.duration / cfg.slot_period)))
    return cfg.validate()


def _apply_count_overrides(opts, args):
    opts = copy.copy(opts)
    if getattr(args, "window", None) is not None:
        opts.window = args.window
    if hasattr(args, "post_select"):
        opts.post_select = args.post_select
    if getattr(args, "points", None) is not None:
        opts.detunings = args.points
    return opts.validate()


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    started = _now()
    cfg, opts, name = load_config(args.config, args.preset)
    cfg = _apply_run_overrides(cfg, args)
    if args.delta_lambda is not None:
        cfg = replace(cfg, delta_lambda=args.delta_lambda)
    out = _out_dir(args.out)
    s1, s2, meta = simulate_run(cfg, workers=args.workers or 1)
    ext = "csv" if args.format == "csv" else "htag"
    names = [f"ch1.{ext}", f"ch2.{ext}"]
    for s, fn in zip((s1, s2), names):
        (tags.write_tags_csv if ext == "csv" else tags.write_tags)(s, out / fn)
    write_json(out / "run.json", {**meta.to_dict(), "manifest": MANIFEST})
    config_doc = _config_doc(cfg, name)
    write_json(out / MANIFEST, build_manifest("simulate", config_doc, out, names + ["run.json"],
                                              started=started))
    print(f"simulated {cfg.n_slots} slots: {len(s1)} + {len(s2)} tags -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# scan


def _point_digest(pcfg, opts) -> str:
    counting = scan_to_dict(opts)
    counting.pop("detunings_pm")
    doc = {"config": config_to_dict(pcfg), "counting": counting, "seed_scheme": SEED_SCHEME,
           "software_version": __version__}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _load_point(path: Path, digest: str):
    try:
        doc = read_json(path)
        if doc.get("digest") == digest:
            return ScanPoint.from_dict(doc["point"])
    except (OSError, ConfigError, KeyError, TypeError, ValueError):
        pass
    return None


def cmd_scan(args) -> int:
    started = _now()
    cfg, opts, name = load_config(args.config, args.preset)
    cfg = _apply_run_overrides(cfg, args)
    opts = _apply_count_overrides(opts, args)
    if any(b <= a for a, b in zip(opts.detunings, opts.detunings[1:])):
        raise ConfigError("--points", "detunings must be strictly increasing")
    out = _out_dir(args.out)
    pdir = out / "points"
    pdir.mkdir(exist_ok=True)

    points, todo, files = {}, [], []
    for i, dl in enumerate(opts.detunings):
        digest = _point_digest(scan_point_config(cfg, dl, i), opts)
        path = pdir / f"point_{i:04d}.json"
        files.append((path, digest))
        p = _load_point(path, digest)
        if p is None:
            todo.append(i)
        else:
            points[i] = p
    n = len(opts.detunings)
    if points:
        print(f"resuming: {len(points)}/{n} points already done", file=sys.stderr)

    def save(i, p):
        points[i] = p
        path, digest = files[i]
        write_json(path, {"index": i, "digest": digest, "point": p.to_dict(),
                          "config": config_to_dict(scan_point_config(cfg, opts.detunings[i], i))})
        if not args.quiet:
            print(f"point {i + 1}/{n} done ({len(points)}/{n})", file=sys.stderr)

    workers = args.workers or default_workers()
    jobs = {i: (cfg, opts, opts.detunings[i], i) for i in todo}
    try:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(min(workers, len(todo))) as pool:
                futures = {pool.submit(_run_point, jobs[i]): i for i in todo}
                try:
                    for fut in as_completed(futures):
                        save(futures[fut], fut.result())
                except BaseException:
                    for f in futures:
                        f.cancel()
                    raise
        else:
            for i in todo:
                save(i, _run_point(jobs[i]))
    except KeyboardInterrupt:
        print(f"interrupted: {len(points)}/{n} points saved in {pdir}; re-run to resume",
              file=sys.stderr)
        return 130

    scan = DipScan([points[i] for i in range(n)], scan_lambda0(cfg), scan_provenance(cfg, opts))
    write_json(out / "scan.json", {**scan.to_dict(), "manifest": MANIFEST})
    outputs = ["scan.json"] + [f"points/{p.name}" for p, _ in files]
    write_json(out / MANIFEST, build_manifest("scan", _config_doc(cfg, name, opts), out, outputs,
                                              started=started))
    print(f"scan of {n} points ({len(todo)} simulated) -> {out / 'scan.json'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# analyze


def read_stream(path) -> tags.TimeTagStream:
    path = Path(path)
    try:
        if path.suffix.lower() == ".csv":
            return tags.read_tags_csv(path)
        return tags.read_tags(path)
    except tags.TagFormatError as err:
        raise type(err)(f"{path}: {err}") from err


def _stream_pair(paths):
    if len(paths) == 2:
        return read_stream(paths[0]), read_stream(paths[1])
    s = read_stream(paths[0])
    chans = np.unique(s.channels)
    if chans.size < 2:
        raise tags.TagFormatError(f"{paths[0]}: need two channels, found {chans.tolist()}")
    return s.channel(int(chans[0])), s.channel(int(chans[1]))


def _analyze_scan(args, out, started) -> int:
    scan = DipScan.from_dict(read_json(args.inputs[0]))
    pts = normalize_dip(scan, args.normalize)
    with open(out / "points.csv", "w") as fh:
        fh.write("delta_lambda_pm,normalized_coincidence,sigma\n")
        for x, y, s in zip(pts.delta_lambda, pts.value, pts.sigma):
            fh.write(f"{x * 1e12:.6g},{y:.10g},{s:.10g}\n")
    meta = {"strategy": pts.strategy, "baseline": pts.baseline,
            "baseline_sigma": pts.baseline_sigma, "n_points": len(pts), "manifest": MANIFEST}
    write_json(out / "analysis.json", meta)
    write_json(out / MANIFEST, build_manifest("analyze", None, out, ["points.csv", "analysis.json"],
                                              inputs=args.inputs, started=started,
                                              thresholds={"normalize": args.normalize}))
    print(f"normalized {len(pts)} points ({pts.strategy}) -> {out / 'points.csv'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    started = _now()
    out = _out_dir(args.out)
    if len(args.inputs) > 2:
        raise ConfigError("inputs", "give one scan JSON, one two-channel tag file or two tag files")
    if len(args.inputs) == 1 and Path(args.inputs[0]).suffix.lower() == ".json":
        return _analyze_scan(args, out, started)

    _, opts, _ = load_config(None, "paper")
    window = opts.window if args.window is None else args.window
    post = getattr(args, "post_select", opts.post_select)
    period = args.slot_period
    s1, s2 = _stream_pair(args.inputs)
    centers = [None, None]
    if post is not None:
        s1, centers[0] = tags.post_select_pulse(s1, period, post)
        s2, centers[1] = tags.post_select_pulse(s2, period, post)
    res = tags.count_coincidences(s1, s2, window, hist_bin=args.hist_bin,
                                  hist_range=args.hist_range)
    acc = [tags.coincidence_count(s1, s2, window, offset=k * period)
           for k in opts.accidental_offsets]
    acc_mean = float(np.mean(acc))
    thresholds = {"window_s": window, "post_select_s": post, "slot_period_s": period,
                  "hist_bin_s": args.hist_bin or s1.resolution,
                  "hist_range_s": args.hist_range or max(4 * window, s1.resolution),
                  "accidental_offsets": list(opts.accidental_offsets)}
    result = res.to_dict()
    centers_s, counts = result.pop("histogram").values()
    doc = {"result": result, "thresholds": thresholds, "pulse_centers_s": centers,
           "accidentals_per_offset": acc_mean,
           "normalized_coincidence": res.count / acc_mean if acc_mean > 0 else None,
           "inputs": [str(p) for p in args.inputs], "manifest": MANIFEST}
    write_json(out / "coincidences.json", doc)
    with open(out / "histogram.csv", "w") as fh:
        fh.write("delay_ps,counts\n")
        for c, k in zip(centers_s, counts):
            fh.write(f"{c * 1e12:.6g},{k}\n")
    write_json(out / MANIFEST, build_manifest("analyze", None, out,
                                              ["coincidences.json", "histogram.csv"],
                                              inputs=args.inputs, started=started,
                                              thresholds=thresholds))
    norm = doc["normalized_coincidence"]
    print(f"coincidences {res.count} (singles {res.singles[0]}, {res.singles[1]}; "
          f"accidentals/offset {acc_mean:.2f}; normalized "
          f"{'n/a' if norm is None else f'{norm:.4f}'}) -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# fit


def example_dataset() -> Path:
    """Path of the shipped example scan."""
    return Path(str(resources.files("homdip.data").joinpath("example", "scan.json")))


def format_report(fit, pts: NormalizedPoints, boot=None) -> str:
    hw = dip_halfwidth(fit.t_p, fit.lambda0)
    lines = [
        f"HOM dip fit: {len(pts)} points, normalization {pts.strategy}",
        f"  V        = {fit.visibility:.5f} +/- {fit.sigma_visibility:.5f}",
    ]
    if boot is not None:
        lines.append(f"  V (boot) sigma = {boot.sigma:.5f} from {boot.values.size} resamples"
                     f" ({boot.n_failed} failed)")
    lines += [
        f"  t_p      = {fit.t_p * 1e12:.3f} +/- {fit.sigma_t_p * 1e12:.3f} ps"
        f" (pulse FWHM {optics.fwhm_from_tp(fit.t_p) * 1e12:.1f} ps,"
        f" dip 1/e half-width {hw * 1e12:.3f} pm)",
        f"  center   = {fit.center * 1e12:.4f} +/- {fit.sigma_center * 1e12:.4f} pm",
        f"  baseline = {fit.baseline:.6g} +/- {fit.sigma_baseline:.3g}",
        f"  chi2/dof = {fit.chi2:.3f}/{fit.dof} = {fit.reduced_chi2:.3f}",
        f"  flags    = {', '.join(fit.flags) if fit.flags else 'none'}",
    ]
    return "\n".join(lines) + "\n"


def format_starts(starts) -> str:
    rows = ["start  init (A, V, t_p ps, x0 pm) -> final                chi2        conv  iter"]
    for i, s in enumerate(starts):
        init = ", ".join(f"{v:.4g}" for v in s["init"])
        fin = ", ".join(f"{v:.4g}" for v in s["final"])
        rows.append(f"{i:5d}  ({init}) -> ({fin})  {s['chi2']:.6g}  {s['converged']!s:5}"
                    f" {s['iterations']}")
    return "\n".join(rows) + "\n"


def cmd_fit(args) -> int:
    started = _now()
    src = example_dataset() if args.example else args.input
    if src is None:
        raise ConfigError("input", "give a scan JSON or points CSV, or --example")
    src = Path(src)
    out = _out_dir(args.out)
    scan = None
    if src.suffix.lower() == ".csv":
        if args.bootstrap:
            raise ConfigError("--bootstrap", "needs a scan JSON input (raw counts)")
        pts = read_points_csv(src)
        lambda0 = args.lambda0
    else:
        scan = DipScan.from_dict(read_json(src))
        pts = normalize_dip(scan, args.normalize)
        lambda0 = scan.lambda0
    try:
        fit = fit_dip(pts, lambda0, fwhm_hint=args.fwhm_hint)
    except FitError as err:
        sys.stderr.write(f"homdip: fit failed: {err}\n{format_starts(err.starts)}")
        return EXIT_NUMERIC
    boot = None
    if args.bootstrap:
        boot = bootstrap_uncertainty(scan, args.bootstrap, seed=args.seed,
                                     strategy=args.normalize, fwhm_hint=args.fwhm_hint)
        fit.bootstrap_sigma = boot.sigma
    report = format_report(fit, pts, boot)
    doc = {"fit": fit.to_dict(), "normalization": pts.strategy, "n_points": len(pts),
           "bootstrap": None if boot is None else {"resamples": args.bootstrap, "seed": args.seed,
                                                   "sigma": boot.sigma, "failed": boot.n_failed},
           "input": str(src), "manifest": MANIFEST}
    write_json(out / "fit.json", doc)
    (out / "report.txt").write_text(report)
    write_plot_csv(out / "plot.csv", pts, fit)
    write_json(out / MANIFEST, build_manifest("fit", None, out, ["fit.json", "report.txt", "plot.csv"],
                                              inputs=[src], started=started,
                                              options={"normalize": args.normalize,
                                                       "bootstrap": args.bootstrap,
                                                       "seed": args.seed,
                                                       "fwhm_hint_s": args.fwhm_hint}))
    sys.stdout.write(report)
    if not fit.converged:
        sys.stderr.write(f"homdip: fit did not converge\n{format_starts(fit.starts)}")
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    from .acceptance import Suite

    suite = Suite(workers=args.workers or default_workers())
    ids = args.only or list(suite.checks)
    unknown = [i for i in ids if i not in suite.checks]
    if unknown:
        raise ConfigError("--only", f"unknown check(s) {unknown}; choose from {list(suite.checks)}")
    if args.list:
        print("\n".join(suite.checks))
        return EXIT_OK
    results = []
    for i in ids:
        r = suite.run(i)
        results.append(r)
        print(r.line(), flush=True)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} checks passed")
    if args.json:
        write_json(args.json, {"software_version": __version__,
                               "results": [r.to_dict() for r in results],
                               "timestamps": {"finished": _now()}})
    return EXIT_OK if n_pass == len(results) else EXIT_NUMERIC


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homdip", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"homdip {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("config", nargs="?", help="config JSON or manifest (default: preset only)")
        sp.add_argument("--preset", choices=PRESETS, default=None,
                        help="base preset for keys the config leaves out (default: paper)")
        sp.add_argument("-o", "--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--slots", type=count_arg, default=None, help="slots per run (e.g. 1e7)")
        g.add_argument("--duration", type=time_arg, default=None, help="run length (e.g. 10s)")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: HOMDIP_THREADS or CPU count)")

    s = sub.add_parser("simulate", help="simulate one run and write time tags")
    config_args(s)
    s.add_argument("--delta-lambda", type=length_arg, default=None, help="detuning (e.g. 10pm)")
    s.add_argument("--format", choices=("htag", "csv"), default="htag")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("scan", help="simulate a detuning scan (resumable)")
    config_args(s)
    s.add_argument("--points", type=points_arg, default=None,
                   help="detuning grid start:stop:n (e.g. -60e-12:60e-12:41 or -60pm:60pm:41)")
    s.add_argument("--window", type=time_arg, default=None, help="coincidence window")
    s.add_argument("--post-select", type=optional_time_arg, default=argparse.SUPPRESS,
                   help="post-selection width or 'none'")
    s.add_argument("-q", "--quiet", action="store_true")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("analyze", help="count coincidences or normalize a scan")
    s.add_argument("inputs", nargs="+", help="scan JSON, a two-channel tag file or two tag files")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--window", type=time_arg, default=None, help="coincidence window (580ps)")
    s.add_argument("--post-select", type=optional_time_arg, default=argparse.SUPPRESS,
                   help="post-selection width (175ps) or 'none'")
    s.add_argument("--slot-period", type=time_arg, default=2.32e-9)
    s.add_argument("--hist-bin", type=time_arg, default=None)
    s.add_argument("--hist-range", type=time_arg, default=None)
    s.add_argument("--normalize", choices=STRATEGIES, default="fit-baseline")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("fit", help="fit the dip of a scan or points CSV")
    s.add_argument("input", nargs="?", help="scan JSON or points CSV")
    s.add_argument("--example", action="store_true", help="fit the shipped example scan")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--normalize", choices=STRATEGIES, default="fit-baseline")
    s.add_argument("--bootstrap", type=int, default=0, metavar="N",
                   help="add a bootstrap sigma from N >= 100 resamples")
    s.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    s.add_argument("--fwhm-hint", type=time_arg, default=120e-12)
    s.add_argument("--lambda0", type=length_arg, default=1550e-9, help="for CSV input")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("report", help="run the acceptance checks")
    s.add_argument("--only", nargs="+", default=None, metavar="ID")
    s.add_argument("--list", action="store_true", help="list check ids")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--json", default=None, help="also write results to this file")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SaturationError) as err:
        print(f"homdip: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (tags.TagFormatError, tags.ResolutionMismatchError, OSError) as err:
        print(f"homdip: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (FitError, DipNotCapturedError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"homdip: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError) as err:
        print(f"homdip: invalid input: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
