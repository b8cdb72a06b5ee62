"""Dip normalization, Gaussian dip fitting and visibility uncertainties.

The fitted model, in wavelength detuning ``x``, is

    C(x) = A * (1 - V * exp(-(t_p * K * (x - x0))^2)),   K = 2 pi c / lambda0^2

where ``K`` turns a wavelength offset into an angular-frequency detuning.
Internally ``x`` is in pm and ``t_p`` in ps so that all four parameters are
of order one; results are reported in SI units.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import optics
from .montecarlo import DipScan, ScanPoint, derive_seed

STRATEGIES = ("fit-baseline", "wings", "accidentals")
DEFAULT_FWHM = 120e-12
WING_WIDTHS = 3.0


class FitError(RuntimeError):
    """Fit failure; ``starts`` holds the per-start initialization table."""

    def __init__(self, message: str, starts: list | None = None):
        super().__init__(message)
        self.starts = starts or []


class DipNotCapturedError(ValueError):
    pass


@dataclass
class NormalizedPoints:
    delta_lambda: np.ndarray
    value: np.ndarray
    sigma: np.ndarray
    strategy: str = "raw"
    baseline: float = 1.0
    baseline_sigma: float = 0.0

    def __post_init__(self):
        self.delta_lambda = np.asarray(self.delta_lambda, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.delta_lambda.shape == self.value.shape == self.sigma.shape):
            raise ValueError("delta_lambda, value and sigma must have equal shapes")

    def __len__(self):
        return self.value.size


def _k_per_pm(lambda0: float) -> float:
    """rad/ps of angular detuning per pm of wavelength detuning."""
    return 2.0 * math.pi * optics.C / lambda0 ** 2 * 1e-24


def dip_halfwidth(t_p: float, lambda0: float) -> float:
    """1/e half-width of the dip in wavelength detuning (m)."""
    return float(optics.wavelength_from_detuning(1.0 / t_p, lambda0))


# --------------------------------------------------------------------------
# normalization


def scan_points(scan: DipScan) -> NormalizedPoints:
    """Coincidence counts rescaled to the longest integration, with Poisson errors."""
    n = scan.coincidences
    scale = scan.integration.max() / scan.integration
    return NormalizedPoints(scan.delta_lambda, n * scale,
                            np.sqrt(np.maximum(n, 1.0)) * scale, "raw")


def wing_mask(delta_lambda, center, t_p, lambda0, widths=WING_WIDTHS):
    return np.abs(np.asarray(delta_lambda) - center) > widths * dip_halfwidth(t_p, lambda0)


def normalize_dip(scan: DipScan, strategy: str = "fit-baseline", *, t_p: float | None = None,
                  center: float | None = None, fit: "DipFit | None" = None) -> NormalizedPoints:
    """Divide coincidences by a baseline estimate.

    ``fit-baseline`` uses the amplitude of a dip fit to the raw counts;
    ``wings`` uses the mean of points more than three dip half-widths from
    the centre; ``accidentals`` divides each point by its own cross-slot
    coincidence rate.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    raw = scan_points(scan)
    if strategy == "fit-baseline":
        fit = fit if fit is not None else fit_dip(raw, scan.lambda0)
        b, sb = fit.baseline, fit.sigma_baseline
    elif strategy == "wings":
        t_p = t_p if t_p is not None else (fit.t_p if fit else optics.tp_from_fwhm(DEFAULT_FWHM))
        if center is None:
            center = fit.center if fit else raw.delta_lambda[np.argmin(raw.value)]
        wings = wing_mask(raw.delta_lambda, center, t_p, scan.lambda0)
        if not wings.any():
            raise ValueError("no scan points in the wings")
        b = raw.value[wings].mean()
        sb = math.sqrt(np.sum(raw.sigma[wings] ** 2)) / wings.sum()
    else:
        acc = scan.accidentals
        if np.any(acc <= 0):
            raise ValueError("accidentals strategy needs positive accidental counts")
        n_off = np.array([max(p.n_offsets, 1) for p in scan.points], dtype=float)
        n = scan.coincidences
        value = n / acc
        sigma = np.sqrt(np.maximum(n, 1.0) / acc ** 2 + n ** 2 / (acc ** 3 * n_off))
        return NormalizedPoints(scan.delta_lambda, value, sigma, strategy, 1.0, 0.0)
    if not b > 0:
        raise ValueError("zero baseline")
    return NormalizedPoints(raw.delta_lambda, raw.value / b, raw.sigma / b, strategy, b, sb)


# --------------------------------------------------------------------------
# fitting


@dataclass
class DipFit:
    baseline: float
    visibility: float
    t_p: float
    center: float
    covariance: np.ndarray
    chi2: float
    dof: int
    lambda0: float
    converged: bool = True
    iterations: int = 0
    flags: list = field(default_factory=list)
    starts: list = field(default_factory=list)
    bootstrap_sigma: float | None = None

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def _sig(self, i):
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))

    @property
    def sigma_baseline(self):
        return self._sig(0)

    @property
    def sigma_visibility(self):
        return self._sig(1)

    @property
    def sigma_t_p(self):
        return self._sig(2)

    @property
    def sigma_center(self):
        return self._sig(3)

    def model(self, delta_lambda):
        d = optics.detuning_from_wavelength(np.asarray(delta_lambda) - self.center, self.lambda0)
        return self.baseline * (1.0 - self.visibility * np.exp(-(self.t_p * d) ** 2))

    def to_dict(self):
        return {
            "baseline": self.baseline, "sigma_baseline": self.sigma_baseline,
            "visibility": self.visibility, "sigma_visibility": self.sigma_visibility,
            "bootstrap_sigma_visibility": self.bootstrap_sigma,
            "t_p_s": self.t_p, "sigma_t_p_s": self.sigma_t_p,
            "center_m": self.center, "sigma_center_m": self.sigma_center,
            "dip_halfwidth_m": dip_halfwidth(self.t_p, self.lambda0),
            "covariance": self.covariance.tolist(),
            "chi2": self.chi2, "dof": self.dof, "reduced_chi2": self.reduced_chi2,
            "lambda0_m": self.lambda0, "converged": self.converged,
            "iterations": self.iterations, "flags": list(self.flags),
            "starts": self.starts, "fwhm_convention": optics.FWHM_CONVENTION,
        }


def _model_jac(p, x, k):
    a, v, tp, c = p
    u = x - c
    z = k * tp * u
    e = np.exp(-z * z)
    f = a * (1.0 - v * e)
    jac = np.empty((x.size, 4))
    jac[:, 0] = 1.0 - v * e
    jac[:, 1] = -a * e
    jac[:, 2] = 2.0 * a * v * e * z * k * u
    jac[:, 3] = -2.0 * a * v * e * z * k * tp
    return f, jac


def _project(p):
    p = p.copy()
    p[1] = min(max(p[1], 0.0), optics.V_FIT_BOUND)
    p[2] = max(abs(p[2]), 1e-6)
    return p


def _levenberg_marquardt(p0, x, y, w, k, max_iter=200, xtol=1e-10):
    """Damped Gauss-Newton on ``sum w (y - f)^2`` with projection onto the bounds.

    Returns ``(params, chi2, converged, iterations)``.
    """
    p = _project(np.asarray(p0, dtype=float))
    f, jac = _model_jac(p, x, k)
    r = y - f
    chi2 = float(np.sum(w * r * r))
    lam = 1e-3
    for it in range(1, max_iter + 1):
        jw = jac * w[:, None]
        h = jac.T @ jw
        g = jw.T @ r
        d = np.diag(h).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        # hold V on a bound it is pressed against; a clipped free step zig-zags
        free = np.ones(4, dtype=bool)
        if (p[1] <= 0.0 and g[1] < 0) or (p[1] >= optics.V_FIT_BOUND and g[1] > 0):
            free[1] = False
        hf = h[np.ix_(free, free)]
        while True:
            try:
                step = np.zeros(4)
                step[free] = np.linalg.solve(hf + lam * np.diag(d[free]), g[free])
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                p_new = _project(p + step)
                f_new, jac_new = _model_jac(p_new, x, k)
                r_new = y - f_new
                chi2_new = float(np.sum(w * r_new * r_new))
                if chi2_new <= chi2:
                    break
            lam *= 10.0
            if lam > 1e16:
                # no downhill step left at machine precision
                return p, chi2, True, it
        scale = np.array([abs(p[0]), max(abs(p[1]), 1e-2), abs(p[2]), 1.0 / (k * p[2])])
        moved = np.abs(p_new - p) <= xtol * (np.abs(p) + scale)
        p, f, jac, r, chi2 = p_new, f_new, jac_new, r_new, chi2_new
        lam = max(lam * 0.1, 1e-12)
        if np.all(moved):
            return p, chi2, True, it
    return p, chi2, False, max_iter


def initial_guesses(x, y, k, fwhm_hint=DEFAULT_FWHM):
    """The five deterministic starting points ``(A, V, t_p[ps], center[pm])``."""
    tp0 = optics.tp_from_fwhm(fwhm_hint) * 1e12
    c0 = x[np.argmin(y)]
    wings = np.abs(x - c0) > WING_WIDTHS / (k * tp0)
    if wings.sum() == 0:
        wings = np.abs(x - c0) >= np.quantile(np.abs(x - c0), 0.75)
    a0 = float(np.mean(y[wings]))
    combos = [(0.1, 1.0), (0.25, 1.0), (0.5, 1.0), (0.25, 0.5), (0.25, 1.5)]
    return [np.array([a0, v, tp0 * s, c0]) for v, s in combos]


def fit_dip(points: NormalizedPoints, lambda0: float = 1550e-9, *, fwhm_hint: float = DEFAULT_FWHM,
            max_iter: int = 200, xtol: float = 1e-10,
            scale_covariance: bool = True) -> DipFit:
    """Weighted least-squares fit of the Gaussian HOM dip.

    Five deterministic starts are refined by Levenberg-Marquardt; the lowest
    chi-square wins (ties go to the lowest visibility). The covariance is
    ``(J^T W J)^-1``, times the reduced chi-square when ``scale_covariance``.
    """
    if len(points) < 5:
        raise ValueError("need at least 5 points to fit a dip")
    if not np.all(np.isfinite(points.sigma)) or np.any(points.sigma <= 0):
        raise ValueError("uncertainties must be finite and positive")
    x = points.delta_lambda * 1e12
    y = points.value
    w = 1.0 / points.sigma ** 2
    k = _k_per_pm(lambda0)

    best = None
    starts = []
    for p0 in initial_guesses(x, y, k, fwhm_hint):
        p, chi2, conv, its = _levenberg_marquardt(p0, x, y, w, k, max_iter, xtol)
        starts.append({"init": [float(v) for v in p0], "final": [float(v) for v in p],
                       "chi2": chi2, "converged": conv, "iterations": its})
        if not np.isfinite(chi2):
            continue
        if (best is None or chi2 < best[1] * (1 - 1e-12)
                or (chi2 <= best[1] * (1 + 1e-12) and p[1] < best[0][1])):
            best = (p, chi2, conv, its)
    if best is None:
        raise FitError("all fit starts failed", starts)
    p, chi2, conv, its = best

    flags = []
    if not conv:
        flags.append("not_converged")
    if p[1] <= 1e-9 or p[1] >= optics.V_FIT_BOUND - 1e-9:
        flags.append("visibility_at_bound")
    _, jac = _model_jac(p, x, k)
    h = jac.T @ (jac * w[:, None])
    # back to SI: (A, V, t_p [s], center [m])
    to_si = np.diag([1.0, 1.0, 1e-12, 1e-12])
    if np.linalg.cond(h) > 1e13:
        flags.append("singular_normal_equations")
        cov = np.linalg.pinv(h, rcond=1e-13)
    else:
        cov = np.linalg.inv(h)
    dof = x.size - 4
    if scale_covariance and dof > 0:
        cov = cov * (chi2 / dof)
    cov = to_si @ cov @ to_si
    cov = 0.5 * (cov + cov.T)
    return DipFit(float(p[0]), float(p[1]), float(p[2]) * 1e-12, float(p[3]) * 1e-12, cov,
                  chi2, dof, lambda0, conv, its, flags, starts)


# --------------------------------------------------------------------------
# model-free estimate and bootstrap


@dataclass
class PointEstimate:
    visibility: float
    sigma: float
    minimum_index: int
    n_wings: int


def visibility_point_estimate(points: NormalizedPoints, lambda0: float = 1550e-9, *,
                              t_p: float | None = None,
                              wing_halfwidth: float | None = None) -> PointEstimate:
    """``V = 1 - C_min / C_wings`` from the lowest point and the wing mean."""
    y, s, x = points.value, points.sigma, points.delta_lambda
    i = int(np.argmin(y))
    if i == 0 or i == y.size - 1:
        raise DipNotCapturedError("minimum at the edge of the scan: dip not captured")
    if wing_halfwidth is None:
        t_p = optics.tp_from_fwhm(DEFAULT_FWHM) if t_p is None else t_p
        wing_halfwidth = WING_WIDTHS * dip_halfwidth(t_p, lambda0)
    wings = np.abs(x - x[i]) > wing_halfwidth
    if not wings.any():
        raise ValueError("no scan points in the wings")
    b = y[wings].mean()
    sb = math.sqrt(np.sum(s[wings] ** 2)) / wings.sum()
    m, sm = y[i], s[i]
    v = 1.0 - m / b
    sv = math.sqrt((sm / b) ** 2 + (m * sb / b ** 2) ** 2)
    return PointEstimate(float(v), float(sv), i, int(wings.sum()))


@dataclass
class BootstrapResult:
    sigma: float
    values: np.ndarray
    n_failed: int


def resample_scan(scan: DipScan, rng: np.random.Generator) -> DipScan:
    pts = []
    for p in scan.points:
        acc = p.accidentals
        if acc > 0 and p.n_offsets > 0:
            acc = rng.poisson(acc * p.n_offsets) / p.n_offsets
        pts.append(replace(p, coincidences=int(rng.poisson(p.coincidences)), accidentals=acc))
    return DipScan(pts, scan.lambda0, scan.provenance)


def bootstrap_uncertainty(scan: DipScan, n_resamples: int = 200, *, seed: int = 0,
                          strategy: str = "fit-baseline", **fit_kw) -> BootstrapResult:
    """Spread of the fitted visibility over Poisson resamples of every scan point.

    Resample ``r`` draws from ``derive_seed(seed, r)``, so the result does
    not depend on evaluation order.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    vals, failed = [], 0
    for r in range(n_resamples):
        rng = np.random.default_rng(derive_seed(seed, r))
        try:
            pts = normalize_dip(resample_scan(scan, rng), strategy)
            vals.append(fit_dip(pts, scan.lambda0, **fit_kw).visibility)
        except (FitError, ValueError):
            failed += 1
    vals = np.array(vals)
    sigma = float(np.std(vals, ddof=1)) if vals.size > 1 else float("nan")
    return BootstrapResult(sigma, vals, failed)


def synthetic_scan(delta_lambda, *, baseline: float, visibility: float, t_p: float,
                   center: float = 0.0, lambda0: float = 1550e-9, integration: int = 1,
                   rng: np.random.Generator | None = None) -> DipScan:
    """Scan whose coincidences follow the dip model, Poisson-sampled if ``rng`` is given.

    Without ``rng`` the counts are the exact model means rounded to integers
    only when they are integral; fractional means are kept as floats.
    """
    x = np.asarray(delta_lambda, dtype=float)
    d = optics.detuning_from_wavelength(x - center, lambda0)
    mean = baseline * (1.0 - visibility * np.exp(-(t_p * d) ** 2))
    counts = rng.poisson(mean) if rng is not None else mean
    pts = [ScanPoint(float(xi), ci, (0, 0), 0.0, integration) for xi, ci in zip(x, counts)]
    return DipScan(pts, lambda0, {"synthetic": {"baseline": baseline, "visibility": visibility,
                                                "t_p_s": t_p, "center_m": center}})


def write_plot_csv(path, points: NormalizedPoints, fit: DipFit):
    """Write ``delta_lambda_pm, normalized_coincidence, sigma, model_value`` rows.

    Raw counts are divided by the fitted baseline so every column is normalized.
    """
    scale = 1.0 / fit.baseline if points.strategy == "raw" else 1.0
    model = fit.model(points.delta_lambda) * scale
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["delta_lambda_pm", "normalized_coincidence", "sigma", "model_value"])
        for x, y, s, m in zip(points.delta_lambda, points.value * scale, points.sigma * scale,
                              model):
            wr.writerow([f"{x * 1e12:.6g}", f"{y:.10g}", f"{s:.10g}", f"{m:.10g}"])


def read_points_csv(path) -> NormalizedPoints:
    """Read a ``delta_lambda_pm, normalized_coincidence, sigma[, model_value]`` CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    need = {"delta_lambda_pm", "normalized_coincidence", "sigma"}
    if not rows or not need <= set(rows[0]):
        raise ValueError(f"points CSV needs columns {sorted(need)}")
    x = np.array([float(r["delta_lambda_pm"]) for r in rows]) * 1e-12
    y = np.array([float(r["normalized_coincidence"]) for r in rows])
    s = np.array([float(r["sigma"]) for r in rows])
    return NormalizedPoints(x, y, s, "csv")
