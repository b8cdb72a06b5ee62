"""Closed-form pulse and beam-splitter model for HOM interference of weak coherent pulses.

Conventions
-----------
A pulse field is a Gaussian envelope of width ``t_p`` on a single carrier,

    E(t) = 1/(t_p sqrt(2 pi)) * exp(-t^2 / (2 t_p^2)) * exp(i (omega t + phi))

so the intensity ``|E|^2`` goes as ``exp(-t^2 / t_p^2)`` and its FWHM is
``2 sqrt(ln 2) t_p``. A measured pulse width is always taken to be an
intensity FWHM (``FWHM_CONVENTION``).

Pulse-integrated output intensities of a 50:50 beam splitter with inputs of
mean photon number ``I1``, ``I2`` are

    I_out = (I1 + I2)/2 +/- sqrt(I1 I2) |o| F cos(dphi + arg o)

with the spectral/temporal overlap ``F = exp(-t_p^2 domega^2 / 2)`` (times a
timing-mismatch factor). Averaging the product of the two outputs over a
uniform relative phase gives a coincidence dip ``1 - V exp(-t_p^2 domega^2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

C = 299_792_458.0  # m/s, exact

FWHM_CONVENTION = "intensity"
_FWHM_PER_TP = 2.0 * math.sqrt(math.log(2.0))

V_MAX = 0.5
V_FIT_BOUND = 0.6


class VisibilityClampWarning(RuntimeWarning):
    """Raised (as a warning) when a computed visibility exceeded 0.5 and was clamped."""


@dataclass
class PulseField:
    t_p: float
    omega: float = 0.0
    phi: float = 0.0
    intensity: float = 1.0

    def __post_init__(self):
        if not self.t_p > 0:
            raise ValueError(f"t_p must be > 0, got {self.t_p}")
        if not self.intensity >= 0:
            raise ValueError(f"intensity must be >= 0, got {self.intensity}")
        self.phi = float(self.phi) % (2.0 * math.pi)


@dataclass
class InterferenceInput:
    """Two pulses meeting on a 50:50 beam splitter.

    ``delta_omega`` and ``delta_phi`` default to the differences of the two
    fields (first minus second). ``mode_overlap`` lumps together every
    non-temporal degree of freedom (polarisation, spatial mode).
    """

    a: PulseField
    b: PulseField
    delta_omega: float | None = None
    delta_phi: float | None = None
    mode_overlap: complex = 1.0
    timing_offset: float = 0.0

    def __post_init__(self):
        if abs(self.mode_overlap) > 1.0 + 1e-12:
            raise ValueError(f"|mode_overlap| must be <= 1, got {abs(self.mode_overlap)}")
        d_omega = self.a.omega - self.b.omega
        d_phi = self.a.phi - self.b.phi
        if self.delta_omega is None:
            self.delta_omega = d_omega
        elif (self.a.omega or self.b.omega) and not math.isclose(
                self.delta_omega, d_omega, rel_tol=1e-9, abs_tol=1e-6):
            raise ValueError("delta_omega inconsistent with the carrier frequencies of a and b")
        if self.delta_phi is None:
            self.delta_phi = d_phi

    @property
    def t_p(self) -> float:
        """Effective width used in the spectral overlap (rms of the two widths)."""
        return math.sqrt(0.5 * (self.a.t_p ** 2 + self.b.t_p ** 2))

    def overlap(self) -> complex:
        """Complex amplitude overlap multiplying the interference term."""
        return complex(self.mode_overlap) * overlap_factor(
            self.delta_omega, self.a.t_p, self.b.t_p, self.timing_offset)


@dataclass
class DipModel:
    baseline: float = 1.0
    visibility: float = V_MAX
    t_p: float = 1.0
    center: float = 0.0
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError("baseline must be > 0")
        if not 0.0 <= self.visibility <= V_FIT_BOUND:
            raise ValueError(f"visibility {self.visibility} outside [0, {V_FIT_BOUND}]")
        if self.visibility > V_MAX:
            self.flags.append("visibility_above_0.5")

    def __call__(self, delta_omega):
        return self.baseline * (1.0 - self.visibility * np.exp(
            -self.t_p ** 2 * (np.asarray(delta_omega) - self.center) ** 2))


def overlap_factor(delta_omega, t_a, t_b=None, timing_offset=0.0):
    """Magnitude of the pulse overlap entering the cross term.

    Equal widths and zero offset reduce to ``exp(-t_p^2 domega^2 / 2)``.
    """
    t_b = t_a if t_b is None else t_b
    s2 = t_a ** 2 + t_b ** 2
    width_match = math.sqrt(2.0 * t_a * t_b / s2)
    t_eff2 = 0.5 * s2
    return (width_match
            * np.exp(-0.5 * t_eff2 * np.square(delta_omega))
            * math.exp(-timing_offset ** 2 / (2.0 * s2)))


def field_envelope(t, pulse: PulseField):
    """Complex field of a single pulse at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    amp = np.exp(-t ** 2 / (2.0 * pulse.t_p ** 2)) / (pulse.t_p * math.sqrt(2.0 * math.pi))
    out = amp * np.exp(1j * (pulse.omega * t + pulse.phi))
    return out[()] if out.ndim == 0 else out


def beamsplitter_outputs(inp: InterferenceInput, t=None):
    """Pulse-integrated mean photon numbers at the two beam-splitter outputs.

    Returns ``(I_out1, I_out2)``; their sum is always ``I1 + I2``. The
    argument ``t`` is accepted for call-site symmetry with
    :func:`field_envelope` and does not change the pulse-integrated result.
    """
    i1, i2 = inp.a.intensity, inp.b.intensity
    ov = inp.overlap()
    mean = 0.5 * (i1 + i2)
    cross = math.sqrt(i1 * i2) * abs(ov) * np.cos(inp.delta_phi + np.angle(ov))
    return mean + cross, mean - cross


def hom_coincidence_probability(delta_omega, t_p, V):
    """Normalized coincidence probability ``1 - V exp(-t_p^2 domega^2)``."""
    if not 0.0 <= V <= V_MAX:
        raise ValueError(f"V must lie in [0, {V_MAX}], got {V}")
    if not t_p > 0:
        raise ValueError("t_p must be > 0")
    out = 1.0 - V * np.exp(-t_p ** 2 * np.square(delta_omega))
    return out[()] if np.ndim(out) == 0 else out


def phase_averaged_coincidence(inp: InterferenceInput, n_phase: int = 16384) -> float:
    """Average ``I_out1 * I_out2`` over a uniform relative phase, normalized.

    The average runs over ``n_phase`` equally spaced phases on ``[0, 2 pi)``;
    the integrand is a trigonometric polynomial of degree 2, so any
    ``n_phase >= 3`` is exact up to rounding. The result is divided by its
    value for fully distinguishable pulses, ``((I1 + I2)/2)^2``.
    """
    i1, i2 = inp.a.intensity, inp.b.intensity
    if i1 + i2 == 0:
        raise ValueError("both inputs are empty")
    phases = inp.delta_phi + 2.0 * math.pi * np.arange(n_phase) / n_phase
    ov = inp.overlap()
    mean = 0.5 * (i1 + i2)
    cross = math.sqrt(i1 * i2) * abs(ov) * np.cos(phases + np.angle(ov))
    prod = (mean + cross) * (mean - cross)
    return float(prod.mean() / mean ** 2)


def background_in_window(mu, extinction_db, window=None, period=None):
    """Non-interfering leakage photons per slot falling inside the post-selection window."""
    if math.isinf(extinction_db):
        return 0.0
    frac = 1.0 if window is None or period is None else min(window / period, 1.0)
    return mu * 10.0 ** (-extinction_db / 10.0) * frac


def expected_visibility(mu1, mu2, overlap_mag=1.0, extinction_db=math.inf, *,
                        window=None, period=None, pulse_fraction=1.0):
    """Dip visibility of two phase-randomized weak coherent pulses.

    Parameters
    ----------
    mu1, mu2 : float
        Mean photon numbers per pulse at the beam-splitter inputs.
    overlap_mag : float
        Magnitude of the non-temporal mode overlap, in [0, 1].
    extinction_db : float
        Pulse extinction ratio. ``inf`` means no leakage.
    window, period : float, optional
        Post-selection window and slot period (seconds). Leakage is spread
        uniformly over the slot, so only ``window/period`` of it survives.
    pulse_fraction : float
        Fraction of the pulse itself that falls inside the window.
    """
    if mu1 < 0 or mu2 < 0:
        raise ValueError("mean photon numbers must be >= 0")
    if mu1 == 0 and mu2 == 0:
        raise ValueError("mu1 and mu2 cannot both be zero")
    if not 0.0 <= overlap_mag <= 1.0:
        raise ValueError("overlap_mag must lie in [0, 1]")
    if not extinction_db > 0:
        raise ValueError("extinction_db must be > 0")
    m1 = mu1 * pulse_fraction
    m2 = mu2 * pulse_fraction
    b = (background_in_window(mu1, extinction_db, window, period)
         + background_in_window(mu2, extinction_db, window, period))
    d = m1 + m2 + b
    if d == 0.0:
        return 0.0
    v = 2.0 * (m1 / d) * (m2 / d) * overlap_mag ** 2
    if v > V_MAX:
        if v > V_MAX + 1e-12:
            warnings.warn(f"visibility {v!r} exceeds {V_MAX}; clamped", VisibilityClampWarning)
        v = V_MAX
    return max(v, 0.0)


def overlap_for_visibility(target, mu1, mu2, extinction_db=math.inf, **kw):
    """Overlap magnitude that makes :func:`expected_visibility` equal ``target``."""
    v1 = expected_visibility(mu1, mu2, 1.0, extinction_db, **kw)
    if not 0.0 <= target <= v1:
        raise ValueError(f"target {target} not reachable (max {v1})")
    # V is quadratic in the overlap magnitude
    return math.sqrt(target / v1)


def detuning_from_wavelength(delta_lambda, lambda0):
    """Angular-frequency detuning (rad/s) for a small wavelength offset (m)."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be > 0")
    return 2.0 * math.pi * C * np.asarray(delta_lambda, dtype=float)[()] / lambda0 ** 2


def wavelength_from_detuning(delta_omega, lambda0):
    if not lambda0 > 0:
        raise ValueError("lambda0 must be > 0")
    return np.asarray(delta_omega, dtype=float)[()] * lambda0 ** 2 / (2.0 * math.pi * C)


def tp_from_fwhm(fwhm):
    """Envelope width ``t_p`` from an intensity FWHM."""
    if not fwhm > 0:
        raise ValueError("fwhm must be > 0")
    return fwhm / _FWHM_PER_TP


def fwhm_from_tp(t_p):
    if not t_p > 0:
        raise ValueError("t_p must be > 0")
    return t_p * _FWHM_PER_TP


def intensity_sigma(fwhm):
    """Standard deviation of the Gaussian intensity profile with the given FWHM."""
    return fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def gaussian_fraction_within(half_width, fwhm):
    """Fraction of a Gaussian of given FWHM within +/- half_width of its center."""
    return math.erf(half_width / (math.sqrt(2.0) * intensity_sigma(fwhm)))
