"""Linear-response spectra of the cavity-ensemble-EIT system.

Steady-state transmission and complex reflection amplitude of a probe on a
three-level (ground / intermediate / Rydberg) ensemble inside a single-ended
cavity, with a control field opening an EIT window:

    T(delta) = | kappa / D |^2,     r(delta) = 1 - 2i*kappa0 / D,
    D = Delta_a - g^2 / (Delta_e - omega_c^2 / (4 Delta_r)),

with complex detunings Delta_a = delta_a + i*kappa, Delta_e = delta_e +
i*gamma, Delta_r = delta_r + i*gamma_r. Transmission is normalized to the
bare-cavity resonant maximum. Setting omega_c = 0 gives the vacuum-Rabi-split
doublet; g = 0 gives the bare-cavity Lorentzian.

A superatom in the blockading Rydberg state shifts the EIT level out of
resonance; here that is modeled as omega_c = 0 (fully blocked) or, for
sensitivity studies, as a finite two-photon interaction shift.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .params import SystemParams, angular_to_mhz


class SpectraError(RuntimeError):
    """Raised when a spectral feature cannot be located."""


@dataclass(frozen=True)
class ProbeCondition:
    """Probe detunings for one evaluation, angular units (rad/us).

    delta_a: probe-cavity, delta_e: probe-atom, delta_r: two-photon detuning.
    ``omega_c_override`` replaces SystemParams.omega_c when set (0 models a
    perfect blockade). ``interaction_shift`` offsets the two-photon detuning
    to model a partially shifted EIT level.
    """

    delta_a: float
    delta_e: float
    delta_r: float
    omega_c_override: float | None = None
    interaction_shift: float = 0.0

    def __post_init__(self) -> None:
        for name in ("delta_a", "delta_e", "delta_r", "interaction_shift"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.omega_c_override is not None and self.omega_c_override < 0:
            raise ValueError("omega_c_override must be >= 0")

    @classmethod
    def co_swept(cls, delta: float, *, blocked: bool = False,
                 interaction_shift: float = 0.0) -> "ProbeCondition":
        """Probe-only sweep: control on two-photon resonance, all detunings co-swept."""
        return cls(delta, delta, delta,
                   omega_c_override=0.0 if blocked else None,
                   interaction_shift=interaction_shift)


def _response_denominator(p: SystemParams, c: ProbeCondition) -> complex:
    omega_c = p.omega_c if c.omega_c_override is None else c.omega_c_override
    delta_a = complex(c.delta_a, p.kappa)
    if p.g == 0.0:
        return delta_a
    delta_e = complex(c.delta_e, p.gamma)
    delta_r = complex(c.delta_r - c.interaction_shift, p.gamma_r)
    if omega_c == 0.0:
        lever = delta_e
    elif delta_r == 0.0:
        # control term diverges: the ensemble decouples (perfect EIT)
        return delta_a
    else:
        lever = delta_e - omega_c**2 / (4.0 * delta_r)
    if lever == 0.0:
        return delta_a
    return delta_a - p.g**2 / lever


def transmission(p: SystemParams, c: ProbeCondition) -> float:
    """Probe transmission, normalized to the empty-cavity resonant maximum."""
    d = _response_denominator(p, c)
    return abs(p.kappa / d) ** 2


def reflection_amplitude(p: SystemParams, c: ProbeCondition) -> complex:
    """Complex reflection amplitude r; reflectivity = |r|^2, phase = arg(r)."""
    d = _response_denominator(p, c)
    return 1.0 - 2.0j * p.kappa0 / d


@dataclass(frozen=True)
class SpectrumTable:
    """Probe-detuning grid with transmission, reflectivity and reflection phase."""

    delta: np.ndarray          # rad/us, sorted ascending
    transmission: np.ndarray   # dimensionless, in [0, 1]
    reflectivity: np.ndarray   # dimensionless, in [0, 1]
    phase: np.ndarray          # rad, in (-pi, pi]

    def __len__(self) -> int:
        return len(self.delta)

    def rows(self) -> Iterator[tuple[float, float, float, float]]:
        yield from zip(self.delta, self.transmission, self.reflectivity, self.phase)

    def to_csv(self, path: str | Path) -> None:
        """Write `delta_MHz,transmission,reflectivity,phase_rad` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta_MHz", "transmission", "reflectivity", "phase_rad"])
            for d, t, r, ph in self.rows():
                w.writerow([f"{angular_to_mhz(d):.12g}", f"{t:.12g}",
                            f"{r:.12g}", f"{ph:.12g}"])


def sweep(p: SystemParams, deltas, blocked: bool = False,
          interaction_shift: float = 0.0) -> SpectrumTable:
    """Evaluate the co-swept spectrum on a detuning grid (rad/us).

    The control laser stays on two-photon resonance while the probe sweeps,
    so delta_a = delta_e = delta_r = delta. ``blocked`` sets omega_c = 0.
    """
    grid = np.sort(np.asarray(deltas, dtype=float))
    if grid.size == 0:
        raise ValueError("empty detuning grid")
    trans = np.empty_like(grid)
    refl = np.empty_like(grid)
    phase = np.empty_like(grid)
    for i, d in enumerate(grid):
        c = ProbeCondition.co_swept(d, blocked=blocked,
                                    interaction_shift=interaction_shift)
        r = reflection_amplitude(p, c)
        trans[i] = transmission(p, c)
        refl[i] = abs(r) ** 2
        phase[i] = np.angle(r)
    return SpectrumTable(grid, trans, refl, phase)


def polariton_lifetime(p: SystemParams) -> float:
    """Dark-polariton lifetime from the EIT transmission linewidth, in us.

    Locates the half width at half maximum delta_hwhm (angular) of the
    resonant EIT peak by outward stepping plus bisection and returns
    tau_p = 1 / (2 * delta_hwhm).
    """
    if not p.omega_c > 0:
        raise ValueError("polariton_lifetime requires omega_c > 0")
    t_peak = transmission(p, ProbeCondition.co_swept(0.0))
    half = 0.5 * t_peak

    def t_of(delta: float) -> float:
        return transmission(p, ProbeCondition.co_swept(delta))

    step = p.kappa / 50.0 if p.kappa > 0 else p.omega_c / 500.0
    if t_of(step) >= t_peak:
        raise SpectraError(
            "no EIT transmission peak at resonance (control too weak "
            "or window narrower than the scan step)")
    lo, hi = 0.0, step
    limit = 100.0 * (p.kappa + p.gamma + p.omega_c + p.g)
    while t_of(hi) > half:
        lo, hi = hi, hi + step
        if hi > limit:
            raise SpectraError("EIT half-maximum crossing not found")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_of(mid) > half:
            lo = mid
        else:
            hi = mid
    delta_hwhm = 0.5 * (lo + hi)
    return 1.0 / (2.0 * delta_hwhm)


def saturation_flux(p: SystemParams) -> float:
    """Photon-flux saturation scale 1/(2 tau_p), in photons/us (equals MHz)."""
    return 1.0 / (2.0 * polariton_lifetime(p))
