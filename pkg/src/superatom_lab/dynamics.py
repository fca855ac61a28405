"""Stochastic single-shot simulation of superatom preparation and probing.

A shot prepares the superatom with a two-photon Rabi pulse, then probes it
for a window t_i. A superatom in the Rydberg state decays to the ground
state at most once (quantum jump, exponential waiting time); the ground
state is absorbing while probing. Records are time-binned photon counts
(transmission counting) or homodyne quadrature samples (reflection).

Counting statistics are Poissonian: the self-blockade of the EIT polaritons
makes the instantaneous flux sub-Poissonian, but counts integrated over
times much longer than the polariton lifetime lose that correlation, so the
Poisson model is the appropriate bin-level description (and is slightly
wider than the real count distribution). Dark counts are not modeled; all
counting fluxes are detected rates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ensemble
from .params import SystemParams

_MODES = ("counting", "homodyne")


def rabi_population(t_d: float, omega: float, tau_d: float) -> float:
    """Probability that a drive of duration t_d prepares the collective
    Rydberg state.

    The coherent oscillation carries a Gaussian envelope,
    P(t) = (1 - cos(omega*t))/2 * exp(-t^2/tau_d^2); amplitude that dephases
    out of the collectively coupled mode is lost for preparation, so at the
    pi time the efficiency is exactly exp(-t_pi^2/tau_d^2).
    """
    if t_d < 0:
        raise ValueError("t_d must be >= 0")
    if not tau_d > 0:
        raise ValueError("tau_d must be > 0")
    return 0.5 * (1.0 - math.cos(omega * t_d)) * math.exp(-((t_d / tau_d) ** 2))


def detected_population(t_d: float, omega: float, tau_d: float) -> float:
    """Probability that state detection reports a Rydberg excitation after a
    drive of duration t_d.

    Dephased drive amplitude still hosts a blockading excitation half the
    time, so the detected trace relaxes to 1/2 instead of 0:
    P(t) = [1 - cos(omega*t) * exp(-t^2/tau_d^2)] / 2.
    """
    if t_d < 0:
        raise ValueError("t_d must be >= 0")
    if not tau_d > 0:
        raise ValueError("tau_d must be > 0")
    return 0.5 * (1.0 - math.cos(omega * t_d) * math.exp(-((t_d / tau_d) ** 2)))


def dephasing_time(p: SystemParams, rel_rms: float = ensemble.DEFAULT_RABI_RMS) -> float:
    """Combined Gaussian dephasing time: thermal motion plus Rabi spread, us."""
    omega = ensemble.collective_rabi(p)
    return ensemble.combined_dephasing([
        ensemble.motional_dephasing_time(p),
        ensemble.rabi_spread_dephasing(omega, rel_rms),
    ])


def preparation_efficiency(p: SystemParams,
                           rel_rms: float = ensemble.DEFAULT_RABI_RMS) -> float:
    """Rydberg preparation probability of a pi pulse at the collective Rabi
    frequency, limited by dephasing during the pulse."""
    omega = ensemble.collective_rabi(p)
    t_pi = math.pi / omega
    return rabi_population(t_pi, omega, dephasing_time(p, rel_rms))


@dataclass(frozen=True)
class Protocol:
    """One shot's drive/probe schedule and detection parameters.

    Counting mode uses detected fluxes ``flux_g``/``flux_r`` (photons/us);
    homodyne mode uses the cavity input flux ``input_flux`` and the two
    reflectivities. ``eta_r`` overrides the preparation efficiency computed
    from the system parameters.
    """

    mode: str
    drive_duration: float        # us
    probe_duration: float        # us, the integration window t_i
    bin_width: float             # us
    flux_g: float | None = None
    flux_r: float | None = None
    input_flux: float | None = None
    refl_g: float | None = None
    refl_r: float | None = None
    tau_r: float = 42.0          # us
    eta_r: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not (self.drive_duration >= 0 and self.probe_duration > 0
                and self.bin_width > 0):
            raise ValueError("durations must be positive")
        n = round(self.probe_duration / self.bin_width)
        if n < 1 or abs(n * self.bin_width - self.probe_duration) > 1e-9 * self.probe_duration:
            raise ValueError("bin_width must divide probe_duration")
        if not self.tau_r > 0:
            raise ValueError("tau_r must be > 0")
        if self.eta_r is not None and not 0.0 <= self.eta_r <= 1.0:
            raise ValueError("eta_r must be in [0, 1]")
        if self.mode == "counting":
            if self.flux_g is None or self.flux_r is None:
                raise ValueError("counting mode requires flux_g and flux_r")
            if self.flux_g < 0 or self.flux_r < 0:
                raise ValueError("fluxes must be >= 0")
        else:
            if self.input_flux is None or self.refl_g is None or self.refl_r is None:
                raise ValueError("homodyne mode requires input_flux, refl_g and refl_r")
            if self.input_flux < 0:
                raise ValueError("input_flux must be >= 0")
            for name in ("refl_g", "refl_r"):
                v = getattr(self, name)
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{name} must be in [0, 1]")

    @property
    def n_bins(self) -> int:
        return round(self.probe_duration / self.bin_width)

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width


@dataclass(frozen=True)
class ShotRecord:
    """One simulated shot: prepared state, jump time, time-binned record.

    ``jump_time`` is None for ground-state preparations (the ground state is
    absorbing) and for jumps falling outside the probe window. Counting
    values are integer photon counts; homodyne values are quadrature samples.
    """

    prepared_state: str          # "G" | "R"
    jump_time: float | None     # us, within [0, t_i]
    bin_starts: np.ndarray      # us
    values: np.ndarray
    bin_width: float            # us


def total_count(record: ShotRecord) -> int:
    """Window-integrated photon count of a counting record."""
    return int(np.sum(record.values))


def integrated_quadrature(record: ShotRecord) -> float:
    """Window-integrated quadrature with vacuum variance 1/2.

    Each bin carries an independent vacuum-limited sample of variance 1/2;
    the sqrt(bin/t_i)-weighted sum keeps the integrated variance at 1/2 and
    the mean at +-sqrt(2 t_i phi R).
    """
    n = len(record.values)
    return float(np.sum(record.values)) / math.sqrt(n)


def _state_durations(proto: Protocol, prepared_r: bool,
                     jump_time: float | None) -> np.ndarray:
    """Per-bin time spent in the Rydberg state."""
    starts = proto.bin_starts
    ends = starts + proto.bin_width
    if not prepared_r:
        return np.zeros_like(starts)
    if jump_time is None:
        return np.full_like(starts, proto.bin_width)
    return np.clip(jump_time - starts, 0.0, proto.bin_width)


def simulate_shot(proto: Protocol, prepare_pi: bool, params: SystemParams,
                  seed) -> ShotRecord:
    """Simulate one shot; ``seed`` is anything numpy's default_rng accepts."""
    rng = np.random.default_rng(seed)
    eta = proto.eta_r if proto.eta_r is not None else preparation_efficiency(params)
    prepared_r = bool(prepare_pi and rng.random() < eta)

    jump_time: float | None = None
    if prepared_r:
        t_jump = rng.exponential(proto.tau_r)
        if t_jump <= proto.probe_duration:
            jump_time = float(t_jump)
        # jumps after the window leave the record fully blockaded

    in_r = _state_durations(proto, prepared_r, jump_time)
    in_g = proto.bin_width - in_r

    if proto.mode == "counting":
        mean_counts = proto.flux_r * in_r + proto.flux_g * in_g
        values = rng.poisson(mean_counts)
    else:
        amp_r = math.sqrt(2.0 * proto.input_flux * proto.refl_r / proto.bin_width)
        amp_g = math.sqrt(2.0 * proto.input_flux * proto.refl_g / proto.bin_width)
        means = amp_r * in_r - amp_g * in_g  # R reflects in phase, G out of phase
        values = rng.normal(means, math.sqrt(0.5))

    return ShotRecord(
        prepared_state="R" if prepared_r else "G",
        jump_time=jump_time,
        bin_starts=proto.bin_starts,
        values=values,
        bin_width=proto.bin_width,
    )


def batch(proto: Protocol, prepare_pi: bool, n_shots: int,
          params: SystemParams, seed, n_jobs: int = 1) -> list[ShotRecord]:
    """Simulate n_shots independent shots.

    Per-shot RNG streams are derived from (seed, shot index), so the output
    is deterministic and independent of execution order; ``n_jobs`` > 1 runs
    shots on a thread pool with identical results.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_shots)
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(
                lambda child: simulate_shot(proto, prepare_pi, params, child),
                children))
    return [simulate_shot(proto, prepare_pi, params, child) for child in children]


def batch_to_csv(records: Sequence[ShotRecord], path: str | Path) -> None:
    """Write one row per bin: shot,prepared,jump_time_us,bin_start_us,value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shot", "prepared", "jump_time_us", "bin_start_us", "value"])
        for i, rec in enumerate(records):
            jump = "" if rec.jump_time is None else f"{rec.jump_time:.12g}"
            for start, value in zip(rec.bin_starts, rec.values):
                w.writerow([i, rec.prepared_state, jump,
                            f"{start:.12g}", f"{value:.12g}"])


def mean_rate_trace(records: Sequence[ShotRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean detected rate per bin over a counting batch.

    Returns (bin centers, mean rate, standard error of the mean rate).
    """
    if not records:
        raise ValueError("empty batch")
    first = records[0]
    counts = np.stack([rec.values for rec in records]).astype(float)
    rates = counts / first.bin_width
    mean = rates.mean(axis=0)
    sem = rates.std(axis=0, ddof=1) / math.sqrt(len(records))
    centers = first.bin_starts + 0.5 * first.bin_width
    return centers, mean, sem
