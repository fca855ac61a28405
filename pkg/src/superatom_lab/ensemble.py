"""Geometric and collective properties of the blockaded atomic cloud.

Pair-interaction statistics of a Gaussian cloud, collective coupling and
two-photon Rabi scaling, and the Gaussian dephasing times of the collective
Rydberg coherence (thermal motion and drive-amplitude spread).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .params import BOLTZMANN_J_PER_K, SystemParams

#: Relative rms spread of the collective Rabi frequency, dominated by
#: shot-to-shot atom-number fluctuations.
DEFAULT_RABI_RMS = 0.04

#: Guard below which the Rabi-spread dephasing time is treated as infinite.
MIN_RABI_RMS = 1.0e-6


@dataclass(frozen=True)
class CloudSample:
    """Atom positions (um) drawn from the isotropic Gaussian cloud density."""

    positions: np.ndarray  # shape (n_atoms, 3)
    seed: int

    def __post_init__(self) -> None:
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (n_atoms, 3)")

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_um", "y_um", "z_um"])
            for x, y, z in self.positions:
                w.writerow([f"{x:.12g}", f"{y:.12g}", f"{z:.12g}"])


@dataclass(frozen=True)
class BlockadeStats:
    """Pair statistics of one cloud sample.

    ``fraction_blockaded`` is None when the cloud has fewer than two atoms
    (no pairs to count).
    """

    fraction_blockaded: float | None
    shift_at_quantile: float      # pair shift c6/r_ref^6, MHz
    mean_neighbors_within: float  # mean count of other atoms within r_ref


def sample_cloud(p: SystemParams, seed: int) -> CloudSample:
    """Draw n_atoms i.i.d. positions with per-axis standard deviation sigma_a."""
    if p.n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    rng = np.random.default_rng(seed)
    positions = rng.normal(0.0, p.sigma_a, size=(p.n_atoms, 3))
    return CloudSample(positions=positions, seed=seed)


def blockade_stats(cloud: CloudSample, c6: float, r_ref: float,
                   shift_threshold: float) -> BlockadeStats:
    """Pair-shift statistics: blockaded fraction, shift at r_ref, neighbor count.

    The pair shift is the asymptotic van der Waals form c6/r^6. Each unordered
    pair is counted once for the blockaded fraction; for the neighbor count
    both orderings contribute, once per atom.
    """
    if not c6 > 0:
        raise ValueError("c6 must be > 0")
    if not r_ref > 0:
        raise ValueError("r_ref must be > 0")
    n = cloud.n_atoms
    shift_at_ref = c6 / r_ref**6
    if n < 2:
        return BlockadeStats(None, shift_at_ref, 0.0)
    dists = pdist(cloud.positions)
    shifts = c6 / dists**6
    fraction = float(np.mean(shifts > shift_threshold))
    mean_neighbors = 2.0 * float(np.count_nonzero(dists < r_ref)) / n
    return BlockadeStats(fraction, shift_at_ref, mean_neighbors)


def collective_rabi(p: SystemParams) -> float:
    """Two-photon collective Rabi frequency sqrt(N)*W_a*W_b/(2|Delta|), rad/us."""
    if p.delta_int == 0:
        raise ValueError("intermediate-state detuning must be nonzero")
    return math.sqrt(p.n_atoms) * p.omega_d2 * p.omega_109s / (2.0 * abs(p.delta_int))


def collective_coupling(g_n: Sequence[float]) -> float:
    """Root-sum-square of the single-atom couplings."""
    arr = np.asarray(g_n, dtype=float)
    if arr.size == 0:
        raise ValueError("g_n must be non-empty")
    if np.any(arr < 0):
        raise ValueError("single-atom couplings must be >= 0")
    return float(np.sqrt(np.sum(arr**2)))


def uniform_couplings(p: SystemParams) -> np.ndarray:
    """Uniform per-atom breakdown g_n = g/sqrt(N) of the collective coupling."""
    return np.full(p.n_atoms, p.g / math.sqrt(p.n_atoms))


def motional_dephasing_time(p: SystemParams) -> float:
    """Thermal-motion dephasing time of the collective Rydberg coherence, us.

    The coherence decays as exp(-t^2/tau^2) with
    tau = sqrt(m / k_B T) / |k_sum|, where k_sum is the vector sum of the two
    drive wavevectors.
    """
    if not p.temperature > 0:
        raise ValueError("temperature must be > 0")
    k_sum_per_um = math.sqrt(
        p.k_d2**2 + p.k_109s**2
        + 2.0 * p.k_d2 * p.k_109s * math.cos(p.angle_drive))
    k_sum_per_m = k_sum_per_um * 1.0e6
    t_kelvin = p.temperature * 1.0e-6
    tau_s = math.sqrt(p.atom_mass / (BOLTZMANN_J_PER_K * t_kelvin)) / k_sum_per_m
    return tau_s * 1.0e6


def combined_dephasing(times: Sequence[float]) -> float:
    """Quadrature combination of independent Gaussian decay times.

    Exact for channels that each contribute exp(-t^2/tau_i^2); the result is
    never larger than the smallest input.
    """
    arr = np.asarray(times, dtype=float)
    if arr.size == 0:
        raise ValueError("times must be non-empty")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("all dephasing times must be finite and > 0")
    return float(1.0 / np.sqrt(np.sum(arr**-2)))


def rabi_spread_dephasing(omega: float, rel_rms: float = DEFAULT_RABI_RMS) -> float:
    """Gaussian e^-1 decay time of the averaged oscillation envelope, us.

    A Gaussian spread of Rabi frequencies with relative rms ``rel_rms``
    averages cos(W t) to cos(W t)*exp(-t^2/tau^2) with
    tau = sqrt(2)/(rel_rms * omega).
    """
    if not omega > 0:
        raise ValueError("omega must be > 0")
    if rel_rms < MIN_RABI_RMS:
        raise ValueError(f"rel_rms below guard {MIN_RABI_RMS}: dephasing time diverges")
    return math.sqrt(2.0) / (rel_rms * omega)
