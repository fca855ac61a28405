"""Closed-form detection distributions, error rates and threshold optimization.

Counting mode: the window-integrated photon count of a ground-state superatom
is Poisson with mean t_i*phi_G. For a Rydberg preparation the count mixes a
no-jump Poisson branch (weight exp(-t_i/tau_R), mean t_i*phi_R) with a jump
branch integrated over the exponential jump-time density; a jump at time t
leaves a Poisson count of mean n_J(t) = t*phi_R + (t_i - t)*phi_G. Imperfect
preparation admixes the ground-state law with weight 1 - eta_R.

Homodyne mode: the integrated X quadrature is Gaussian with rms width
1/sqrt(2) (vacuum limited). The ground-state branch is centered on
-sqrt(2 t_i phi R_G); the Rydberg branch on +sqrt(2 t_i phi R_R), with the
analogous jump mixture interpolating linearly between the two centers.

State classification: count n >= n_t (or quadrature X <= X_t) means ground;
below-threshold counts (above-threshold quadratures) mean Rydberg. eps_G is
the probability of misclassifying a ground-state superatom, eps_R the
probability of missing a Rydberg preparation, and the detection fidelity is
1 - max(eps_G, eps_R).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import erfc, gammaln

_SQRT_PI = math.sqrt(math.pi)
_QUAD_RTOL = 1.0e-8


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach its tolerance."""


@dataclass(frozen=True)
class CountModel:
    """Parameters of the photon-counting detection distributions."""

    t_i: float      # integration window, us
    phi_g: float    # detected flux, ground state, photons/us
    phi_r: float    # detected flux, blockaded state, photons/us
    tau_r: float    # Rydberg lifetime, us
    eta_r: float    # preparation efficiency

    def __post_init__(self) -> None:
        if not self.t_i > 0:
            raise ValueError("t_i must be > 0")
        if not 0.0 <= self.phi_r <= self.phi_g:
            raise ValueError("fluxes must satisfy 0 <= phi_r <= phi_g")
        if not self.tau_r > 0:
            raise ValueError("tau_r must be > 0")
        if not 0.0 <= self.eta_r <= 1.0:
            raise ValueError("eta_r must be in [0, 1]")


@dataclass(frozen=True)
class QuadratureModel:
    """Parameters of the homodyne detection distributions."""

    t_i: float      # integration window, us
    phi: float      # photon flux at the cavity input, photons/us
    refl_g: float   # reflectivity, ground state
    refl_r: float   # reflectivity, Rydberg state
    tau_r: float    # Rydberg lifetime, us
    eta_r: float    # preparation efficiency

    def __post_init__(self) -> None:
        if not self.t_i > 0:
            raise ValueError("t_i must be > 0")
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        for name in ("refl_g", "refl_r"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not self.tau_r > 0:
            raise ValueError("tau_r must be > 0")
        if not 0.0 <= self.eta_r <= 1.0:
            raise ValueError("eta_r must be in [0, 1]")

    @property
    def mean_g(self) -> float:
        return -math.sqrt(2.0 * self.t_i * self.phi * self.refl_g)

    @property
    def mean_r(self) -> float:
        return math.sqrt(2.0 * self.t_i * self.phi * self.refl_r)


@dataclass(frozen=True)
class ErrorRates:
    """False-positive and false-negative probabilities and the fidelity."""

    eps_g: float
    eps_r: float
    fidelity: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("eps_g", "eps_r"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        object.__setattr__(self, "fidelity", 1.0 - max(self.eps_g, self.eps_r))


def _poisson_pmf(n, mu: float) -> np.ndarray:
    """Poisson pmf evaluated in log space; mu = 0 is the point mass at 0."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("counts must be >= 0")
    if mu == 0.0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(mu) - mu - gammaln(n + 1.0))


def _quad(f: Callable, a: float, b: float) -> np.ndarray:
    """Adaptive quadrature at the declared relative tolerance; never truncates
    silently."""
    res, err, info = integrate.quad_vec(
        f, a, b, epsrel=_QUAD_RTOL, epsabs=1.0e-14, full_output=True)
    if not info.success or not np.all(np.isfinite(res)):
        raise QuadratureError(
            f"jump-integral quadrature did not converge (error estimate {err:.3e})")
    return res


def count_pmf_ground(m: CountModel, n) -> float | np.ndarray:
    """Poisson pmf of the ground-state count with mean t_i*phi_g."""
    out = _poisson_pmf(n, m.t_i * m.phi_g)
    return float(out) if np.isscalar(n) else out


def count_pmf_rydberg(m: CountModel, n) -> float | np.ndarray:
    """Count pmf for a Rydberg preparation, including the quantum-jump branch
    and the (1 - eta_r) ground-state admixture."""
    n_arr = np.atleast_1d(np.asarray(n))
    no_jump = math.exp(-m.t_i / m.tau_r) * _poisson_pmf(n_arr, m.t_i * m.phi_r)

    def integrand(t: float) -> np.ndarray:
        mean = t * m.phi_r + (m.t_i - t) * m.phi_g
        return _poisson_pmf(n_arr, mean) * math.exp(-t / m.tau_r) / m.tau_r

    jump = _quad(integrand, 0.0, m.t_i)
    pure = no_jump + jump
    mixed = m.eta_r * pure + (1.0 - m.eta_r) * _poisson_pmf(n_arr, m.t_i * m.phi_g)
    mixed = np.clip(mixed, 0.0, 1.0)
    return float(mixed[0]) if np.isscalar(n) else mixed.reshape(np.shape(n))


def _gauss_pdf(x: np.ndarray, mean) -> np.ndarray:
    # variance 1/2, so the density is exp(-(x-mean)^2)/sqrt(pi)
    return np.exp(-((x - mean) ** 2)) / _SQRT_PI


def _gauss_cdf(x, mean) -> np.ndarray:
    # P(X <= x) for variance 1/2
    return 0.5 * erfc(np.asarray(mean) - np.asarray(x))


def quad_pdf_ground(m: QuadratureModel, x) -> float | np.ndarray:
    """Gaussian quadrature density of the ground state, rms width 1/sqrt(2)."""
    out = _gauss_pdf(np.asarray(x, dtype=float), m.mean_g)
    return float(out) if np.isscalar(x) else out


def _jump_center(m: QuadratureModel, t) -> np.ndarray:
    """Quadrature mean after a jump at time t: linear path from the Rydberg
    accrual to the ground-state accrual."""
    rate_g = math.sqrt(2.0 * m.phi * m.refl_g / m.t_i)
    rate_r = math.sqrt(2.0 * m.phi * m.refl_r / m.t_i)
    return t * rate_r - (m.t_i - t) * rate_g


def quad_pdf_rydberg(m: QuadratureModel, x) -> float | np.ndarray:
    """Quadrature density for a Rydberg preparation: no-jump Gaussian at
    +sqrt(2 t_i phi R_R) weighted exp(-t_i/tau_r), the jump branch, and the
    (1 - eta_r) ground-state admixture."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    no_jump = math.exp(-m.t_i / m.tau_r) * _gauss_pdf(x_arr, m.mean_r)

    def integrand(t: float) -> np.ndarray:
        return _gauss_pdf(x_arr, _jump_center(m, t)) * math.exp(-t / m.tau_r) / m.tau_r

    jump = _quad(integrand, 0.0, m.t_i)
    pure = no_jump + jump
    mixed = m.eta_r * pure + (1.0 - m.eta_r) * _gauss_pdf(x_arr, m.mean_g)
    mixed = np.maximum(mixed, 0.0)
    return float(mixed[0]) if np.isscalar(x) else mixed.reshape(np.shape(x))


def error_rates_counting(m: CountModel, n_t: int) -> ErrorRates:
    """Error rates of the threshold classifier: ground iff n >= n_t."""
    if n_t < 0:
        raise ValueError("n_t must be >= 0")
    if n_t == 0:
        return ErrorRates(eps_g=0.0, eps_r=1.0)
    below = np.arange(n_t)
    eps_g = float(np.sum(count_pmf_ground(m, below)))
    eps_r = 1.0 - float(np.sum(count_pmf_rydberg(m, below)))
    return ErrorRates(eps_g=min(max(eps_g, 0.0), 1.0),
                      eps_r=min(max(eps_r, 0.0), 1.0))


def error_rates_homodyne(m: QuadratureModel, x_t: float) -> ErrorRates:
    """Error rates of the threshold classifier: Rydberg iff X > x_t."""
    eps_g = 1.0 - float(_gauss_cdf(x_t, m.mean_g))
    no_jump = math.exp(-m.t_i / m.tau_r) * float(_gauss_cdf(x_t, m.mean_r))

    def integrand(t: float) -> float:
        return float(_gauss_cdf(x_t, _jump_center(m, t))) * math.exp(-t / m.tau_r) / m.tau_r

    jump = float(_quad(integrand, 0.0, m.t_i))
    pure_below = no_jump + jump
    eps_r = m.eta_r * pure_below + (1.0 - m.eta_r) * float(_gauss_cdf(x_t, m.mean_g))
    return ErrorRates(eps_g=min(max(eps_g, 0.0), 1.0),
                      eps_r=min(max(eps_r, 0.0), 1.0))


def optimize_detection(model: CountModel | QuadratureModel, t_i_grid, threshold_grid,
                       *, flux_of_ti: Callable[[float], float] | None = None,
                       lifetime_tracks_flux: bool = False,
                       ) -> tuple[float, float | int, ErrorRates]:
    """Exhaustive grid search of (t_i, threshold) maximizing the fidelity.

    By default the flux is held fixed while t_i varies; ``flux_of_ti`` maps
    t_i to the ground-state flux (counting) or input flux (homodyne), with
    the blockaded flux scaled proportionally. ``lifetime_tracks_flux``
    additionally scales tau_r inversely with the flux, modeling the observed
    flux-dependent lifetime reduction.

    Ties are broken toward smaller t_i, then smaller threshold.
    """
    t_i_grid = list(t_i_grid)
    threshold_grid = list(threshold_grid)
    if not t_i_grid or not threshold_grid:
        raise ValueError("grids must be non-empty")
    counting = isinstance(model, CountModel)
    base_flux = model.phi_g if counting else model.phi

    best: tuple[float, float | int, ErrorRates] | None = None
    for t_i in sorted(t_i_grid):
        flux = base_flux if flux_of_ti is None else flux_of_ti(t_i)
        tau_r = model.tau_r
        if lifetime_tracks_flux and flux > 0:
            tau_r = model.tau_r * base_flux / flux
        if counting:
            scale = flux / base_flux if base_flux > 0 else 1.0
            m = replace(model, t_i=t_i, phi_g=flux, phi_r=model.phi_r * scale,
                        tau_r=tau_r)
        else:
            m = replace(model, t_i=t_i, phi=flux, tau_r=tau_r)
        for thr in sorted(threshold_grid):
            rates = (error_rates_counting(m, int(thr)) if counting
                     else error_rates_homodyne(m, float(thr)))
            if best is None or rates.fidelity > best[2].fidelity:
                best = (t_i, thr, rates)
    assert best is not None
    return best
