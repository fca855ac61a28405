"""Parameter estimation: trace fits, histogram maximum likelihood, spectrum fits.

All fitters share one engine: a bounded Nelder-Mead simplex with multiple
starts (the objective surfaces are smooth and at most six-dimensional), with
standard errors from the finite-difference curvature of the objective at the
optimum. Weighted least-squares objectives are chi^2 sums; histogram fits
maximize the exact categorical (counting) or binned multinomial (quadrature)
log likelihood. Bound-constrained parameters that finish on a bound carry
one-sided uncertainties.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import detection, spectra
from .params import TWO_PI, SystemParams

#: converged requires the projected gradient norm below this, relative to 1+|objective|
GRADIENT_TOL = 1.0e-2


class FitError(RuntimeError):
    """Raised when a fit cannot be carried out."""


class DegenerateDataError(FitError):
    """The data carry no usable signal for the requested model."""


@dataclass
class FitResult:
    """Estimates, curvature-based standard errors and diagnostics.

    ``at_bound`` marks parameters that finished on a bound ("lower"/"upper");
    their errors are one-sided, pointing into the feasible region.
    ``history`` is the accepted objective value per iteration of the winning
    start (non-increasing).
    """

    params: dict[str, float]
    errors: dict[str, float]
    objective: float
    iterations: int
    converged: bool
    at_bound: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    errors_bootstrap: dict[str, float] | None = None
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "params": dict(self.params),
            "errors": dict(self.errors),
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "at_bound": dict(self.at_bound),
            "warnings": list(self.warnings),
        }
        if self.errors_bootstrap is not None:
            out["errors_bootstrap"] = dict(self.errors_bootstrap)
        return out


# ---------------------------------------------------------------------------
# engine

def _minimize_one(objective, x0, bounds, history=None):
    def cb(intermediate_result):
        if history is not None:
            history.append(float(intermediate_result.fun))

    return minimize(
        objective, x0, method="Nelder-Mead", bounds=bounds,
        callback=cb,
        options={"maxiter": 6000, "maxfev": 12000, "xatol": 1e-10,
                 "fatol": 1e-12, "adaptive": True},
    )


def _hessian(f, x, steps):
    n = len(x)
    h = np.asarray(steps)
    hess = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n); ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n); ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


def _gradient(f, x, steps):
    g = np.empty(len(x))
    for i in range(len(x)):
        ei = np.zeros(len(x)); ei[i] = steps[i]
        g[i] = (f(x + ei) - f(x - ei)) / (2.0 * steps[i])
    return g


def _fit(objective, names: Sequence[str], starts, bounds,
         *, error_scale: float) -> FitResult:
    """Multi-start bounded simplex plus curvature errors.

    ``error_scale`` is 2 for chi^2 objectives and 1 for negative log
    likelihoods (covariance = error_scale * inverse Hessian).
    """
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    best = None
    best_history: list[float] = []
    iterations = 0
    for x0 in starts:
        history: list[float] = []
        res = _minimize_one(objective, np.clip(x0, lo, hi), bounds, history)
        iterations += res.nit
        if best is None or res.fun < best.fun:
            best = res
            best_history = history
    assert best is not None
    x = np.asarray(best.x, dtype=float)

    span = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    steps = np.maximum(1e-4 * np.maximum(np.abs(x), 1e-3 * span), 1e-9)
    at_bound: dict[str, str] = {}
    x_eval = x.copy()
    for i, name in enumerate(names):
        if x[i] - lo[i] < 2 * steps[i]:
            at_bound[name] = "lower"
            x_eval[i] = lo[i] + 2 * steps[i]
        elif hi[i] - x[i] < 2 * steps[i]:
            at_bound[name] = "upper"
            x_eval[i] = hi[i] - 2 * steps[i]

    warnings: list[str] = []
    errors = {}
    try:
        hess = _hessian(objective, x_eval, steps)
        cond = np.linalg.cond(hess)
        if not np.all(np.isfinite(hess)) or cond > 1e8:
            warnings.append(
                "flat objective: parameters weakly identified (near-singular curvature)")
        cov = error_scale * np.linalg.pinv(hess)
        diag = np.clip(np.diag(cov), 0.0, None)
        errors = {name: float(math.sqrt(d)) for name, d in zip(names, diag)}
    except (np.linalg.LinAlgError, ValueError):
        warnings.append("curvature estimation failed")
        errors = {name: float("nan") for name in names}

    grad = _gradient(objective, x_eval, steps)
    for i, name in enumerate(names):
        side = at_bound.get(name)
        if (side == "lower" and grad[i] > 0) or (side == "upper" and grad[i] < 0):
            grad[i] = 0.0  # pushing into the bound: stationary on the feasible set
    gnorm = float(np.max(np.abs(grad))) if len(grad) else 0.0
    converged = bool(best.success and gnorm <= GRADIENT_TOL * (1.0 + abs(best.fun)))

    return FitResult(
        params={name: float(v) for name, v in zip(names, x)},
        errors=errors,
        objective=float(best.fun),
        iterations=iterations,
        converged=converged,
        at_bound=at_bound,
        warnings=warnings,
        history=best_history,
    )


def _bootstrap(refit: Callable[[np.random.Generator], Mapping[str, float]],
               names: Sequence[str], n_resamples: int, seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    draws = {name: [] for name in names}
    for _ in range(n_resamples):
        est = refit(rng)
        for name in names:
            draws[name].append(est[name])
    return {name: float(np.std(vals, ddof=1)) for name, vals in draws.items()}


def _unpack_trace(trace, min_points: int):
    arr = np.asarray(list(trace), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("trace must be a sequence of (t, value, std_error)")
    if arr.shape[0] < min_points:
        raise ValueError(f"need at least {min_points} points, got {arr.shape[0]}")
    t, y, sig = arr[:, 0], arr[:, 1], arr[:, 2]
    if np.any(sig <= 0):
        raise ValueError("standard errors must be > 0")
    order = np.argsort(t)
    return t[order], y[order], sig[order]


# ---------------------------------------------------------------------------
# Rabi trace

def _dominant_frequency(t, y, sig) -> float:
    """Angular frequency of the dominant oscillation, from a weighted
    sinusoid scan (grid periodogram)."""
    span = t[-1] - t[0]
    dt = np.median(np.diff(t))
    omegas = np.linspace(TWO_PI / (4.0 * span), math.pi / dt, 600)
    w = 1.0 / sig**2
    best_om, best_res = omegas[0], np.inf
    for om in omegas:
        basis = np.column_stack([np.ones_like(t), np.cos(om * t), np.sin(om * t)])
        bw = basis * np.sqrt(w)[:, None]
        coef, *_ = np.linalg.lstsq(bw, y * np.sqrt(w), rcond=None)
        res = float(np.sum((y * np.sqrt(w) - bw @ coef) ** 2))
        if res < best_res:
            best_om, best_res = om, res
    return float(best_om)


def rabi_trace_model(t, offset: float, amplitude: float, omega: float,
                     tau_d: float):
    """Rabi oscillation with a Gaussian-decaying contrast envelope."""
    return offset + amplitude * (1.0 - np.cos(omega * t) * np.exp(-(t / tau_d) ** 2)) / 2.0


def fit_rabi(trace, *, bootstrap: int = 0, bootstrap_seed: int = 0) -> FitResult:
    """Weighted least squares of offset + A[1 - cos(Wt)exp(-t^2/tau^2)]/2.

    ``trace`` holds (t_us, population, std_error) points: at least 8,
    spanning one oscillation period. Multi-starts over the frequency are
    seeded from the trace's dominant periodogram peak.
    """
    t, y, sig = _unpack_trace(trace, min_points=8)
    if float(np.ptp(y)) < 3.0 * float(np.median(sig)):
        raise DegenerateDataError("trace is constant within noise")
    om0 = _dominant_frequency(t, y, sig)
    span = t[-1] - t[0]
    if om0 * span < TWO_PI:
        raise DegenerateDataError("trace spans less than one oscillation period")

    names = ("omega", "tau_d", "amplitude", "offset")

    def obj_named(th):
        om, tau, amp, off = th
        return float(np.sum(((y - rabi_trace_model(t, off, amp, om, tau)) / sig) ** 2))

    dt = float(np.median(np.diff(t)))
    bounds = [(om0 / 8.0, 1.5 * math.pi / dt),
              (1e-2 * span, 1e3 * span),
              (0.0, 2.0),
              (-1.0, 1.0)]
    amp0 = float(np.ptp(y))
    off0 = float(np.min(y))
    starts = [np.array([om, tau, amp0, off0])
              for om in (om0, 0.5 * om0, 2.0 * om0)
              for tau in (0.5 * span, 2.0 * span)]
    result = _fit(obj_named, names, starts, bounds, error_scale=2.0)

    if bootstrap > 0:
        center = np.array([result.params[n] for n in names])

        def refit(rng):
            idx = rng.integers(0, len(t), len(t))
            tb, yb, sb = t[idx], y[idx], sig[idx]

            def obj(th):
                om, tau, amp, off = th
                return float(np.sum(((yb - rabi_trace_model(tb, off, amp, om, tau)) / sb) ** 2))

            res = _minimize_one(obj, center, bounds)
            return dict(zip(names, res.x))

        result.errors_bootstrap = _bootstrap(refit, names, bootstrap, bootstrap_seed)
    return result


# ---------------------------------------------------------------------------
# lifetime trace

def lifetime_trace_model(t, rate0: float, tau_r: float, floor: float,
                         variant: str):
    if variant == "recovery":
        return floor + rate0 * (1.0 - np.exp(-t / tau_r))
    return floor + rate0 * np.exp(-t / tau_r)


def fit_lifetime(trace, variant: str = "recovery", *, bootstrap: int = 0,
                 bootstrap_seed: int = 0) -> FitResult:
    """Weighted least squares of the mean-rate recovery floor + r0(1 - e^{-t/tau})
    (or a pure exponential decay with ``variant="decay"``)."""
    if variant not in ("recovery", "decay"):
        raise ValueError("variant must be 'recovery' or 'decay'")
    t, y, sig = _unpack_trace(trace, min_points=4)
    span = t[-1] - t[0]

    names = ("rate0", "tau_r", "floor")

    def obj(th):
        return float(np.sum(((y - lifetime_trace_model(t, *th, variant)) / sig) ** 2))

    scale = float(np.max(np.abs(y))) + 1e-12
    bounds = [(0.0, 20.0 * scale), (1e-3 * span, 1e4 * span), (-5.0 * scale, 5.0 * scale)]
    amp0 = float(np.ptp(y)) + 1e-12
    floor0 = float(np.min(y))
    starts = [np.array([amp0, tau, floor0]) for tau in (span / 3.0, span, 3.0 * span)]
    result = _fit(obj, names, starts, bounds, error_scale=2.0)

    if bootstrap > 0:
        center = np.array([result.params[n] for n in names])

        def refit(rng):
            idx = rng.integers(0, len(t), len(t))
            tb, yb, sb = t[idx], y[idx], sig[idx]

            def o(th):
                return float(np.sum(((yb - lifetime_trace_model(tb, *th, variant)) / sb) ** 2))

            return dict(zip(names, _minimize_one(o, center, bounds).x))

        result.errors_bootstrap = _bootstrap(refit, names, bootstrap, bootstrap_seed)
    return result


# ---------------------------------------------------------------------------
# counting histogram

def fit_count_histogram(hist: Mapping[int, int], *, t_i: float, phi_g: float,
                        tau_r: float, bootstrap: int = 0,
                        bootstrap_seed: int = 0) -> FitResult:
    """Maximum likelihood for (phi_r, eta_r) of the Rydberg-preparation count
    distribution, with t_i, phi_g and tau_r held fixed.

    eta_r is constrained to [0, 1]; an estimate on the bound carries a
    one-sided interval. A histogram that is equally well described along the
    (phi_r -> phi_g, eta_r -> 0) degeneracy is flagged with a
    flat-likelihood warning.
    """
    ns = np.array(sorted(hist), dtype=int)
    counts = np.array([hist[int(n)] for n in ns], dtype=float)
    total = counts.sum()
    if total < 100:
        raise ValueError("need at least 100 histogram occurrences")

    names = ("phi_r", "eta_r")

    def nll(th):
        phi_r, eta = th
        m = detection.CountModel(t_i=t_i, phi_g=phi_g, phi_r=phi_r,
                                 tau_r=tau_r, eta_r=eta)
        p = detection.count_pmf_rydberg(m, ns)
        return -float(np.sum(counts * np.log(np.maximum(p, 1e-300))))

    bounds = [(0.0, phi_g), (0.0, 1.0)]
    starts = [np.array([f * phi_g, eta])
              for f in (0.02, 0.2) for eta in (0.8, 0.995)]
    result = _fit(nll, names, starts, bounds, error_scale=1.0)

    if bootstrap > 0:
        p_emp = counts / total
        center = np.array([result.params[n] for n in names])

        def refit(rng):
            boot = rng.multinomial(int(total), p_emp)

            def o(th):
                phi_r, eta = th
                m = detection.CountModel(t_i=t_i, phi_g=phi_g, phi_r=phi_r,
                                         tau_r=tau_r, eta_r=eta)
                p = detection.count_pmf_rydberg(m, ns)
                return -float(np.sum(boot * np.log(np.maximum(p, 1e-300))))

            return dict(zip(names, _minimize_one(o, center, bounds).x))

        result.errors_bootstrap = _bootstrap(refit, names, bootstrap, bootstrap_seed)
    return result


# ---------------------------------------------------------------------------
# quadrature histogram

def _fd_bin_edges(samples: np.ndarray) -> np.ndarray:
    """Freedman-Diaconis bin edges over the sample range."""
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = q75 - q25
    n = len(samples)
    width = 2.0 * iqr / n ** (1.0 / 3.0)
    if width <= 0:
        width = 3.49 * (np.std(samples) + 1e-12) / n ** (1.0 / 3.0)
    lo, hi = samples.min(), samples.max()
    n_bins = max(int(math.ceil((hi - lo) / width)), 3)
    return np.linspace(lo, hi, n_bins + 1)


def fit_quadrature_histogram(samples, *, t_i: float, phi: float, refl_g: float,
                             tau_r: float, bootstrap: int = 0,
                             bootstrap_seed: int = 0) -> FitResult:
    """Maximum likelihood for (refl_r, eta_r) of the Rydberg-preparation
    quadrature distribution, binned by the Freedman-Diaconis rule."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 100:
        raise ValueError("need at least 100 quadrature samples")

    names = ("refl_r", "eta_r")
    edges = _fd_bin_edges(samples)
    counts, _ = np.histogram(samples, bins=edges)
    counts = counts.astype(float)
    # 5-point Gauss-Legendre nodes per bin for the bin-probability integrals
    gl_x, gl_w = np.polynomial.legendre.leggauss(5)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
    weights = (half[:, None] * gl_w[None, :]).ravel()

    def nll(th):
        refl_r, eta = th
        m = detection.QuadratureModel(t_i=t_i, phi=phi, refl_g=refl_g,
                                      refl_r=refl_r, tau_r=tau_r, eta_r=eta)
        pdf = detection.quad_pdf_rydberg(m, nodes)
        p_bin = (pdf * weights).reshape(len(mid), 5).sum(axis=1)
        return -float(np.sum(counts * np.log(np.maximum(p_bin, 1e-300))))

    bounds = [(0.0, 1.0), (0.0, 1.0)]
    starts = [np.array([r, eta]) for r in (0.2, 0.6) for eta in (0.8, 0.995)]
    result = _fit(nll, names, starts, bounds, error_scale=1.0)

    if bootstrap > 0:
        center = np.array([result.params[n] for n in names])

        def refit(rng):
            boot = samples[rng.integers(0, samples.size, samples.size)]
            bcounts, _ = np.histogram(boot, bins=edges)

            def o(th):
                refl_r, eta = th
                m = detection.QuadratureModel(t_i=t_i, phi=phi, refl_g=refl_g,
                                              refl_r=refl_r, tau_r=tau_r, eta_r=eta)
                pdf = detection.quad_pdf_rydberg(m, nodes)
                p_bin = (pdf * weights).reshape(len(mid), 5).sum(axis=1)
                return -float(np.sum(bcounts * np.log(np.maximum(p_bin, 1e-300))))

            return dict(zip(names, _minimize_one(o, center, bounds).x))

        result.errors_bootstrap = _bootstrap(refit, names, bootstrap, bootstrap_seed)
    return result


# ---------------------------------------------------------------------------
# spectrum

_SPECTRUM_FREE = ("g", "kappa", "kappa0", "gamma", "gamma_r", "omega_c")


def fit_spectrum(points, mode: str, free: Sequence[str], base: SystemParams,
                 *, bootstrap: int = 0, bootstrap_seed: int = 0) -> FitResult:
    """Weighted least squares of the closed-form co-swept spectrum.

    ``points`` holds (delta_rad_per_us, value, std_error); ``free`` names the
    rates allowed to vary (subset of g, kappa, kappa0, gamma, gamma_r,
    omega_c), every other rate pinned to ``base``. Multi-starts scan factors
    of the starting g and omega_c.
    """
    if mode not in ("transmission", "reflectivity"):
        raise ValueError("mode must be 'transmission' or 'reflectivity'")
    free = tuple(free)
    for name in free:
        if name not in _SPECTRUM_FREE:
            raise ValueError(f"cannot free parameter {name!r}")
    t, y, sig = _unpack_trace(points, min_points=max(2 * len(free), 1))

    def model_values(p: SystemParams):
        out = np.empty_like(t)
        for i, d in enumerate(t):
            c = spectra.ProbeCondition.co_swept(float(d))
            if mode == "transmission":
                out[i] = spectra.transmission(p, c)
            else:
                out[i] = abs(spectra.reflection_amplitude(p, c)) ** 2
        return out

    def chi2_of(p: SystemParams) -> float:
        return float(np.sum(((y - model_values(p)) / sig) ** 2))

    if not free:
        return FitResult(params={}, errors={}, objective=chi2_of(base),
                         iterations=0, converged=True)

    def obj(th):
        p = base.replace(**dict(zip(free, th)))
        penalty = 0.0
        if p.kappa0 > p.kappa:  # unphysical: coupler loss beyond total loss
            penalty = 1e6 * (1.0 + (p.kappa0 - p.kappa) ** 2)
        return chi2_of(p) + penalty

    base_vals = np.array([getattr(base, name) for name in free])
    bounds = [(0.0, 10.0 * max(v, TWO_PI)) for v in base_vals]
    factor_sets = []
    for factors_g in ((0.5, 1.0, 2.0) if "g" in free else (1.0,)):
        for factors_oc in ((0.5, 1.0, 2.0) if "omega_c" in free else (1.0,)):
            start = base_vals.copy()
            if "g" in free:
                start[free.index("g")] *= factors_g
            if "omega_c" in free:
                start[free.index("omega_c")] *= factors_oc
            factor_sets.append(start)
    result = _fit(obj, free, factor_sets, bounds, error_scale=2.0)

    if bootstrap > 0:
        center = np.array([result.params[n] for n in free])

        def refit(rng):
            idx = rng.integers(0, len(t), len(t))
            tb, yb, sb = t[idx], y[idx], sig[idx]

            def o(th):
                p = base.replace(**dict(zip(free, th)))
                out = np.empty_like(tb)
                for i, d in enumerate(tb):
                    c = spectra.ProbeCondition.co_swept(float(d))
                    out[i] = (spectra.transmission(p, c) if mode == "transmission"
                              else abs(spectra.reflection_amplitude(p, c)) ** 2)
                pen = 1e6 * (1.0 + (p.kappa0 - p.kappa) ** 2) if p.kappa0 > p.kappa else 0.0
                return float(np.sum(((yb - out) / sb) ** 2)) + pen

            return dict(zip(free, _minimize_one(o, center, bounds).x))

        result.errors_bootstrap = _bootstrap(refit, free, bootstrap, bootstrap_seed)
    return result
