"""Command-line front end: sweeps, shot simulations, optimization and fits.

Every subcommand reads a plain-text config (defaults when omitted), writes
plot-ready CSV plus a machine-readable JSON summary into --out, and drops a
run manifest alongside. Re-running a manifest reproduces the outputs
byte-for-byte: all floats are formatted at 12 significant digits and every
random stream is derived from the recorded master seed.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure.
SUPERATOM_THREADS caps worker threads for batch simulation.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, detection, dynamics, ensemble, fitting, spectra
from .params import (ConfigError, SystemParams, angular_to_mhz,
                     default_params, from_config, load_config, mhz_to_angular)


class UsageError(ValueError):
    """Bad flag combination or value; maps to exit code 2."""


_NUMERICAL_ERRORS = (spectra.SpectraError, detection.QuadratureError,
                     fitting.FitError, FloatingPointError)


# ---------------------------------------------------------------------------
# output helpers

def _round12(obj):
    """Normalize floats to 12 significant digits and numpy scalars to
    builtins, recursively."""
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}")
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(_round12(obj), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv_lines(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(f"{v:.12g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _n_threads() -> int:
    raw = os.environ.get("SUPERATOM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load_params(config: str | None) -> SystemParams:
    return load_config(config) if config else default_params()


# ---------------------------------------------------------------------------
# subcommand runners: (params, opts, seed, outdir) -> output file names

def run_spectra(p: SystemParams, opts: dict, seed: int, outdir: Path) -> list[str]:
    lo, hi, n = opts["delta_min_mhz"], opts["delta_max_mhz"], int(opts["points"])
    blocked = bool(opts["blocked"])
    if lo >= hi:
        raise UsageError("--delta-min-mhz must be below --delta-max-mhz")
    if n < 2:
        raise UsageError("--points must be at least 2")
    grid = np.linspace(mhz_to_angular(lo), mhz_to_angular(hi), n)
    table = spectra.sweep(p, grid, blocked=blocked)

    t = table.transmission
    interior = np.flatnonzero((t[1:-1] > t[:-2]) & (t[1:-1] > t[2:])) + 1
    peak_deltas = sorted(angular_to_mhz(table.delta[i]) for i in interior)

    at_zero = spectra.ProbeCondition.co_swept(0.0, blocked=blocked)
    r_here = spectra.reflection_amplitude(p, at_zero)
    r_g = spectra.reflection_amplitude(p, spectra.ProbeCondition.co_swept(0.0))
    r_b = spectra.reflection_amplitude(p, spectra.ProbeCondition.co_swept(0.0, blocked=True))

    tau_p = None
    sat_flux = None
    if not blocked and p.omega_c > 0:
        tau_p = spectra.polariton_lifetime(p)
        sat_flux = 1.0 / (2.0 * tau_p)

    summary = {
        "blocked": blocked,
        "peak_delta_mhz": peak_deltas,
        "transmission_at_resonance": spectra.transmission(p, at_zero),
        "reflectivity_at_resonance": abs(r_here) ** 2,
        "phase_at_resonance_rad": float(np.angle(r_here)),
        "phase_ground_rad": float(np.angle(r_g)),
        "phase_blocked_rad": float(np.angle(r_b)),
        "phase_difference_rad": abs(float(np.angle(r_g)) - float(np.angle(r_b))),
        "tau_p_us": tau_p,
        "saturation_flux_mhz": sat_flux,
    }
    rows = [(angular_to_mhz(d), tv, rv, ph) for d, tv, rv, ph in table.rows()]
    _write_text(outdir / "spectrum.csv",
                _csv_lines(["delta_MHz", "transmission", "reflectivity", "phase_rad"], rows))
    _write_json(outdir / "spectra_summary.json", summary)
    return ["spectrum.csv", "spectra_summary.json"]


def run_rabi(p: SystemParams, opts: dict, seed: int, outdir: Path) -> list[str]:
    t_max, n_pts, shots = opts["t_max_us"], int(opts["points"]), int(opts["shots"])
    if n_pts < 8:
        raise UsageError("--points must be at least 8 for the oscillation fit")
    if shots < 1:
        raise UsageError("--shots must be positive")
    if t_max <= 0:
        raise UsageError("--t-max-us must be positive")

    omega = ensemble.collective_rabi(p)
    tau_d = dynamics.dephasing_time(p)
    grid = np.linspace(0.0, t_max, n_pts)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    probs = np.array([dynamics.detected_population(t, omega, tau_d) for t in grid])
    hits = rng.binomial(shots, probs)
    pop = hits / shots
    shrunk = (hits + 0.5) / (shots + 1.0)
    err = np.sqrt(shrunk * (1.0 - shrunk) / shots)

    fit = fitting.fit_rabi(list(zip(grid, pop, err)))
    summary = {
        "fit": fit.to_dict(),
        "model_omega_rad_per_us": omega,
        "model_omega_mhz": angular_to_mhz(omega),
        "model_tau_d_us": tau_d,
        "shots_per_point": shots,
        "points": n_pts,
    }
    _write_text(outdir / "rabi_trace.csv",
                _csv_lines(["t_us", "population", "std_error"],
                           zip(grid.tolist(), pop.tolist(), err.tolist())))
    _write_json(outdir / "rabi_fit.json", summary)
    return ["rabi_trace.csv", "rabi_fit.json"]


_COUNTING_FLAGS = ("flux_g", "flux_ratio", "n_threshold")
_HOMODYNE_FLAGS = ("input_flux", "refl_g", "refl_r", "x_threshold")
_DETECT_DEFAULTS = {
    "counting": {"ti_us": 12.0, "flux_g": 0.725, "flux_ratio": 0.045,
                 "n_threshold": 5},
    "homodyne": {"ti_us": 10.0, "input_flux": 0.58, "refl_g": 0.07,
                 "refl_r": 0.51, "x_threshold": 0.27, "tau_r_us": 38.0},
}


def _resolve_detect_opts(p: SystemParams, opts: dict) -> dict:
    """Fill per-mode defaults; reject flags belonging to the other mode."""
    mode = opts["mode"]
    wrong = _HOMODYNE_FLAGS if mode == "counting" else _COUNTING_FLAGS
    offending = [f"--{name.replace('_', '-')}" for name in wrong
                 if opts.get(name) is not None]
    if offending:
        raise UsageError(f"mode={mode} does not accept {', '.join(offending)}")
    needed = _COUNTING_FLAGS if mode == "counting" else _HOMODYNE_FLAGS
    resolved = dict(opts)
    for name in needed + ("ti_us", "tau_r_us"):
        if resolved.get(name) is None:
            default = _DETECT_DEFAULTS[mode].get(name)
            if name == "tau_r_us" and default is None:
                default = p.tau_r
            if default is None:
                raise UsageError(f"mode={mode} requires --{name.replace('_', '-')}")
            resolved[name] = default
    return resolved


def _detect_protocol(p: SystemParams, o: dict) -> dynamics.Protocol:
    common = dict(drive_duration=max(math.pi / ensemble.collective_rabi(p), 1e-3),
                  probe_duration=o["ti_us"], bin_width=o["bin_us"],
                  tau_r=o["tau_r_us"], eta_r=o.get("eta_r"))
    if o["mode"] == "counting":
        return dynamics.Protocol(mode="counting", flux_g=o["flux_g"],
                                 flux_r=o["flux_ratio"] * o["flux_g"], **common)
    return dynamics.Protocol(mode="homodyne", input_flux=o["input_flux"],
                             refl_g=o["refl_g"], refl_r=o["refl_r"], **common)


def run_detect(p: SystemParams, opts: dict, seed: int, outdir: Path) -> list[str]:
    o = _resolve_detect_opts(p, opts)
    shots = int(o["shots"])
    if shots < 100:
        raise UsageError("--shots must be at least 100 (histogram fit needs it)")
    proto = _detect_protocol(p, o)
    eta = proto.eta_r if proto.eta_r is not None else dynamics.preparation_efficiency(p)

    ss_g, ss_r = np.random.SeedSequence(seed).spawn(2)
    n_jobs = _n_threads()
    batch_g = dynamics.batch(proto, False, shots, p, ss_g, n_jobs=n_jobs)
    batch_r = dynamics.batch(proto, True, shots, p, ss_r, n_jobs=n_jobs)

    outputs: list[str] = []
    if o["mode"] == "counting":
        model = detection.CountModel(t_i=o["ti_us"], phi_g=o["flux_g"],
                                     phi_r=o["flux_ratio"] * o["flux_g"],
                                     tau_r=o["tau_r_us"], eta_r=eta)
        totals_g = np.array([dynamics.total_count(r) for r in batch_g])
        totals_r = np.array([dynamics.total_count(r) for r in batch_r])
        n_max = int(max(totals_g.max(), totals_r.max())) + 1
        ns = np.arange(n_max + 1)
        emp_g = np.bincount(totals_g, minlength=n_max + 1) / shots
        emp_r = np.bincount(totals_r, minlength=n_max + 1) / shots
        model_g = detection.count_pmf_ground(model, ns)
        model_r = detection.count_pmf_rydberg(model, ns)
        for name, mod, emp in (("hist_ground.csv", model_g, emp_g),
                               ("hist_rydberg.csv", model_r, emp_r)):
            _write_text(outdir / name,
                        _csv_lines(["n_or_x", "model_p", "empirical_p"],
                                   zip(ns.tolist(), mod.tolist(), emp.tolist())))
            outputs.append(name)
        hist = {int(n): int(c) for n, c in zip(ns, np.bincount(totals_r, minlength=n_max + 1)) if c}
        fit = fitting.fit_count_histogram(hist, t_i=o["ti_us"], phi_g=o["flux_g"],
                                          tau_r=o["tau_r_us"])
        rates = detection.error_rates_counting(model, int(o["n_threshold"]))
        threshold = int(o["n_threshold"])
        fitted = dict(fit.to_dict(),
                      flux_ratio_fitted=fit.params["phi_r"] / o["flux_g"])
    else:
        model = detection.QuadratureModel(t_i=o["ti_us"], phi=o["input_flux"],
                                          refl_g=o["refl_g"], refl_r=o["refl_r"],
                                          tau_r=o["tau_r_us"], eta_r=eta)
        x_g = np.array([dynamics.integrated_quadrature(r) for r in batch_g])
        x_r = np.array([dynamics.integrated_quadrature(r) for r in batch_r])
        lo = math.floor(min(x_g.min(), x_r.min()) * 4) / 4 - 0.25
        hi = math.ceil(max(x_g.max(), x_r.max()) * 4) / 4 + 0.25
        edges = np.arange(lo, hi + 0.125, 0.25)
        centers = 0.5 * (edges[1:] + edges[:-1])
        width = np.diff(edges)
        emp_g = np.histogram(x_g, bins=edges)[0] / shots
        emp_r = np.histogram(x_r, bins=edges)[0] / shots
        model_g = detection.quad_pdf_ground(model, centers) * width
        model_r = detection.quad_pdf_rydberg(model, centers) * width
        for name, mod, emp in (("hist_ground.csv", model_g, emp_g),
                               ("hist_rydberg.csv", model_r, emp_r)):
            _write_text(outdir / name,
                        _csv_lines(["n_or_x", "model_p", "empirical_p"],
                                   zip(centers.tolist(), mod.tolist(), emp.tolist())))
            outputs.append(name)
        fit = fitting.fit_quadrature_histogram(x_r, t_i=o["ti_us"], phi=o["input_flux"],
                                               refl_g=o["refl_g"], tau_r=o["tau_r_us"])
        rates = detection.error_rates_homodyne(model, float(o["x_threshold"]))
        threshold = float(o["x_threshold"])
        fitted = fit.to_dict()

    summary = {
        "mode": o["mode"],
        "shots": shots,
        "t_i_us": o["ti_us"],
        "tau_r_us": o["tau_r_us"],
        "eta_r_used": eta,
        "threshold": threshold,
        "eps_g": rates.eps_g,
        "eps_r": rates.eps_r,
        "fidelity": rates.fidelity,
        "fit": fitted,
    }
    _write_json(outdir / "detect_summary.json", summary)
    outputs.append("detect_summary.json")
    return outputs


def run_optimize(p: SystemParams, opts: dict, seed: int, outdir: Path) -> list[str]:
    o = _resolve_detect_opts(p, opts)
    ti_grid = np.linspace(o["ti_min_us"], o["ti_max_us"], int(o["ti_points"]))
    if o["ti_min_us"] > o["ti_max_us"] or int(o["ti_points"]) < 1:
        raise UsageError("bad t_i grid")
    eta = o.get("eta_r")
    if eta is None:
        eta = dynamics.preparation_efficiency(p)
    if o["mode"] == "counting":
        thr_grid: list = list(range(int(o["nt_min"]), int(o["nt_max"]) + 1))
        model = detection.CountModel(t_i=float(ti_grid[0]), phi_g=o["flux_g"],
                                     phi_r=o["flux_ratio"] * o["flux_g"],
                                     tau_r=o["tau_r_us"], eta_r=eta)
    else:
        thr_grid = np.linspace(o["xt_min"], o["xt_max"], int(o["xt_points"])).tolist()
        model = detection.QuadratureModel(t_i=float(ti_grid[0]), phi=o["input_flux"],
                                          refl_g=o["refl_g"], refl_r=o["refl_r"],
                                          tau_r=o["tau_r_us"], eta_r=eta)
    if not thr_grid:
        raise UsageError("empty threshold grid")

    rows = []
    from dataclasses import replace as _replace
    for ti in ti_grid:
        if o["mode"] == "counting":
            m = _replace(model, t_i=float(ti))
            for thr in thr_grid:
                r = detection.error_rates_counting(m, int(thr))
                rows.append((float(ti), thr, r.eps_g, r.eps_r, r.fidelity))
        else:
            m = _replace(model, t_i=float(ti))
            for thr in thr_grid:
                r = detection.error_rates_homodyne(m, float(thr))
                rows.append((float(ti), thr, r.eps_g, r.eps_r, r.fidelity))
    ti_best, thr_best, rates = detection.optimize_detection(model, ti_grid, thr_grid)

    _write_text(outdir / "fidelity_surface.csv",
                _csv_lines(["t_i_us", "threshold", "eps_g", "eps_r", "fidelity"], rows))
    _write_json(outdir / "optimum.json", {
        "mode": o["mode"],
        "t_i_us": float(ti_best),
        "threshold": thr_best,
        "eps_g": rates.eps_g,
        "eps_r": rates.eps_r,
        "fidelity": rates.fidelity,
        "eta_r_used": eta,
    })
    return ["fidelity_surface.csv", "optimum.json"]


def run_ensemble(p: SystemParams, opts: dict, seed: int, outdir: Path) -> list[str]:
    r_ref = opts["r_ref_um"]
    if r_ref <= 0:
        raise UsageError("--r-ref-um must be positive")
    threshold = opts.get("shift_threshold_mhz")
    if threshold is None:
        threshold = p.c_rr / (4.0 * p.sigma_a) ** 6
    cloud = ensemble.sample_cloud(p, seed)
    stats = ensemble.blockade_stats(cloud, p.c_rr, r_ref, threshold)

    payload = {
        "n_atoms": p.n_atoms,
        "sigma_a_um": p.sigma_a,
        "c6_mhz_um6": p.c_rr,
        "r_ref_um": r_ref,
        "shift_threshold_mhz": threshold,
        "fraction_blockaded": stats.fraction_blockaded,
        "shift_at_quantile_mhz": stats.shift_at_quantile,
        "mean_neighbors_within": stats.mean_neighbors_within,
    }
    if stats.fraction_blockaded is None:
        payload["note"] = "fraction undefined: a single atom forms no pairs"
    _write_text(outdir / "cloud.csv",
                _csv_lines(["x_um", "y_um", "z_um"],
                           (tuple(row) for row in cloud.positions.tolist())))
    _write_json(outdir / "blockade.json", payload)
    return ["cloud.csv", "blockade.json"]


_RUNNERS = {
    "spectra": run_spectra,
    "rabi": run_rabi,
    "detect": run_detect,
    "optimize": run_optimize,
    "ensemble": run_ensemble,
}


def _execute(subcommand: str, config_values: dict, opts: dict, seed: int,
             out: str) -> int:
    p = from_config(config_values)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    outputs = _RUNNERS[subcommand](p, opts, seed, outdir)
    manifest = {
        "tool": "superatom-lab",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config_values,
        "options": opts,
        "outputs": outputs,
        "duration_s": time.monotonic() - started,
    }
    _write_json(outdir / "manifest.json", manifest)
    return 0


def run_from_manifest(manifest_path: str, out: str) -> int:
    doc = json.loads(Path(manifest_path).read_text())
    return _execute(doc["subcommand"], doc["config"], doc["options"],
                    int(doc["seed"]), out)


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="parameter file (key = value lines); "
                                     "defaults to the reference set")
    sp.add_argument("--seed", type=int, default=1, help="master RNG seed")
    sp.add_argument("--out", default="out", help="output directory")


def _add_detect_model_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--mode", choices=("counting", "homodyne"), default="counting")
    sp.add_argument("--ti-us", type=float, default=None,
                    help="integration window (default 12 counting / 10 homodyne)")
    sp.add_argument("--bin-us", type=float, default=2.0, help="record bin width")
    sp.add_argument("--tau-r-us", type=float, default=None,
                    help="Rydberg lifetime (default: config value; 38 for homodyne)")
    sp.add_argument("--eta-r", type=float, default=None,
                    help="preparation efficiency override")
    sp.add_argument("--flux-g", type=float, default=None,
                    help="counting: detected ground-state flux, photons/us")
    sp.add_argument("--flux-ratio", type=float, default=None,
                    help="counting: blockaded/ground flux ratio")
    sp.add_argument("--input-flux", type=float, default=None,
                    help="homodyne: cavity input flux, photons/us")
    sp.add_argument("--refl-g", type=float, default=None,
                    help="homodyne: ground-state reflectivity")
    sp.add_argument("--refl-r", type=float, default=None,
                    help="homodyne: Rydberg-state reflectivity")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="superatom-lab",
        description="Cavity-superatom spectra, shot simulation, detection "
                    "optimization and fits. Outputs CSV + JSON with a run manifest.",
        epilog="SUPERATOM_THREADS caps worker threads for batch simulation.")
    ap.add_argument("--version", action="version", version=f"superatom-lab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("spectra", help="co-swept probe spectrum and summary")
    _add_common(sp)
    sp.add_argument("--delta-min-mhz", type=float, default=-20.0)
    sp.add_argument("--delta-max-mhz", type=float, default=20.0)
    sp.add_argument("--points", type=int, default=801)
    sp.add_argument("--blocked", action="store_true",
                    help="blockaded superatom: control decoupled (omega_c = 0)")

    sp = sub.add_parser("rabi", help="simulate a drive-duration scan and fit it")
    _add_common(sp)
    sp.add_argument("--t-max-us", type=float, default=4.0)
    sp.add_argument("--points", type=int, default=41)
    sp.add_argument("--shots", type=int, default=200, help="detections per point")

    sp = sub.add_parser("detect", help="simulate detection batches, fit histograms")
    _add_common(sp)
    _add_detect_model_flags(sp)
    sp.add_argument("--shots", type=int, default=400)
    sp.add_argument("--n-threshold", type=int, default=None,
                    help="counting: classify ground at or above this count")
    sp.add_argument("--x-threshold", type=float, default=None,
                    help="homodyne: classify Rydberg above this quadrature")

    sp = sub.add_parser("optimize", help="grid-search (t_i, threshold) for fidelity")
    _add_common(sp)
    _add_detect_model_flags(sp)
    sp.add_argument("--ti-min-us", type=float, default=4.0)
    sp.add_argument("--ti-max-us", type=float, default=24.0)
    sp.add_argument("--ti-points", type=int, default=21)
    sp.add_argument("--nt-min", type=int, default=1)
    sp.add_argument("--nt-max", type=int, default=12)
    sp.add_argument("--xt-min", type=float, default=-1.0)
    sp.add_argument("--xt-max", type=float, default=3.0)
    sp.add_argument("--xt-points", type=int, default=41)

    sp = sub.add_parser("ensemble", help="sample a cloud, write blockade statistics")
    _add_common(sp)
    sp.add_argument("--r-ref-um", type=float, default=2.8,
                    help="neighbor radius and pair-shift reference distance")
    sp.add_argument("--shift-threshold-mhz", type=float, default=None,
                    help="blockade threshold (default: c_rr/(4 sigma_a)^6)")

    sp = sub.add_parser("rerun", help="re-execute a recorded manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", default="out")
    return ap


_OPT_KEYS = {
    "spectra": ("delta_min_mhz", "delta_max_mhz", "points", "blocked"),
    "rabi": ("t_max_us", "points", "shots"),
    "detect": ("mode", "shots", "ti_us", "bin_us", "tau_r_us", "eta_r",
               "flux_g", "flux_ratio", "n_threshold",
               "input_flux", "refl_g", "refl_r", "x_threshold"),
    "optimize": ("mode", "ti_us", "bin_us", "tau_r_us", "eta_r",
                 "flux_g", "flux_ratio", "input_flux", "refl_g", "refl_r",
                 "ti_min_us", "ti_max_us", "ti_points",
                 "nt_min", "nt_max", "xt_min", "xt_max", "xt_points"),
    "ensemble": ("r_ref_um", "shift_threshold_mhz"),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2
        return int(exc.code) if exc.code is not None else 0

    try:
        if args.subcommand == "rerun":
            return run_from_manifest(args.manifest, args.out)
        config_values = {}
        if args.config:
            p = load_config(args.config)  # validates; raises ConfigError
            config_values = p.to_config()
        opts = {key: getattr(args, key) for key in _OPT_KEYS[args.subcommand]}
        return _execute(args.subcommand, config_values, opts, args.seed, args.out)
    except (UsageError, ConfigError) as exc:
        print(f"superatom-lab: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"superatom-lab: error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"superatom-lab: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"superatom-lab: cannot write outputs: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
