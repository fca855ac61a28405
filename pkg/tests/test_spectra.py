import math

import numpy as np
import pytest

from superatom_lab import spectra
from superatom_lab.params import default_params, mhz_to_angular
from superatom_lab.spectra import (ProbeCondition, SpectraError,
                                   polariton_lifetime, reflection_amplitude,
                                   saturation_flux, sweep, transmission)

TWO_PI = 2.0 * math.pi


def oracle_response(p, delta, omega_c):
    """Independent evaluation of the steady-state response, straight complex
    arithmetic on the co-swept detuning."""
    d_a = delta + 1j * p.kappa
    d_e = delta + 1j * p.gamma
    d_r = delta + 1j * p.gamma_r
    lever = d_e if omega_c == 0 else d_e - omega_c**2 / (4 * d_r)
    denom = d_a - p.g**2 / lever
    t = abs(p.kappa / denom) ** 2
    r = 1 - 2j * p.kappa0 / denom
    return t, r


ZERO = ProbeCondition.co_swept(0.0)
ZERO_BLOCKED = ProbeCondition.co_swept(0.0, blocked=True)


def test_bare_cavity_on_resonance(ref):
    bare = ref.replace(g=0.0)
    assert transmission(bare, ZERO) == pytest.approx(1.0, abs=1e-15)


def test_blocked_resonant_transmission(ref):
    # (kappa*gamma / (kappa*gamma + g^2))^2 = (2.9*3 / (2.9*3 + 100))^2 by hand
    hand = (2.9 * 3.0 / (2.9 * 3.0 + 100.0)) ** 2
    got = transmission(ref, ZERO_BLOCKED)
    assert got == pytest.approx(hand, rel=1e-12)
    assert got == pytest.approx(6.41e-3, abs=5e-6)


def test_eit_resonant_transmission(ref):
    t_oracle, _ = oracle_response(ref, 0.0, ref.omega_c)
    got = transmission(ref, ZERO)
    assert got == pytest.approx(t_oracle, rel=1e-12)
    assert got == pytest.approx(0.831, abs=1e-3)


def test_reflection_bare_cavity(ref):
    bare = ref.replace(g=0.0)
    r = reflection_amplitude(bare, ZERO)
    assert r == pytest.approx(-0.8 + 0j, abs=1e-12)  # 1 - 2*kappa0/kappa
    assert abs(r) ** 2 == pytest.approx(0.64, rel=1e-12)
    assert np.angle(r) == pytest.approx(math.pi, abs=1e-12)


def test_reflection_eit_on(ref):
    _, r_oracle = oracle_response(ref, 0.0, ref.omega_c)
    r = reflection_amplitude(ref, ZERO)
    assert r == pytest.approx(r_oracle, rel=1e-12)
    assert r.real == pytest.approx(-0.641, abs=1e-3)
    assert abs(r) ** 2 == pytest.approx(0.410, abs=1e-3)
    assert np.angle(r) == pytest.approx(math.pi, abs=1e-12)


def test_reflection_blocked(ref):
    _, r_oracle = oracle_response(ref, 0.0, 0.0)
    r = reflection_amplitude(ref, ZERO_BLOCKED)
    assert r == pytest.approx(r_oracle, rel=1e-12)
    assert r.real == pytest.approx(0.856, abs=1e-3)
    assert np.angle(r) == pytest.approx(0.0, abs=1e-12)


def test_blocked_sweep_doublet_positions(ref):
    """The intensity maxima of the split doublet sit at +-10.35 MHz on this
    grid: the gamma-broad atomic line pulls them outward from the mode poles,
    which lie at +-sqrt(g^2 + kappa*gamma - ((kappa+gamma)/2)^2) ~= +-10.0 MHz."""
    grid = np.linspace(-TWO_PI * 20, TWO_PI * 20, 801)
    table = sweep(ref, grid, blocked=True)
    t = table.transmission
    peaks = [table.delta[i] for i in range(1, 800)
             if t[i] > t[i - 1] and t[i] > t[i + 1]]
    assert len(peaks) == 2
    assert peaks[0] == pytest.approx(-TWO_PI * 10.35, abs=1e-9)
    assert peaks[1] == pytest.approx(TWO_PI * 10.35, abs=1e-9)
    pole = math.sqrt(ref.g**2 + ref.kappa * ref.gamma
                     - ((ref.kappa + ref.gamma) / 2.0) ** 2)
    assert pole == pytest.approx(TWO_PI * 10.0, abs=TWO_PI * 1e-3)


def test_eit_sweep_has_resonant_maximum(ref):
    grid = mhz_to_angular(np.linspace(-2.0, 2.0, 41))
    table = sweep(ref, grid)
    assert np.argmax(table.transmission) == 20


def test_bare_cavity_lorentzian_width(ref):
    bare = ref.replace(g=0.0)
    # |kappa/(delta + i kappa)|^2 = 1/2 exactly at delta = kappa
    assert transmission(bare, ProbeCondition.co_swept(bare.kappa)) == pytest.approx(0.5, rel=1e-12)


def test_polariton_lifetime_against_bisection_oracle(ref):
    t_peak, _ = oracle_response(ref, 0.0, ref.omega_c)
    lo, hi = 0.0, 0.05
    while oracle_response(ref, hi, ref.omega_c)[0] > t_peak / 2:
        lo, hi = hi, hi + 0.05
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if oracle_response(ref, mid, ref.omega_c)[0] > t_peak / 2:
            lo = mid
        else:
            hi = mid
    tau_oracle = 1.0 / (2.0 * 0.5 * (lo + hi))
    tau = polariton_lifetime(ref)
    assert tau == pytest.approx(tau_oracle, rel=1e-6)
    assert tau == pytest.approx(0.0884, abs=5e-4)


def test_saturation_flux_scale(ref):
    assert saturation_flux(ref) == pytest.approx(5.66, abs=0.01)
    assert 5.6 <= saturation_flux(ref) <= 6.2


def test_wider_control_shortens_polariton_lifetime(ref):
    wider = ref.replace(omega_c=2.0 * ref.omega_c)
    assert polariton_lifetime(wider) < polariton_lifetime(ref)


def test_polariton_lifetime_requires_control(ref):
    with pytest.raises(ValueError):
        polariton_lifetime(ref.replace(omega_c=0.0))


def test_polariton_lifetime_vanishing_window(ref):
    with pytest.raises(SpectraError):
        polariton_lifetime(ref.replace(omega_c=mhz_to_angular(0.02)))


def test_sweep_empty_grid(ref):
    with pytest.raises(ValueError):
        sweep(ref, [])


def test_energy_bounds_random_parameters(ref):
    rng = np.random.default_rng(42)
    for _ in range(200):
        kappa = rng.uniform(0.1, 50.0)
        p = ref.replace(
            g=rng.uniform(0.0, 120.0),
            kappa=kappa,
            kappa0=rng.uniform(0.0, kappa),
            gamma=rng.uniform(0.0, 50.0),
            gamma_r=rng.uniform(0.0, 5.0),
            omega_c=rng.uniform(0.0, 150.0),
        )
        delta = rng.uniform(-200.0, 200.0)
        c = ProbeCondition.co_swept(delta, blocked=bool(rng.integers(2)))
        assert transmission(p, c) <= 1.0 + 1e-9
        assert abs(reflection_amplitude(p, c)) ** 2 <= 1.0 + 1e-9


def test_perfect_eit_limit(ref):
    # gamma_r -> 0 with the control on decouples the ensemble entirely
    ideal = ref.replace(gamma_r=0.0, omega_c=mhz_to_angular(1e6))
    assert transmission(ideal, ZERO) == pytest.approx(1.0, abs=1e-12)
    near = ref.replace(gamma_r=mhz_to_angular(1e-9), omega_c=mhz_to_angular(1e4))
    assert transmission(near, ZERO) == pytest.approx(1.0, abs=1e-6)


def test_strong_coupling_blocked_limit(ref):
    huge = ref.replace(g=mhz_to_angular(1e5))
    assert transmission(huge, ZERO_BLOCKED) == pytest.approx(0.0, abs=1e-12)


def test_cosweep_symmetry(ref):
    rng = np.random.default_rng(3)
    for delta in rng.uniform(0.0, 150.0, 100):
        for blocked in (False, True):
            plus = transmission(ref, ProbeCondition.co_swept(delta, blocked=blocked))
            minus = transmission(ref, ProbeCondition.co_swept(-delta, blocked=blocked))
            assert plus == pytest.approx(minus, rel=1e-12)


def test_conditional_phase_flip(ref):
    r_g = reflection_amplitude(ref, ZERO)
    r_r = reflection_amplitude(ref, ZERO_BLOCKED)
    assert np.sign(r_g.real) != np.sign(r_r.real)
    assert abs(np.angle(r_g) - np.angle(r_r)) == pytest.approx(math.pi, abs=1e-9)


def test_table_reflectivity_matches_amplitude(ref):
    grid = mhz_to_angular(np.linspace(-15.0, 15.0, 31))
    table = sweep(ref, grid)
    for d, refl in zip(table.delta, table.reflectivity):
        r = reflection_amplitude(ref, ProbeCondition.co_swept(float(d)))
        assert refl == abs(r) ** 2  # bit-for-bit, same evaluation path


def test_partial_shift_interpolates(ref):
    # a large interaction shift approaches the fully blocked response
    shifted = transmission(
        ref, ProbeCondition(0.0, 0.0, 0.0, interaction_shift=mhz_to_angular(500.0)))
    blocked = transmission(ref, ZERO_BLOCKED)
    open_ = transmission(ref, ZERO)
    assert abs(shifted - blocked) < 0.02
    assert blocked < shifted < open_


def test_probe_condition_validation():
    with pytest.raises(ValueError):
        ProbeCondition(float("nan"), 0.0, 0.0)
    with pytest.raises(ValueError):
        ProbeCondition(0.0, 0.0, 0.0, omega_c_override=-1.0)


def test_csv_export(tmp_path, ref):
    grid = mhz_to_angular(np.linspace(-5.0, 5.0, 11))
    table = sweep(ref, grid)
    out = tmp_path / "spectrum.csv"
    table.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "delta_MHz,transmission,reflectivity,phase_rad"
    assert len(lines) == 12
    first = lines[1].split(",")
    assert float(first[0]) == pytest.approx(-5.0)
