"""Physical parameters of the cavity-superatom system.

Canonical internal units throughout the package:

* angular frequency  rad/us
* time               us
* length             um
* temperature        uK
* van der Waals C6   MHz*um^6

Config files state ordinary frequencies in MHz (nu = omega/2pi); the
conversion to angular units happens exactly once, at ingestion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

from scipy import constants as _const

TWO_PI = 2.0 * math.pi

BOLTZMANN_J_PER_K = _const.k
RB87_MASS_KG = 86.909180531 * _const.atomic_mass


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed or validated."""


def mhz_to_angular(nu_mhz: float) -> float:
    """Ordinary frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * nu_mhz


def angular_to_mhz(omega: float) -> float:
    """Angular frequency in rad/us -> ordinary frequency in MHz."""
    return omega / TWO_PI


def thz_um6_to_mhz_um6(c6_thz: float) -> float:
    return c6_thz * 1.0e6


def mhz_um6_to_thz_um6(c6_mhz: float) -> float:
    return c6_mhz * 1.0e-6


def wavelength_nm_to_wavevector(lambda_nm: float) -> float:
    """Vacuum wavelength in nm -> wavevector magnitude in rad/um."""
    return TWO_PI / (lambda_nm * 1.0e-3)


def wavevector_to_wavelength_nm(k: float) -> float:
    return TWO_PI / k * 1.0e3


@dataclass(frozen=True)
class SystemParams:
    """All rates and constants of the cavity-superatom system, canonical units.

    Rates are angular frequencies (rad/us); ``delta_int`` is signed
    (negative below the intermediate resonance). ``atom_mass`` is in kg
    and has no config key; it defaults to Rb-87.
    """

    g: float              # collective atom-cavity coupling
    kappa: float          # total cavity field decay rate
    kappa0: float         # output-coupler field decay rate
    gamma: float          # atomic dipole coherence decay rate
    gamma_r: float        # Rydberg coherence decay rate
    omega_c: float        # EIT control Rabi frequency
    omega_d2: float       # single-photon drive Rabi frequency, lower leg
    omega_109s: float     # single-photon drive Rabi frequency, upper leg
    delta_int: float      # intermediate-state detuning of the two-photon drive
    n_atoms: int
    sigma_a: float        # cloud rms radius, um
    c_rr: float           # R-R van der Waals coefficient, MHz*um^6
    c_rrp: float          # R-R' coefficient
    c_rprp: float         # R'-R' coefficient
    tau_r: float          # Rydberg-state lifetime, us
    temperature: float    # cloud temperature, uK
    k_d2: float           # drive wavevector magnitude, rad/um
    k_109s: float         # drive wavevector magnitude, rad/um
    angle_drive: float    # angle between the two drive beams, rad
    atom_mass: float = RB87_MASS_KG

    def replace(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_config(self) -> dict[str, float]:
        """Canonical values back in config-file units (exact inverse of ingestion)."""
        return {
            "g_MHz": angular_to_mhz(self.g),
            "kappa_MHz": angular_to_mhz(self.kappa),
            "kappa0_MHz": angular_to_mhz(self.kappa0),
            "gamma_MHz": angular_to_mhz(self.gamma),
            "gamma_r_MHz": angular_to_mhz(self.gamma_r),
            "omega_c_MHz": angular_to_mhz(self.omega_c),
            "omega_d2_MHz": angular_to_mhz(self.omega_d2),
            "omega_109s_MHz": angular_to_mhz(self.omega_109s),
            "delta_int_MHz": angular_to_mhz(self.delta_int),
            "n_atoms": float(self.n_atoms),
            "sigma_a_um": self.sigma_a,
            "c_rr_THzum6": mhz_um6_to_thz_um6(self.c_rr),
            "c_rrp_THzum6": mhz_um6_to_thz_um6(self.c_rrp),
            "c_rprp_THzum6": mhz_um6_to_thz_um6(self.c_rprp),
            "tau_r_us": self.tau_r,
            "temperature_uK": self.temperature,
            "angle_drive_deg": math.degrees(self.angle_drive),
            "lambda_d2_nm": wavevector_to_wavelength_nm(self.k_d2),
            "lambda_109s_nm": wavevector_to_wavelength_nm(self.k_109s),
        }


#: Reference parameter set, in config-file units. kappa0 = 0.9*kappa (90% of
#: the photons leave through the output coupler).
DEFAULT_CONFIG: dict[str, float] = {
    "g_MHz": 10.0,
    "kappa_MHz": 2.9,
    "kappa0_MHz": 2.61,
    "gamma_MHz": 3.0,
    "gamma_r_MHz": 0.12,
    "omega_c_MHz": 13.0,
    "omega_d2_MHz": 6.0,
    "omega_109s_MHz": 10.0,
    "delta_int_MHz": -545.0,
    "n_atoms": 800,
    "sigma_a_um": 5.0,
    "c_rr_THzum6": 154.0,
    "c_rrp_THzum6": 18.0,
    "c_rprp_THzum6": 3.0,
    "tau_r_us": 42.0,
    "temperature_uK": 3.0,
    "angle_drive_deg": 90.0,
    "lambda_d2_nm": 780.0,
    "lambda_109s_nm": 480.0,
}

CONFIG_KEYS = frozenset(DEFAULT_CONFIG)


def from_config(mapping: dict[str, float]) -> SystemParams:
    """Build SystemParams from config-unit values; unspecified keys take defaults.

    Raises ConfigError on unknown keys or invariant violations.
    """
    unknown = set(mapping) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    cfg = dict(DEFAULT_CONFIG)
    cfg.update(mapping)

    n_atoms = cfg["n_atoms"]
    if float(n_atoms) != int(n_atoms):
        raise ConfigError(f"n_atoms must be an integer, got {n_atoms!r}")

    p = SystemParams(
        g=mhz_to_angular(cfg["g_MHz"]),
        kappa=mhz_to_angular(cfg["kappa_MHz"]),
        kappa0=mhz_to_angular(cfg["kappa0_MHz"]),
        gamma=mhz_to_angular(cfg["gamma_MHz"]),
        gamma_r=mhz_to_angular(cfg["gamma_r_MHz"]),
        omega_c=mhz_to_angular(cfg["omega_c_MHz"]),
        omega_d2=mhz_to_angular(cfg["omega_d2_MHz"]),
        omega_109s=mhz_to_angular(cfg["omega_109s_MHz"]),
        delta_int=mhz_to_angular(cfg["delta_int_MHz"]),
        n_atoms=int(cfg["n_atoms"]),
        sigma_a=cfg["sigma_a_um"],
        c_rr=thz_um6_to_mhz_um6(cfg["c_rr_THzum6"]),
        c_rrp=thz_um6_to_mhz_um6(cfg["c_rrp_THzum6"]),
        c_rprp=thz_um6_to_mhz_um6(cfg["c_rprp_THzum6"]),
        tau_r=cfg["tau_r_us"],
        temperature=cfg["temperature_uK"],
        k_d2=wavelength_nm_to_wavevector(cfg["lambda_d2_nm"]),
        k_109s=wavelength_nm_to_wavevector(cfg["lambda_109s_nm"]),
        angle_drive=math.radians(cfg["angle_drive_deg"]),
    )
    violations = validate(p)
    if violations:
        raise ConfigError("invalid parameters: " + "; ".join(violations))
    return p


def default_params() -> SystemParams:
    """The reference parameter set in canonical units."""
    return from_config({})


def parse_config_text(text: str, source: str = "<config>") -> dict[str, float]:
    """Parse ``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: non-numeric value for {key}: {val!r}"
            ) from None
    return values


def load_config(path: str | Path) -> SystemParams:
    """Read and validate a config file; unspecified keys take the defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return from_config(parse_config_text(path.read_text(), source=str(path)))


def validate(p: SystemParams) -> list[str]:
    """Return one entry per violated invariant, empty when valid.

    Violations are data, not failures: callers decide whether to raise.
    """
    out: list[str] = []
    for name in ("g", "kappa", "kappa0", "gamma", "gamma_r",
                 "omega_c", "omega_d2", "omega_109s"):
        if getattr(p, name) < 0:
            out.append(f"{name} must be >= 0, got {getattr(p, name)!r}")
    if p.kappa0 > p.kappa:
        out.append(f"kappa0 must not exceed kappa ({p.kappa0!r} > {p.kappa!r})")
    if p.n_atoms < 1:
        out.append(f"n_atoms must be >= 1, got {p.n_atoms!r}")
    if not p.sigma_a > 0:
        out.append(f"sigma_a must be > 0, got {p.sigma_a!r}")
    for name in ("c_rr", "c_rrp", "c_rprp"):
        if getattr(p, name) < 0:
            out.append(f"{name} must be >= 0, got {getattr(p, name)!r}")
    if not p.tau_r > 0:
        out.append(f"tau_r must be > 0, got {p.tau_r!r}")
    if not p.temperature > 0:
        out.append(f"temperature must be > 0, got {p.temperature!r}")
    for name in ("k_d2", "k_109s"):
        if not getattr(p, name) > 0:
            out.append(f"{name} must be > 0, got {getattr(p, name)!r}")
    if not p.atom_mass > 0:
        out.append(f"atom_mass must be > 0, got {p.atom_mass!r}")
    if not math.isfinite(p.delta_int):
        out.append(f"delta_int must be finite, got {p.delta_int!r}")
    return out
