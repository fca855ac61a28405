"""Simulation and estimation toolkit for a cavity-coupled Rydberg superatom.

Linear-response cavity-EIT spectra and the conditional reflection phase
flip, blockade statistics of the atomic cloud, quantum-jump shot records
for photon-counting and homodyne state detection, the closed-form detection
distributions with threshold-fidelity optimization, and the matching
parameter estimators.
"""

__version__ = "0.1.0"

from .params import (ConfigError, SystemParams, default_params, load_config,
                     validate)

__all__ = [
    "ConfigError",
    "SystemParams",
    "default_params",
    "load_config",
    "validate",
    "__version__",
]
