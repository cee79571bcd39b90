"""Python interface to the xplat core library."""

import json

from . import _xplat
from ._xplat import ConfigError, NumericError, ResourceError, compute_metrics, cross_fidelity, purity, shadow_fidelity

__all__ = [
    "ConfigError",
    "NumericError",
    "ResourceError",
    "build_dataset",
    "builtin_profile",
    "compute_metrics",
    "cross_fidelity",
    "depolarizing_profile",
    "purity",
    "run_circuit",
    "sample_circuit",
    "shadow_fidelity",
    "transpile",
]


def builtin_profile(name, n_qubits):
    return json.loads(_xplat.builtin_profile(name, n_qubits))


def depolarizing_profile(n_qubits, p):
    return json.loads(_xplat.depolarizing_profile(n_qubits, p))


def sample_circuit(n_qubits, layers, seed):
    return json.loads(_xplat.sample_circuit(n_qubits, layers, seed))


def transpile(circuit, profile):
    return json.loads(_xplat.transpile(json.dumps(circuit), json.dumps(profile)))


def run_circuit(circuit, profile):
    """Exact output density matrix as a complex numpy array."""
    return _xplat.run_circuit(json.dumps(circuit), json.dumps(profile))


def build_dataset(out_dir, **config):
    """Writes a dataset directory and returns its manifest."""
    return json.loads(_xplat.build_dataset(json.dumps(config), str(out_dir)))
