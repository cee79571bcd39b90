import numpy as np
import pytest

import xplat


def test_bell_state_and_fidelity():
    circuit = {"n_qubits": 2, "layer_count": 1, "gates": [{"kind": "U2", "qubits": [0], "angles": [0.0, np.pi]}, {"kind": "CNOT", "qubits": [0, 1]}]}
    rho = xplat.run_circuit(circuit, xplat.depolarizing_profile(2, 0.0))
    assert rho.shape == (4, 4)
    assert abs(rho[0, 0] - 0.5) < 1e-12 and abs(rho[0, 3] - 0.5) < 1e-12
    assert xplat.purity(rho) == pytest.approx(1.0)
    mixed = np.eye(4, dtype=complex) / 4
    assert xplat.cross_fidelity(rho, mixed) == pytest.approx(0.5)


def test_transpile_keeps_fidelity():
    profile = xplat.builtin_profile("device_a", 3)
    logical = xplat.sample_circuit(3, 2, seed=4)
    compiled = xplat.transpile(logical, profile)
    assert {g["kind"] for g in compiled["gates"]} <= set(profile["basis_gates"])
    ideal = xplat.depolarizing_profile(3, 0.0)
    a = xplat.run_circuit(logical, ideal)
    b = xplat.run_circuit(compiled, ideal)
    assert xplat.cross_fidelity(a, b) == pytest.approx(1.0, abs=1e-9)


def test_shadow_estimate_on_identical_states():
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 1.0
    assert xplat.shadow_fidelity(rho, rho, shots=4000, seed=1) == pytest.approx(1.0, abs=0.1)


def test_metrics_and_errors():
    r = xplat.compute_metrics([0.9, 0.6], [1.0, 0.5])
    assert r["mse"] == pytest.approx(0.01) and r["rmse"] == pytest.approx(0.025)
    with pytest.raises(ValueError):
        xplat.compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        xplat.builtin_profile("nosuch", 2)


def test_build_dataset(tmp_path):
    manifest = xplat.build_dataset(tmp_path / "ds", n_qubits=2, n_circuits=2, levels=3, m_shots=4, layers=1, seed=3)
    assert len(manifest["record_index"]) == 6
    assert (tmp_path / "ds" / "labels.csv").exists()
    with pytest.raises(MemoryError):
        xplat.build_dataset(tmp_path / "big", n_qubits=11)
