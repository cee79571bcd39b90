#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "xplat/rng.hpp"

namespace xplat::circuits {

enum class GateKind { RX, RY, RZ, SX, X, U1, U2, U3, CNOT, INPUT, OUTPUT };

std::string_view to_string(GateKind kind);
GateKind gate_kind_from_string(std::string_view name);

// Number of rotation angles a gate of this kind carries.
int angle_count(GateKind kind);
// Number of qubits a gate of this kind acts on (INPUT/OUTPUT: 1).
int arity(GateKind kind);

struct Gate {
  GateKind kind = GateKind::X;
  std::vector<int> qubits;
  std::vector<double> angles;

  // Throws ConfigError if qubit count, distinctness or angle count is wrong.
  void validate() const;

  bool operator==(const Gate&) const = default;
};

Gate make_gate(GateKind kind, std::vector<int> qubits, std::vector<double> angles = {});

struct Circuit {
  int n_qubits = 0;
  std::vector<Gate> gates;
  int layer_count = 0;

  void validate() const;

  bool operator==(const Circuit&) const = default;
};

struct UniformDepolarizing {
  double p = 0.0;
};

// Per-qubit calibration data in the layout of a vendor calibration table.
// Times are in microseconds.
struct CalibratedNoise {
  std::vector<double> t1;
  std::vector<double> t2;
  std::map<GateKind, double> gate_errors;
  std::vector<double> prob_meas0_prep1;
  std::vector<double> prob_meas1_prep0;
};

using NoiseSpec = std::variant<UniformDepolarizing, CalibratedNoise>;

struct DeviceProfile {
  std::string name;
  int n_qubits = 0;
  std::set<GateKind> basis_gates;
  std::vector<std::pair<int, int>> coupling_map;
  NoiseSpec noise;

  bool is_depolarizing() const { return std::holds_alternative<UniformDepolarizing>(noise); }
  // Coupling is treated as undirected: either orientation permits a CNOT.
  bool coupled(int a, int b) const;
};

// Gate durations used to turn T1/T2 into per-gate damping (microseconds).
inline constexpr double kSingleQubitGateDuration = 0.05;
inline constexpr double kCnotGateDuration = 0.3;

double gate_duration(GateKind kind);

// Returns every violated DeviceProfile invariant; empty means valid.
std::vector<std::string> validate_profile(const DeviceProfile& profile);

// Hardware-efficient layered circuit: per layer one shared rotation axis,
// independent angles in [0, 2pi), then a neighbour CNOT block where each pair
// (n, n+1) gets a CNOT with probability 1/2 and a random control side.
Circuit sample_circuit(int n_qubits, int layers, SeededRng& rng);

// Rewrites the circuit into the profile's basis gates. Single-qubit gates
// outside the basis go through a ZYZ Euler decomposition; no routing.
Circuit transpile(const Circuit& circuit, const DeviceProfile& profile);

// 2x2 unitary of a single-qubit gate kind with the given angles.
Eigen::Matrix2cd single_qubit_unitary(GateKind kind, const std::vector<double>& angles);

// (theta, phi, lambda) with U = e^{i alpha} U3(theta, phi, lambda).
struct EulerAngles {
  double theta = 0.0;
  double phi = 0.0;
  double lambda = 0.0;
};
EulerAngles zyz_decompose(const Eigen::Matrix2cd& u);

// Built-in profiles: "depolarizing" (linear chain, uniform p),
// "device_a" (RZ/SX/X/CNOT basis) and "device_b" (U1/U2/U3/CNOT basis).
DeviceProfile depolarizing_profile(int n_qubits, double p, std::string name = "");
DeviceProfile builtin_profile(std::string_view name, int n_qubits);
std::vector<std::string> builtin_profile_names();

nlohmann::json to_json(const Gate& gate);
nlohmann::json to_json(const Circuit& circuit);
nlohmann::json to_json(const DeviceProfile& profile);
Gate gate_from_json(const nlohmann::json& j);
Circuit circuit_from_json(const nlohmann::json& j);
DeviceProfile profile_from_json(const nlohmann::json& j);

DeviceProfile load_profile(const std::string& path);

}  // namespace xplat::circuits
