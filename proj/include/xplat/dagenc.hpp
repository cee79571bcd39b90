#pragma once

#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xplat/circuits.hpp"

namespace xplat::dagenc {

// Nodes are numbered INPUT wires first, then gates in circuit order, then
// OUTPUT wires. Edges point from earlier to later along each wire; a CNOT is
// one node with an in-edge and an out-edge per wire.
struct CircuitDag {
  int n_qubits = 0;
  int feature_dim = 0;
  std::vector<circuits::GateKind> kinds;
  std::vector<std::vector<double>> features;
  std::vector<std::pair<int, int>> edges;

  int node_count() const { return static_cast<int>(features.size()); }
  // In-neighbour lists, one per node, ascending.
  std::vector<std::vector<int>> in_neighbors() const;

  bool operator==(const CircuitDag&) const = default;
};

// Every supported gate kind, including INPUT and OUTPUT, so DAGs from
// different profiles share one one-hot layout.
inline constexpr int kVocabularySize = 11;

// Noise block width: 1 for uniform depolarizing ([p] on CNOT, else 0),
// 5 for calibrated devices ([T1/150, T2/150, gate error, p(0|1), p(1|0)]
// averaged over the node's qubits).
int noise_block_size(const circuits::DeviceProfile& profile);

// one-hot kind | noise block | qubit multi-hot | index / node_count.
int feature_dim(const circuits::DeviceProfile& profile);

std::vector<double> node_features(circuits::GateKind kind, const std::vector<int>& qubits, int node_index,
                                  int node_count, const circuits::DeviceProfile& profile);

// The circuit must already be in the profile's basis.
CircuitDag circuit_to_dag(const circuits::Circuit& circuit, const circuits::DeviceProfile& profile);

// Kahn traversal with smallest-id-first tie breaking. Throws NumericError on
// a cycle.
std::vector<int> topological_order(const CircuitDag& dag);

nlohmann::json to_json(const CircuitDag& dag);
CircuitDag dag_from_json(const nlohmann::json& j);

}  // namespace xplat::dagenc
