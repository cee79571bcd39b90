#include "xplat/dagenc.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>

#include "xplat/error.hpp"

namespace xplat::dagenc {

namespace {

using circuits::GateKind;

constexpr double kTimeScale = 150.0;

double finite_or_zero(double v) { return std::isfinite(v) ? v : 0.0; }

double at_or_zero(const std::vector<double>& v, int q) {
  return q >= 0 && q < static_cast<int>(v.size()) ? finite_or_zero(v[q]) : 0.0;
}

}  // namespace

std::vector<std::vector<int>> CircuitDag::in_neighbors() const {
  std::vector<std::vector<int>> in(features.size());
  for (auto [s, d] : edges) in[d].push_back(s);
  for (auto& v : in) std::sort(v.begin(), v.end());
  return in;
}

int noise_block_size(const circuits::DeviceProfile& profile) { return profile.is_depolarizing() ? 1 : 5; }

int feature_dim(const circuits::DeviceProfile& profile) {
  return kVocabularySize + noise_block_size(profile) + profile.n_qubits + 1;
}

std::vector<double> node_features(GateKind kind, const std::vector<int>& qubits, int node_index, int node_count,
                                  const circuits::DeviceProfile& profile) {
  const int k = static_cast<int>(kind);
  if (k < 0 || k >= kVocabularySize) throw ConfigError("unknown gate kind code " + std::to_string(k));
  if (node_count < 1 || node_index < 0 || node_index >= node_count) throw ConfigError("node index out of range");
  std::vector<double> f(static_cast<std::size_t>(feature_dim(profile)), 0.0);
  f[k] = 1.0;
  const int noise_at = kVocabularySize;
  if (const auto* dep = std::get_if<circuits::UniformDepolarizing>(&profile.noise)) {
    if (kind == GateKind::CNOT) f[noise_at] = dep->p;
  } else {
    const auto& cal = std::get<circuits::CalibratedNoise>(profile.noise);
    double err = 0.0;
    if (auto it = cal.gate_errors.find(kind); it != cal.gate_errors.end()) err = it->second;
    const double w = 1.0 / static_cast<double>(qubits.size());
    for (int q : qubits) {
      f[noise_at + 0] += w * at_or_zero(cal.t1, q) / kTimeScale;
      f[noise_at + 1] += w * at_or_zero(cal.t2, q) / kTimeScale;
      f[noise_at + 3] += w * at_or_zero(cal.prob_meas0_prep1, q);
      f[noise_at + 4] += w * at_or_zero(cal.prob_meas1_prep0, q);
    }
    f[noise_at + 2] = err;
  }
  const int qubit_at = noise_at + noise_block_size(profile);
  for (int q : qubits) {
    if (q < 0 || q >= profile.n_qubits) throw ConfigError("node qubit " + std::to_string(q) + " out of range");
    f[qubit_at + q] = 1.0;
  }
  f.back() = static_cast<double>(node_index) / static_cast<double>(node_count);
  return f;
}

CircuitDag circuit_to_dag(const circuits::Circuit& circuit, const circuits::DeviceProfile& profile) {
  circuit.validate();
  if (circuit.n_qubits > profile.n_qubits)
    throw ConfigError("circuit needs " + std::to_string(circuit.n_qubits) + " qubits, profile '" + profile.name +
                      "' has " + std::to_string(profile.n_qubits));
  for (const auto& g : circuit.gates) {
    if (!profile.basis_gates.contains(g.kind))
      throw ConfigError("gate " + std::string(circuits::to_string(g.kind)) + " is not in the basis of profile '" +
                        profile.name + "'; transpile first");
  }
  const int n = circuit.n_qubits;
  const int g_count = static_cast<int>(circuit.gates.size());
  const int total = g_count + 2 * n;

  CircuitDag dag;
  dag.n_qubits = n;
  dag.feature_dim = feature_dim(profile);
  dag.kinds.reserve(total);
  dag.features.reserve(total);

  std::vector<int> last(static_cast<std::size_t>(n));
  for (int q = 0; q < n; ++q) {
    dag.kinds.push_back(GateKind::INPUT);
    dag.features.push_back(node_features(GateKind::INPUT, {q}, q, total, profile));
    last[q] = q;
  }
  for (int i = 0; i < g_count; ++i) {
    const auto& g = circuit.gates[i];
    const int id = n + i;
    dag.kinds.push_back(g.kind);
    dag.features.push_back(node_features(g.kind, g.qubits, id, total, profile));
    for (int q : g.qubits) {
      dag.edges.emplace_back(last[q], id);
      last[q] = id;
    }
  }
  for (int q = 0; q < n; ++q) {
    const int id = n + g_count + q;
    dag.kinds.push_back(GateKind::OUTPUT);
    dag.features.push_back(node_features(GateKind::OUTPUT, {q}, id, total, profile));
    dag.edges.emplace_back(last[q], id);
  }
  return dag;
}

std::vector<int> topological_order(const CircuitDag& dag) {
  const int n = dag.node_count();
  std::vector<int> indeg(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  for (auto [s, d] : dag.edges) {
    if (s < 0 || s >= n || d < 0 || d >= n) throw ConfigError("DAG edge endpoint out of range");
    out[s].push_back(d);
    ++indeg[d];
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int u = 0; u < n; ++u)
    if (indeg[u] == 0) ready.push(u);
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int u = ready.top();
    ready.pop();
    order.push_back(u);
    for (int v : out[u])
      if (--indeg[v] == 0) ready.push(v);
  }
  if (static_cast<int>(order.size()) != n) throw NumericError("graph has a cycle");
  return order;
}

nlohmann::json to_json(const CircuitDag& dag) {
  nlohmann::json j;
  j["n_qubits"] = dag.n_qubits;
  j["feature_dim"] = dag.feature_dim;
  j["kinds"] = nlohmann::json::array();
  for (auto k : dag.kinds) j["kinds"].push_back(std::string(circuits::to_string(k)));
  j["nodes"] = dag.features;
  j["edges"] = nlohmann::json::array();
  for (auto [s, d] : dag.edges) j["edges"].push_back({s, d});
  return j;
}

CircuitDag dag_from_json(const nlohmann::json& j) {
  CircuitDag dag;
  dag.n_qubits = j.at("n_qubits").get<int>();
  dag.feature_dim = j.at("feature_dim").get<int>();
  for (const auto& k : j.at("kinds")) dag.kinds.push_back(circuits::gate_kind_from_string(k.get<std::string>()));
  dag.features = j.at("nodes").get<std::vector<std::vector<double>>>();
  for (const auto& e : j.at("edges")) dag.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  if (dag.kinds.size() != dag.features.size()) throw ConfigError("DAG kinds and nodes differ in length");
  for (const auto& f : dag.features)
    if (static_cast<int>(f.size()) != dag.feature_dim) throw ConfigError("DAG node feature has the wrong width");
  return dag;
}

}  // namespace xplat::dagenc
