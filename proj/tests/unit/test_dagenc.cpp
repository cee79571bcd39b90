#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "xplat/circuits.hpp"
#include "xplat/dagenc.hpp"
#include "xplat/error.hpp"

using namespace xplat;
using namespace xplat::dagenc;
using circuits::GateKind;
using circuits::make_gate;

namespace {

int kind_slot(GateKind k) { return static_cast<int>(k); }

}  // namespace

TEST_CASE("empty circuit: one INPUT to OUTPUT edge per wire") {
  const auto prof = circuits::depolarizing_profile(3, 0.05);
  const auto dag = circuit_to_dag(circuits::Circuit{3, {}, 0}, prof);
  CHECK(dag.node_count() == 6);
  CHECK(dag.edges.size() == 3);
}

TEST_CASE("one CNOT on two qubits: 5 nodes and 4 edges") {
  const auto prof = circuits::depolarizing_profile(2, 0.05);
  const auto dag = circuit_to_dag(circuits::Circuit{2, {make_gate(GateKind::CNOT, {0, 1})}, 1}, prof);
  CHECK(dag.node_count() == 5);
  // IN0 -> CX, IN1 -> CX, CX -> OUT0, CX -> OUT1.
  const std::set<std::pair<int, int>> expect{{0, 2}, {1, 2}, {2, 3}, {2, 4}};
  CHECK(std::set<std::pair<int, int>>(dag.edges.begin(), dag.edges.end()) == expect);
  CHECK(dag.edges.size() == 4);
}

TEST_CASE("noise block: zero on RZ, p on CNOT under depolarizing") {
  const auto prof = circuits::depolarizing_profile(2, 0.05);
  const auto dag = circuit_to_dag(
      circuits::Circuit{2, {make_gate(GateKind::RZ, {0}, {0.4}), make_gate(GateKind::CNOT, {0, 1})}, 1}, prof);
  CHECK(noise_block_size(prof) == 1);
  CHECK(dag.feature_dim == kVocabularySize + 1 + 2 + 1);
  const auto& rz = dag.features[2];
  const auto& cx = dag.features[3];
  CHECK(rz[kind_slot(GateKind::RZ)] == 1.0);
  CHECK(rz[kVocabularySize] == 0.0);
  CHECK(cx[kind_slot(GateKind::CNOT)] == 1.0);
  CHECK(cx[kVocabularySize] == doctest::Approx(0.05));
  // Qubit multi-hot and scaled node index.
  CHECK(cx[kVocabularySize + 1] == 1.0);
  CHECK(cx[kVocabularySize + 2] == 1.0);
  CHECK(rz[kVocabularySize + 2] == 0.0);
  CHECK(cx.back() == doctest::Approx(3.0 / 6.0));
}

TEST_CASE("device noise block carries scaled calibration") {
  const auto prof = circuits::builtin_profile("device_a", 2);
  const auto& cal = std::get<circuits::CalibratedNoise>(prof.noise);
  const auto dag = circuit_to_dag(circuits::Circuit{2, {make_gate(GateKind::SX, {1})}, 1}, prof);
  CHECK(noise_block_size(prof) == 5);
  const auto& sx = dag.features[2];
  CHECK(sx[kVocabularySize + 0] == doctest::Approx(cal.t1[1] / 150.0));
  CHECK(sx[kVocabularySize + 1] == doctest::Approx(cal.t2[1] / 150.0));
  CHECK(sx[kVocabularySize + 2] == doctest::Approx(cal.gate_errors.at(GateKind::SX)));
  CHECK(sx[kVocabularySize + 3] == doctest::Approx(cal.prob_meas0_prep1[1]));
  CHECK(sx[kVocabularySize + 4] == doctest::Approx(cal.prob_meas1_prep0[1]));
}

TEST_CASE("gate outside the basis is rejected") {
  const auto prof = circuits::builtin_profile("device_a", 2);
  CHECK_THROWS_AS(circuit_to_dag(circuits::Circuit{2, {make_gate(GateKind::RX, {0}, {1.0})}, 1}, prof), ConfigError);
}

TEST_CASE("property: node count, wire paths, feature width, topological order") {
  SeededRng rng(4);
  for (const char* name : {"depolarizing", "device_a", "device_b"}) {
    for (int t = 0; t < 10; ++t) {
      const int n = 2 + static_cast<int>(rng.index(4));
      const auto prof = circuits::builtin_profile(name, n);
      const auto c = circuits::transpile(circuits::sample_circuit(n, 1 + static_cast<int>(rng.index(6)), rng), prof);
      const auto dag = circuit_to_dag(c, prof);
      REQUIRE(dag.node_count() == static_cast<int>(c.gates.size()) + 2 * n);
      for (const auto& f : dag.features) REQUIRE(static_cast<int>(f.size()) == dag.feature_dim);

      // Each wire: following edges whose target touches the wire leads from
      // INPUT q to OUTPUT q through exactly the gates on that wire.
      std::map<int, std::vector<int>> out;
      for (const auto& [s, d] : dag.edges) out[s].push_back(d);
      const int first_out = n + static_cast<int>(c.gates.size());
      for (int q = 0; q < n; ++q) {
        int node = q, steps = 0;
        auto on_wire = [&](int v) {
          if (v >= first_out) return v - first_out == q;
          const auto& g = c.gates[v - n];
          return std::find(g.qubits.begin(), g.qubits.end(), q) != g.qubits.end();
        };
        while (node != first_out + q) {
          int next = -1;
          for (int d : out[node])
            if (on_wire(d)) next = d;
          REQUIRE(next > node);
          node = next;
          ++steps;
        }
        int gates_on_wire = 0;
        for (const auto& g : c.gates) gates_on_wire += std::count(g.qubits.begin(), g.qubits.end(), q);
        CHECK(steps == gates_on_wire + 1);
      }

      const auto order = topological_order(dag);
      REQUIRE(order.size() == static_cast<std::size_t>(dag.node_count()));
      std::vector<int> pos(order.size());
      for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = static_cast<int>(k);
      for (const auto& [s, d] : dag.edges) CHECK(pos[s] < pos[d]);
      // Gate nodes come out in execution order.
      std::vector<int> gates;
      for (int v : order)
        if (v >= n && v < first_out) gates.push_back(v);
      CHECK(std::is_sorted(gates.begin(), gates.end()));

      CHECK(circuit_to_dag(c, prof) == dag);
      CHECK(dag_from_json(to_json(dag)) == dag);
    }
  }
}

TEST_CASE("topological_order detects a cycle") {
  const auto prof = circuits::depolarizing_profile(2, 0.05);
  auto dag = circuit_to_dag(circuits::Circuit{2, {make_gate(GateKind::CNOT, {0, 1})}, 1}, prof);
  dag.edges.emplace_back(3, 0);
  CHECK_THROWS_AS(topological_order(dag), NumericError);
}

TEST_CASE("the two devices give different node-type histograms") {
  SeededRng rng(21);
  const auto c = circuits::sample_circuit(4, 4, rng);
  auto histogram = [&](const char* name) {
    const auto prof = circuits::builtin_profile(name, 4);
    const auto dag = circuit_to_dag(circuits::transpile(c, prof), prof);
    std::map<GateKind, int> h;
    for (auto k : dag.kinds) ++h[k];
    return h;
  };
  CHECK(histogram("device_a") != histogram("device_b"));
}
