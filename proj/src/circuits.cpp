#include "xplat/circuits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "xplat/error.hpp"

namespace xplat::circuits {

namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;
constexpr double kAngleTol = 1e-12;

constexpr std::array<std::pair<GateKind, std::string_view>, 11> kGateNames{{
    {GateKind::RX, "RX"},
    {GateKind::RY, "RY"},
    {GateKind::RZ, "RZ"},
    {GateKind::SX, "SX"},
    {GateKind::X, "X"},
    {GateKind::U1, "U1"},
    {GateKind::U2, "U2"},
    {GateKind::U3, "U3"},
    {GateKind::CNOT, "CNOT"},
    {GateKind::INPUT, "INPUT"},
    {GateKind::OUTPUT, "OUTPUT"},
}};

// Wraps into (-pi, pi].
double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

bool near_zero_angle(double a) { return std::abs(wrap_angle(a)) < kAngleTol; }

Eigen::Matrix2cd u3_matrix(double theta, double phi, double lambda) {
  const double c = std::cos(theta / 2.0);
  const double s = std::sin(theta / 2.0);
  Eigen::Matrix2cd u;
  u << c, -std::polar(1.0, lambda) * s, std::polar(1.0, phi) * s, std::polar(1.0, phi + lambda) * c;
  return u;
}

std::vector<std::pair<int, int>> linear_chain(int n) {
  std::vector<std::pair<int, int>> edges;
  for (int q = 0; q + 1 < n; ++q) edges.emplace_back(q, q + 1);
  return edges;
}

void emit_rz_sx(std::vector<Gate>& out, int q, const EulerAngles& e) {
  if (near_zero_angle(e.theta)) {
    const double total = wrap_angle(e.phi + e.lambda);
    if (!near_zero_angle(total)) out.push_back(make_gate(GateKind::RZ, {q}, {total}));
    return;
  }
  // U3(theta, phi, lambda) = RZ(phi + pi) SX RZ(theta + pi) SX RZ(lambda), up to phase.
  out.push_back(make_gate(GateKind::RZ, {q}, {wrap_angle(e.lambda)}));
  out.push_back(make_gate(GateKind::SX, {q}));
  out.push_back(make_gate(GateKind::RZ, {q}, {wrap_angle(e.theta + kPi)}));
  out.push_back(make_gate(GateKind::SX, {q}));
  out.push_back(make_gate(GateKind::RZ, {q}, {wrap_angle(e.phi + kPi)}));
}

void emit_u_family(std::vector<Gate>& out, int q, const EulerAngles& e,
                   const std::set<GateKind>& basis) {
  if (near_zero_angle(e.theta) && basis.contains(GateKind::U1)) {
    out.push_back(make_gate(GateKind::U1, {q}, {wrap_angle(e.phi + e.lambda)}));
    return;
  }
  if (std::abs(e.theta - kPi / 2.0) < kAngleTol && basis.contains(GateKind::U2)) {
    out.push_back(make_gate(GateKind::U2, {q}, {wrap_angle(e.phi), wrap_angle(e.lambda)}));
    return;
  }
  out.push_back(make_gate(GateKind::U3, {q}, {e.theta, wrap_angle(e.phi), wrap_angle(e.lambda)}));
}

std::vector<double> json_vec(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("profile noise missing field '") + key + "'");
  return j.at(key).get<std::vector<double>>();
}

}  // namespace

std::string_view to_string(GateKind kind) {
  for (const auto& [k, name] : kGateNames)
    if (k == kind) return name;
  return "?";
}

GateKind gate_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kGateNames)
    if (n == name) return k;
  // Accept lowercase vendor spellings.
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "CX") return GateKind::CNOT;
  for (const auto& [k, n] : kGateNames)
    if (n == upper) return k;
  throw ConfigError("unsupported gate kind '" + std::string(name) + "'");
}

int angle_count(GateKind kind) {
  switch (kind) {
    case GateKind::RX:
    case GateKind::RY:
    case GateKind::RZ:
    case GateKind::U1:
      return 1;
    case GateKind::U2:
      return 2;
    case GateKind::U3:
      return 3;
    default:
      return 0;
  }
}

int arity(GateKind kind) { return kind == GateKind::CNOT ? 2 : 1; }

void Gate::validate() const {
  if (static_cast<int>(qubits.size()) != arity(kind))
    throw ConfigError(std::string(to_string(kind)) + " expects " + std::to_string(arity(kind)) +
                      " qubit(s), got " + std::to_string(qubits.size()));
  if (kind == GateKind::CNOT && qubits[0] == qubits[1])
    throw ConfigError("CNOT control and target must differ");
  if (static_cast<int>(angles.size()) != angle_count(kind))
    throw ConfigError(std::string(to_string(kind)) + " expects " + std::to_string(angle_count(kind)) +
                      " angle(s), got " + std::to_string(angles.size()));
  for (double a : angles)
    if (!std::isfinite(a)) throw ConfigError("non-finite rotation angle");
  for (int q : qubits)
    if (q < 0) throw ConfigError("negative qubit index");
}

Gate make_gate(GateKind kind, std::vector<int> qubits, std::vector<double> angles) {
  Gate g{kind, std::move(qubits), std::move(angles)};
  g.validate();
  return g;
}

void Circuit::validate() const {
  if (n_qubits < 1) throw ConfigError("circuit needs at least one qubit");
  for (const Gate& g : gates) {
    g.validate();
    if (g.kind == GateKind::INPUT || g.kind == GateKind::OUTPUT)
      throw ConfigError("INPUT/OUTPUT are graph markers, not circuit gates");
    for (int q : g.qubits)
      if (q >= n_qubits)
        throw ConfigError("gate " + std::string(to_string(g.kind)) + " references qubit " + std::to_string(q) +
                          " but circuit has " + std::to_string(n_qubits));
  }
}

bool DeviceProfile::coupled(int a, int b) const {
  return std::any_of(coupling_map.begin(), coupling_map.end(), [&](const auto& e) {
    return (e.first == a && e.second == b) || (e.first == b && e.second == a);
  });
}

double gate_duration(GateKind kind) {
  return kind == GateKind::CNOT ? kCnotGateDuration : kSingleQubitGateDuration;
}

std::vector<std::string> validate_profile(const DeviceProfile& profile) {
  std::vector<std::string> issues;
  const int n = profile.n_qubits;
  if (n < 1) issues.push_back("n_qubits must be positive");
  if (profile.basis_gates.empty()) issues.push_back("basis_gates is empty");
  for (GateKind k : profile.basis_gates)
    if (k == GateKind::INPUT || k == GateKind::OUTPUT)
      issues.push_back("basis_gates may not contain " + std::string(to_string(k)));
  for (const auto& [a, b] : profile.coupling_map) {
    if (a < 0 || b < 0 || a >= n || b >= n)
      issues.push_back("coupling pair (" + std::to_string(a) + "," + std::to_string(b) + ") out of range");
    else if (a == b)
      issues.push_back("coupling pair (" + std::to_string(a) + "," + std::to_string(b) + ") is a self-loop");
  }
  if (!profile.coupling_map.empty() && !profile.basis_gates.contains(GateKind::CNOT))
    issues.push_back("coupling_map given but CNOT is not a basis gate");

  auto check_prob = [&](double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) {
      std::ostringstream os;
      os << what << " = " << p << " outside [0, 1]";
      issues.push_back(os.str());
    }
  };

  if (const auto* dep = std::get_if<UniformDepolarizing>(&profile.noise)) {
    check_prob(dep->p, "depolarizing p");
  } else {
    const auto& cal = std::get<CalibratedNoise>(profile.noise);
    auto check_len = [&](const std::vector<double>& v, const char* what) {
      if (static_cast<int>(v.size()) != n)
        issues.push_back(std::string(what) + " has " + std::to_string(v.size()) + " entries, expected " +
                         std::to_string(n));
    };
    check_len(cal.t1, "t1");
    check_len(cal.t2, "t2");
    check_len(cal.prob_meas0_prep1, "prob_meas0_prep1");
    check_len(cal.prob_meas1_prep0, "prob_meas1_prep0");
    for (std::size_t q = 0; q < std::min(cal.t1.size(), cal.t2.size()); ++q) {
      if (!(cal.t1[q] > 0.0)) issues.push_back("t1[" + std::to_string(q) + "] must be positive");
      if (!(cal.t2[q] > 0.0)) issues.push_back("t2[" + std::to_string(q) + "] must be positive");
      if (cal.t2[q] > 2.0 * cal.t1[q]) {
        std::ostringstream os;
        os << "t2[" << q << "] = " << cal.t2[q] << " exceeds 2*t1 = " << 2.0 * cal.t1[q];
        issues.push_back(os.str());
      }
    }
    for (std::size_t q = 0; q < cal.prob_meas0_prep1.size(); ++q)
      check_prob(cal.prob_meas0_prep1[q], "prob_meas0_prep1[" + std::to_string(q) + "]");
    for (std::size_t q = 0; q < cal.prob_meas1_prep0.size(); ++q)
      check_prob(cal.prob_meas1_prep0[q], "prob_meas1_prep0[" + std::to_string(q) + "]");
    for (GateKind k : profile.basis_gates)
      if (!cal.gate_errors.contains(k))
        issues.push_back("gate_errors missing entry for basis gate " + std::string(to_string(k)));
    for (const auto& [k, e] : cal.gate_errors) check_prob(e, "gate error of " + std::string(to_string(k)));
  }
  return issues;
}

Circuit sample_circuit(int n_qubits, int layers, SeededRng& rng) {
  if (n_qubits < 2) throw ConfigError("sample_circuit needs n_qubits >= 2");
  if (layers < 1) throw ConfigError("sample_circuit needs layers >= 1");
  static constexpr std::array<GateKind, 3> kAxes{GateKind::RX, GateKind::RY, GateKind::RZ};

  Circuit c;
  c.n_qubits = n_qubits;
  c.layer_count = layers;
  for (int l = 0; l < layers; ++l) {
    const GateKind axis = kAxes[rng.index(3)];
    for (int q = 0; q < n_qubits; ++q) c.gates.push_back(make_gate(axis, {q}, {rng.uniform(0.0, 2.0 * kPi)}));
    for (int q = 0; q + 1 < n_qubits; ++q) {
      if (!rng.bernoulli(0.5)) continue;
      if (rng.bernoulli(0.5))
        c.gates.push_back(make_gate(GateKind::CNOT, {q, q + 1}));
      else
        c.gates.push_back(make_gate(GateKind::CNOT, {q + 1, q}));
    }
  }
  return c;
}

Eigen::Matrix2cd single_qubit_unitary(GateKind kind, const std::vector<double>& angles) {
  if (static_cast<int>(angles.size()) != angle_count(kind) || arity(kind) != 1)
    throw ConfigError("bad single-qubit gate " + std::string(to_string(kind)));
  const cd i(0.0, 1.0);
  Eigen::Matrix2cd u;
  switch (kind) {
    case GateKind::RX: {
      const double c = std::cos(angles[0] / 2), s = std::sin(angles[0] / 2);
      u << c, -i * s, -i * s, c;
      return u;
    }
    case GateKind::RY: {
      const double c = std::cos(angles[0] / 2), s = std::sin(angles[0] / 2);
      u << c, -s, s, c;
      return u;
    }
    case GateKind::RZ:
      u << std::polar(1.0, -angles[0] / 2), 0.0, 0.0, std::polar(1.0, angles[0] / 2);
      return u;
    case GateKind::SX:
      u << cd(0.5, 0.5), cd(0.5, -0.5), cd(0.5, -0.5), cd(0.5, 0.5);
      return u;
    case GateKind::X:
      u << 0.0, 1.0, 1.0, 0.0;
      return u;
    case GateKind::U1:
      u << 1.0, 0.0, 0.0, std::polar(1.0, angles[0]);
      return u;
    case GateKind::U2:
      return u3_matrix(kPi / 2.0, angles[0], angles[1]);
    case GateKind::U3:
      return u3_matrix(angles[0], angles[1], angles[2]);
    default:
      throw ConfigError("gate " + std::string(to_string(kind)) + " has no single-qubit unitary");
  }
}

EulerAngles zyz_decompose(const Eigen::Matrix2cd& u) {
  const double c = std::abs(u(0, 0));
  const double s = std::abs(u(1, 0));
  EulerAngles e;
  e.theta = 2.0 * std::atan2(s, c);
  constexpr double eps = 1e-14;
  if (s < eps) {
    // Diagonal: only phi + lambda is defined.
    const double alpha = std::arg(u(0, 0));
    e.phi = 0.0;
    e.lambda = std::arg(u(1, 1)) - alpha;
  } else if (c < eps) {
    // Anti-diagonal: fix phi = 0.
    const double alpha = std::arg(u(1, 0));
    e.phi = 0.0;
    e.lambda = std::arg(-u(0, 1)) - alpha;
  } else {
    const double alpha = std::arg(u(0, 0));
    e.phi = std::arg(u(1, 0)) - alpha;
    e.lambda = std::arg(-u(0, 1)) - alpha;
  }
  e.phi = wrap_angle(e.phi);
  e.lambda = wrap_angle(e.lambda);
  return e;
}

Circuit transpile(const Circuit& circuit, const DeviceProfile& profile) {
  circuit.validate();
  if (circuit.n_qubits > profile.n_qubits)
    throw ConfigError("circuit has " + std::to_string(circuit.n_qubits) + " qubits but device '" + profile.name +
                      "' has " + std::to_string(profile.n_qubits));
  const auto& basis = profile.basis_gates;
  const bool rz_sx = basis.contains(GateKind::RZ) && basis.contains(GateKind::SX);
  const bool u_family = basis.contains(GateKind::U3);

  Circuit out;
  out.n_qubits = circuit.n_qubits;
  out.layer_count = circuit.layer_count;
  for (const Gate& g : circuit.gates) {
    if (g.kind == GateKind::CNOT) {
      if (!basis.contains(GateKind::CNOT))
        throw ConfigError("device '" + profile.name + "' has no CNOT in its basis");
      if (!profile.coupled(g.qubits[0], g.qubits[1]))
        throw RoutingError("CNOT(" + std::to_string(g.qubits[0]) + "," + std::to_string(g.qubits[1]) +
                           ") is not in the coupling map of '" + profile.name + "'; routing is not supported");
      out.gates.push_back(g);
      continue;
    }
    if (basis.contains(g.kind)) {
      out.gates.push_back(g);
      continue;
    }
    const EulerAngles e = zyz_decompose(single_qubit_unitary(g.kind, g.angles));
    if (u_family)
      emit_u_family(out.gates, g.qubits[0], e, basis);
    else if (rz_sx)
      emit_rz_sx(out.gates, g.qubits[0], e);
    else
      throw ConfigError("cannot express " + std::string(to_string(g.kind)) + " in the basis of '" + profile.name +
                        "'");
  }
  return out;
}

DeviceProfile depolarizing_profile(int n_qubits, double p, std::string name) {
  DeviceProfile prof;
  if (name.empty()) {
    std::ostringstream os;
    os.precision(17);
    os << "depolarizing_p" << p;
    name = os.str();
  }
  prof.name = std::move(name);
  prof.n_qubits = n_qubits;
  prof.basis_gates = {GateKind::RX, GateKind::RY, GateKind::RZ, GateKind::CNOT};
  prof.coupling_map = linear_chain(n_qubits);
  prof.noise = UniformDepolarizing{p};
  return prof;
}

namespace {

// Calibration tables for ten physical qubits; values lie inside the
// min/median/max ranges of two published IBM device snapshots.
struct Calibration {
  std::array<double, 10> t1, t2, meas0_prep1, meas1_prep0;
};

constexpr Calibration kDeviceA{
    {71.86, 38.89, 96.20, 119.14, 64.50, 88.30, 52.70, 79.40, 101.60, 58.00},
    {88.30, 14.55, 120.50, 142.49, 70.20, 95.10, 40.30, 110.80, 130.00, 60.90},
    {0.0250, 0.0186, 0.0300, 0.0900, 0.0220, 0.0270, 0.0400, 0.0210, 0.0330, 0.0250},
    {0.0057, 0.0016, 0.0080, 0.0298, 0.0040, 0.0060, 0.0120, 0.0050, 0.0070, 0.0057},
};

constexpr Calibration kDeviceB{
    {73.76, 24.11, 98.44, 81.00, 60.20, 90.50, 45.70, 70.00, 85.30, 66.60},
    {79.06, 9.60, 153.18, 95.00, 50.40, 120.70, 30.20, 88.80, 140.10, 70.50},
    {0.0481, 0.0202, 0.2128, 0.0500, 0.0350, 0.0600, 0.0410, 0.0300, 0.0700, 0.0450},
    {0.0227, 0.0062, 0.2128, 0.0200, 0.0150, 0.0300, 0.0180, 0.0100, 0.0250, 0.0200},
};

CalibratedNoise take(const Calibration& cal, int n) {
  CalibratedNoise noise;
  noise.t1.assign(cal.t1.begin(), cal.t1.begin() + n);
  noise.t2.assign(cal.t2.begin(), cal.t2.begin() + n);
  noise.prob_meas0_prep1.assign(cal.meas0_prep1.begin(), cal.meas0_prep1.begin() + n);
  noise.prob_meas1_prep0.assign(cal.meas1_prep0.begin(), cal.meas1_prep0.begin() + n);
  return noise;
}

}  // namespace

DeviceProfile builtin_profile(std::string_view name, int n_qubits) {
  if (n_qubits < 1 || n_qubits > 10) throw ConfigError("built-in profiles cover 1..10 qubits");
  if (name == "depolarizing") return depolarizing_profile(n_qubits, 0.05, "depolarizing");
  DeviceProfile prof;
  prof.name = std::string(name);
  prof.n_qubits = n_qubits;
  if (name == "device_a") {
    prof.basis_gates = {GateKind::RZ, GateKind::SX, GateKind::X, GateKind::CNOT};
    prof.coupling_map = linear_chain(n_qubits);
    CalibratedNoise noise = take(kDeviceA, n_qubits);
    noise.gate_errors = {{GateKind::RZ, 0.0}, {GateKind::SX, 0.0003}, {GateKind::X, 0.0003}, {GateKind::CNOT, 0.0101}};
    prof.noise = std::move(noise);
  } else if (name == "device_b") {
    prof.basis_gates = {GateKind::U1, GateKind::U2, GateKind::U3, GateKind::CNOT};
    prof.coupling_map = linear_chain(n_qubits);
    // Ladder rungs give this device a different connection pattern.
    for (int q = 0; q + 2 < n_qubits; q += 2) prof.coupling_map.emplace_back(q, q + 2);
    CalibratedNoise noise = take(kDeviceB, n_qubits);
    noise.gate_errors = {{GateKind::U1, 0.0}, {GateKind::U2, 0.0005}, {GateKind::U3, 0.0010}, {GateKind::CNOT, 0.0165}};
    prof.noise = std::move(noise);
  } else {
    throw ConfigError("unknown built-in profile '" + std::string(name) + "'");
  }
  return prof;
}

std::vector<std::string> builtin_profile_names() { return {"depolarizing", "device_a", "device_b"}; }

nlohmann::json to_json(const Gate& gate) {
  return {{"kind", std::string(to_string(gate.kind))}, {"qubits", gate.qubits}, {"angles", gate.angles}};
}

nlohmann::json to_json(const Circuit& circuit) {
  nlohmann::json gates = nlohmann::json::array();
  for (const Gate& g : circuit.gates) gates.push_back(to_json(g));
  return {{"n_qubits", circuit.n_qubits}, {"layer_count", circuit.layer_count}, {"gates", std::move(gates)}};
}

nlohmann::json to_json(const DeviceProfile& profile) {
  nlohmann::json basis = nlohmann::json::array();
  for (GateKind k : profile.basis_gates) basis.push_back(std::string(to_string(k)));
  nlohmann::json coupling = nlohmann::json::array();
  for (const auto& [a, b] : profile.coupling_map) coupling.push_back({a, b});
  nlohmann::json noise;
  if (const auto* dep = std::get_if<UniformDepolarizing>(&profile.noise)) {
    noise = {{"model", "depolarizing"}, {"p", dep->p}};
  } else {
    const auto& cal = std::get<CalibratedNoise>(profile.noise);
    nlohmann::json errors = nlohmann::json::object();
    for (const auto& [k, e] : cal.gate_errors) errors[std::string(to_string(k))] = e;
    noise = {{"model", "device"},
             {"t1", cal.t1},
             {"t2", cal.t2},
             {"gate_errors", std::move(errors)},
             {"prob_meas0_prep1", cal.prob_meas0_prep1},
             {"prob_meas1_prep0", cal.prob_meas1_prep0}};
  }
  return {{"name", profile.name},
          {"n_qubits", profile.n_qubits},
          {"basis_gates", std::move(basis)},
          {"coupling_map", std::move(coupling)},
          {"noise", std::move(noise)}};
}

Gate gate_from_json(const nlohmann::json& j) {
  try {
    Gate g{gate_kind_from_string(j.at("kind").get<std::string>()), j.at("qubits").get<std::vector<int>>(),
           j.value("angles", std::vector<double>{})};
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed gate JSON: ") + e.what());
  }
}

Circuit circuit_from_json(const nlohmann::json& j) {
  try {
    Circuit c;
    c.n_qubits = j.at("n_qubits").get<int>();
    c.layer_count = j.value("layer_count", 0);
    for (const auto& g : j.at("gates")) c.gates.push_back(gate_from_json(g));
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed circuit JSON: ") + e.what());
  }
}

DeviceProfile profile_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKeys{"name", "n_qubits", "basis_gates", "coupling_map", "noise"};
  try {
    for (const auto& [key, _] : j.items())
      if (!kKeys.contains(key)) throw ConfigError("unknown profile field '" + key + "'");
    DeviceProfile prof;
    prof.name = j.at("name").get<std::string>();
    prof.n_qubits = j.at("n_qubits").get<int>();
    for (const auto& k : j.at("basis_gates")) prof.basis_gates.insert(gate_kind_from_string(k.get<std::string>()));
    for (const auto& e : j.at("coupling_map")) prof.coupling_map.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    const auto& noise = j.at("noise");
    const std::string model = noise.at("model").get<std::string>();
    if (model == "depolarizing") {
      prof.noise = UniformDepolarizing{noise.at("p").get<double>()};
    } else if (model == "device") {
      CalibratedNoise cal;
      cal.t1 = json_vec(noise, "t1");
      cal.t2 = json_vec(noise, "t2");
      cal.prob_meas0_prep1 = json_vec(noise, "prob_meas0_prep1");
      cal.prob_meas1_prep0 = json_vec(noise, "prob_meas1_prep0");
      for (const auto& [k, v] : noise.at("gate_errors").items()) cal.gate_errors[gate_kind_from_string(k)] = v.get<double>();
      prof.noise = std::move(cal);
    } else {
      throw ConfigError("unknown noise model '" + model + "'");
    }
    return prof;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed profile JSON: ") + e.what());
  }
}

DeviceProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profile file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("profile file '" + path + "' is not valid JSON: " + e.what());
  }
  return profile_from_json(j);
}

}  // namespace xplat::circuits
