#include "xplat/qsim.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "xplat/error.hpp"

namespace xplat::qsim {

namespace {

using Matrix = DensityMatrix::Matrix;
using cd = std::complex<double>;
using circuits::GateKind;

constexpr double kTraceTol = 1e-10;
constexpr double kHermTol = 1e-10;
constexpr double kPsdTol = 1e-9;

std::int64_t bit_of(int n, int qubit) { return std::int64_t{1} << (n - 1 - qubit); }

void check_qubit(const DensityMatrix& s, int q) {
  if (q < 0 || q >= s.n_qubits())
    throw ConfigError("qubit index " + std::to_string(q) + " out of range for " + std::to_string(s.n_qubits()) +
                      "-qubit state");
}

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " = " + std::to_string(p) + " outside [0, 1]");
}

// K rho K^dagger for a 2x2 operator K on one qubit.
Matrix conjugate_1q(const Matrix& rho, int n, int qubit, const Eigen::Matrix2cd& k) {
  const std::int64_t dim = rho.rows();
  const std::int64_t mask = bit_of(n, qubit);
  Matrix tmp(dim, dim);
  for (std::int64_t i0 = 0; i0 < dim; ++i0) {
    if (i0 & mask) continue;
    const std::int64_t i1 = i0 | mask;
    tmp.row(i0) = k(0, 0) * rho.row(i0) + k(0, 1) * rho.row(i1);
    tmp.row(i1) = k(1, 0) * rho.row(i0) + k(1, 1) * rho.row(i1);
  }
  Matrix out(dim, dim);
  const cd c00 = std::conj(k(0, 0)), c01 = std::conj(k(0, 1));
  const cd c10 = std::conj(k(1, 0)), c11 = std::conj(k(1, 1));
  for (std::int64_t r = 0; r < dim; ++r) {
    for (std::int64_t j0 = 0; j0 < dim; ++j0) {
      if (j0 & mask) continue;
      const std::int64_t j1 = j0 | mask;
      const cd a = tmp(r, j0), b = tmp(r, j1);
      out(r, j0) = a * c00 + b * c01;
      out(r, j1) = a * c10 + b * c11;
    }
  }
  return out;
}

DensityMatrix apply_cnot(const DensityMatrix& s, int control, int target) {
  check_qubit(s, control);
  check_qubit(s, target);
  if (control == target) throw ConfigError("CNOT control and target must differ");
  const int n = s.n_qubits();
  const std::int64_t cm = bit_of(n, control), tm = bit_of(n, target);
  auto perm = [&](std::int64_t i) { return (i & cm) ? (i ^ tm) : i; };
  const std::int64_t dim = s.dim();
  Matrix out(dim, dim);
  for (std::int64_t i = 0; i < dim; ++i) {
    const std::int64_t pi = perm(i);
    for (std::int64_t j = 0; j < dim; ++j) out(i, j) = s.data()(pi, perm(j));
  }
  return DensityMatrix::adopt(n, std::move(out));
}

// (1 - p) rho + p * Tr_S(rho) (x) I/2^|S| for the qubit subset given by mask.
DensityMatrix depolarize_subset(const DensityMatrix& s, std::int64_t mask, int subset_size, double p) {
  if (p == 0.0) return s;
  const std::int64_t dim = s.dim();
  const double norm = 1.0 / static_cast<double>(std::int64_t{1} << subset_size);
  // Enumerate the 2^|S| assignments of the masked bits.
  std::vector<std::int64_t> patterns{0};
  for (std::int64_t b = 1; b < dim; b <<= 1) {
    if (!(mask & b)) continue;
    const std::size_t sz = patterns.size();
    for (std::size_t k = 0; k < sz; ++k) patterns.push_back(patterns[k] | b);
  }
  Matrix out = (1.0 - p) * s.data();
  for (std::int64_t i = 0; i < dim; ++i) {
    if (i & mask) continue;
    for (std::int64_t j = 0; j < dim; ++j) {
      if (j & mask) continue;
      cd acc = 0.0;
      for (std::int64_t pat : patterns) acc += s.data()(i | pat, j | pat);
      acc *= p * norm;
      for (std::int64_t pat : patterns) out(i | pat, j | pat) += acc;
    }
  }
  return DensityMatrix::adopt(s.n_qubits(), std::move(out));
}

}  // namespace

DensityMatrix DensityMatrix::ground(int n_qubits) {
  if (n_qubits < 1 || n_qubits > kMaxQubits)
    throw ResourceError("density matrices support 1.." + std::to_string(kMaxQubits) + " qubits, got " +
                        std::to_string(n_qubits));
  const std::int64_t dim = std::int64_t{1} << n_qubits;
  Matrix m = Matrix::Zero(dim, dim);
  m(0, 0) = 1.0;
  return DensityMatrix(n_qubits, std::move(m));
}

DensityMatrix DensityMatrix::maximally_mixed(int n_qubits) {
  DensityMatrix g = ground(n_qubits);
  const std::int64_t dim = g.dim();
  g.data_ = Matrix::Identity(dim, dim) / static_cast<double>(dim);
  return g;
}

DensityMatrix DensityMatrix::pure(const Eigen::VectorXcd& psi) {
  const std::int64_t dim = psi.size();
  int n = 0;
  while ((std::int64_t{1} << n) < dim) ++n;
  if ((std::int64_t{1} << n) != dim || n < 1) throw ConfigError("state vector length must be a power of two");
  if (n > kMaxQubits) throw ResourceError("state exceeds " + std::to_string(kMaxQubits) + " qubits");
  const double nrm = psi.norm();
  if (std::abs(nrm - 1.0) > 1e-10) throw ConfigError("state vector is not normalised");
  Matrix m = psi * psi.adjoint();
  return DensityMatrix(n, std::move(m));
}

DensityMatrix DensityMatrix::from_matrix(Matrix m) {
  if (m.rows() != m.cols()) throw ConfigError("density matrix must be square");
  const std::int64_t dim = m.rows();
  int n = 0;
  while ((std::int64_t{1} << n) < dim) ++n;
  if ((std::int64_t{1} << n) != dim || n < 1) throw ConfigError("density matrix dimension must be a power of two");
  if (n > kMaxQubits) throw ResourceError("state exceeds " + std::to_string(kMaxQubits) + " qubits");
  DensityMatrix d(n, std::move(m));
  d.check_invariants();
  return d;
}

double DensityMatrix::hermiticity_error() const { return (data_ - data_.adjoint()).cwiseAbs().maxCoeff(); }

double DensityMatrix::min_eigenvalue() const {
  Eigen::MatrixXcd h = 0.5 * (data_ + data_.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void DensityMatrix::check_invariants() const {
  const double tr = trace();
  if (std::abs(tr - 1.0) > kTraceTol) throw NumericError("density matrix trace " + std::to_string(tr) + " != 1");
  const double herm = hermiticity_error();
  if (herm > kHermTol) throw NumericError("density matrix not Hermitian (max deviation " + std::to_string(herm) + ")");
  const double lmin = min_eigenvalue();
  if (lmin < -kPsdTol) throw NumericError("density matrix not PSD (min eigenvalue " + std::to_string(lmin) + ")");
}

DensityMatrix apply_unitary_1q(const DensityMatrix& state, int qubit, const Eigen::Matrix2cd& u) {
  check_qubit(state, qubit);
  return DensityMatrix::adopt(state.n_qubits(), conjugate_1q(state.data(), state.n_qubits(), qubit, u));
}

DensityMatrix apply_kraus_1q(const DensityMatrix& state, int qubit, std::span<const Eigen::Matrix2cd> kraus) {
  check_qubit(state, qubit);
  Matrix acc = Matrix::Zero(state.dim(), state.dim());
  for (const auto& k : kraus) acc += conjugate_1q(state.data(), state.n_qubits(), qubit, k);
  return DensityMatrix::adopt(state.n_qubits(), std::move(acc));
}

DensityMatrix apply_gate(const DensityMatrix& state, const circuits::Gate& gate) {
  gate.validate();
  switch (gate.kind) {
    case GateKind::CNOT:
      return apply_cnot(state, gate.qubits[0], gate.qubits[1]);
    case GateKind::INPUT:
    case GateKind::OUTPUT:
      throw ConfigError("unsupported gate kind " + std::string(circuits::to_string(gate.kind)));
    default:
      return apply_unitary_1q(state, gate.qubits[0], circuits::single_qubit_unitary(gate.kind, gate.angles));
  }
}

DensityMatrix apply_depolarizing2(const DensityMatrix& state, int qubit_a, int qubit_b, double p) {
  check_prob(p, "depolarizing p");
  check_qubit(state, qubit_a);
  check_qubit(state, qubit_b);
  if (qubit_a == qubit_b) throw ConfigError("two-qubit depolarizing needs distinct qubits");
  const int n = state.n_qubits();
  return depolarize_subset(state, bit_of(n, qubit_a) | bit_of(n, qubit_b), 2, p);
}

DensityMatrix apply_depolarizing1(const DensityMatrix& state, int qubit, double p) {
  check_prob(p, "depolarizing p");
  check_qubit(state, qubit);
  return depolarize_subset(state, bit_of(state.n_qubits(), qubit), 1, p);
}

DensityMatrix apply_amplitude_damping(const DensityMatrix& state, int qubit, double gamma) {
  check_prob(gamma, "amplitude damping gamma");
  if (gamma == 0.0) return state;
  std::array<Eigen::Matrix2cd, 2> k;
  k[0] << 1.0, 0.0, 0.0, std::sqrt(1.0 - gamma);
  k[1] << 0.0, std::sqrt(gamma), 0.0, 0.0;
  return apply_kraus_1q(state, qubit, k);
}

DensityMatrix apply_phase_damping(const DensityMatrix& state, int qubit, double lambda) {
  check_prob(lambda, "phase damping lambda");
  if (lambda == 0.0) return state;
  std::array<Eigen::Matrix2cd, 2> k;
  k[0] << 1.0, 0.0, 0.0, std::sqrt(1.0 - lambda);
  k[1] << 0.0, 0.0, 0.0, std::sqrt(lambda);
  return apply_kraus_1q(state, qubit, k);
}

double amplitude_damping_gamma(double duration, double t1) {
  if (std::isinf(t1)) return 0.0;
  return 1.0 - std::exp(-duration / t1);
}

double phase_damping_lambda(double duration, double t1, double t2) {
  const double inv_t1 = std::isinf(t1) ? 0.0 : 1.0 / t1;
  const double inv_t2 = std::isinf(t2) ? 0.0 : 1.0 / t2;
  const double inv_tphi = std::max(0.0, inv_t2 - 0.5 * inv_t1);
  return 1.0 - std::exp(-2.0 * duration * inv_tphi);
}

DensityMatrix apply_device_noise(const DensityMatrix& state, const circuits::Gate& gate,
                                 const circuits::DeviceProfile& profile) {
  if (const auto* dep = std::get_if<circuits::UniformDepolarizing>(&profile.noise)) {
    if (gate.kind != GateKind::CNOT) return state;
    return apply_depolarizing2(state, gate.qubits[0], gate.qubits[1], dep->p);
  }
  const auto& cal = std::get<circuits::CalibratedNoise>(profile.noise);
  for (int q : gate.qubits) {
    if (q < 0 || q >= static_cast<int>(cal.t1.size()) || q >= static_cast<int>(cal.t2.size()))
      throw ConfigError("profile '" + profile.name + "' has no T1/T2 calibration for qubit " + std::to_string(q));
  }
  const auto err_it = cal.gate_errors.find(gate.kind);
  if (err_it == cal.gate_errors.end())
    throw ConfigError("profile '" + profile.name + "' has no error rate for gate " +
                      std::string(circuits::to_string(gate.kind)));

  DensityMatrix out = gate.kind == GateKind::CNOT
                          ? apply_depolarizing2(state, gate.qubits[0], gate.qubits[1], err_it->second)
                          : apply_depolarizing1(state, gate.qubits[0], err_it->second);
  const double t = circuits::gate_duration(gate.kind);
  for (int q : gate.qubits) out = apply_amplitude_damping(out, q, amplitude_damping_gamma(t, cal.t1[q]));
  for (int q : gate.qubits) out = apply_phase_damping(out, q, phase_damping_lambda(t, cal.t1[q], cal.t2[q]));
  return out;
}

std::vector<int> apply_readout_error(std::span<const int> bits, const circuits::DeviceProfile& profile,
                                     SeededRng& rng) {
  std::vector<int> out(bits.begin(), bits.end());
  const auto* cal = std::get_if<circuits::CalibratedNoise>(&profile.noise);
  if (cal == nullptr) return out;
  for (std::size_t q = 0; q < out.size(); ++q) {
    if (q >= cal->prob_meas0_prep1.size() || q >= cal->prob_meas1_prep0.size())
      throw ConfigError("profile '" + profile.name + "' has no readout calibration for qubit " + std::to_string(q));
    const double flip = out[q] ? cal->prob_meas0_prep1[q] : cal->prob_meas1_prep0[q];
    check_prob(flip, "readout flip probability");
    if (rng.bernoulli(flip)) out[q] ^= 1;
  }
  return out;
}

DensityMatrix run_circuit(const circuits::Circuit& circuit, const circuits::DeviceProfile& profile) {
  circuit.validate();
  if (circuit.n_qubits != profile.n_qubits)
    throw ConfigError("circuit has " + std::to_string(circuit.n_qubits) + " qubits, profile '" + profile.name +
                      "' has " + std::to_string(profile.n_qubits));
  DensityMatrix rho = DensityMatrix::ground(circuit.n_qubits);
  for (const auto& gate : circuit.gates) {
    rho = apply_gate(rho, gate);
    rho = apply_device_noise(rho, gate, profile);
  }
  return rho;
}

double trace_product(const Matrix& a, const Matrix& b) {
  // Tr(AB) = sum_ij A_ij B_ji.
  return (a.array() * b.transpose().array()).sum().real();
}

double purity(const DensityMatrix& rho) { return trace_product(rho.data(), rho.data()); }

double cross_fidelity(const DensityMatrix& rho_i, const DensityMatrix& rho_j) {
  if (rho_i.dim() != rho_j.dim())
    throw ConfigError("cross_fidelity dimension mismatch: " + std::to_string(rho_i.dim()) + " vs " +
                      std::to_string(rho_j.dim()));
  const double pi = purity(rho_i), pj = purity(rho_j);
  if (pi < 1e-12 || pj < 1e-12) throw NumericError("cross_fidelity denominator degenerate (purity < 1e-12)");
  return trace_product(rho_i.data(), rho_j.data()) / std::sqrt(pi * pj);
}

}  // namespace xplat::qsim
