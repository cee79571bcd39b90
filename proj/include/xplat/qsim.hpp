#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "xplat/circuits.hpp"
#include "xplat/rng.hpp"

namespace xplat::qsim {

// Dense simulation is capped here: a 10-qubit density matrix is 16 MiB.
inline constexpr int kMaxQubits = 10;

// Mixed state of n qubits, stored dense and row-major. Qubit 0 is the most
// significant bit of a basis index, so |10...0> has index 2^(n-1).
class DensityMatrix {
 public:
  using Matrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  // |0...0><0...0|.
  static DensityMatrix ground(int n_qubits);
  // I / 2^n.
  static DensityMatrix maximally_mixed(int n_qubits);
  // Projector onto a normalised state vector.
  static DensityMatrix pure(const Eigen::VectorXcd& psi);
  // Wraps an arbitrary matrix after checking trace, Hermiticity and PSD.
  static DensityMatrix from_matrix(Matrix m);
  // Takes ownership without validation; channel implementations use this
  // because they preserve the invariants by construction.
  static DensityMatrix adopt(int n_qubits, Matrix m) { return DensityMatrix(n_qubits, std::move(m)); }

  int n_qubits() const { return n_qubits_; }
  std::int64_t dim() const { return data_.rows(); }
  const Matrix& data() const { return data_; }
  std::complex<double> operator()(std::int64_t r, std::int64_t c) const { return data_(r, c); }

  double trace() const { return data_.trace().real(); }
  double hermiticity_error() const;
  double min_eigenvalue() const;
  // Throws NumericError if trace, Hermiticity or PSD tolerance is violated.
  void check_invariants() const;

 private:
  DensityMatrix(int n, Matrix m) : n_qubits_(n), data_(std::move(m)) {}
  int n_qubits_ = 0;
  Matrix data_;
};

// Channel and gate application. All functions are pure.
DensityMatrix apply_gate(const DensityMatrix& state, const circuits::Gate& gate);
DensityMatrix apply_unitary_1q(const DensityMatrix& state, int qubit, const Eigen::Matrix2cd& u);
DensityMatrix apply_kraus_1q(const DensityMatrix& state, int qubit, std::span<const Eigen::Matrix2cd> kraus);

// (1 - p) rho + p (Tr_{a,b} rho) (x) I/4 on the two qubits.
DensityMatrix apply_depolarizing2(const DensityMatrix& state, int qubit_a, int qubit_b, double p);
// Single-qubit analogue with I/2.
DensityMatrix apply_depolarizing1(const DensityMatrix& state, int qubit, double p);
DensityMatrix apply_amplitude_damping(const DensityMatrix& state, int qubit, double gamma);
DensityMatrix apply_phase_damping(const DensityMatrix& state, int qubit, double lambda);

// gamma = 1 - exp(-t / T1).
double amplitude_damping_gamma(double duration, double t1);
// lambda = 1 - exp(-2 t / T_phi) with 1/T_phi = 1/T2 - 1/(2 T1), clamped at 0.
double phase_damping_lambda(double duration, double t1, double t2);

// Gate-error depolarizing, then amplitude damping, then phase damping on every
// qubit the gate touches. Uniform-depolarizing profiles only act after CNOTs.
DensityMatrix apply_device_noise(const DensityMatrix& state, const circuits::Gate& gate,
                                 const circuits::DeviceProfile& profile);

// Flips each bit with prob_meas0_prep1 (for a 1) or prob_meas1_prep0 (for a 0).
std::vector<int> apply_readout_error(std::span<const int> bits, const circuits::DeviceProfile& profile,
                                     SeededRng& rng);

// Starts from |0...0>, applies each gate followed by its noise.
DensityMatrix run_circuit(const circuits::Circuit& circuit, const circuits::DeviceProfile& profile);

// Tr(rho_i rho_j) / sqrt(Tr(rho_i^2) Tr(rho_j^2)).
double cross_fidelity(const DensityMatrix& rho_i, const DensityMatrix& rho_j);
double purity(const DensityMatrix& rho);
// Re Tr(A B) without forming the product.
double trace_product(const DensityMatrix::Matrix& a, const DensityMatrix::Matrix& b);

}  // namespace xplat::qsim
