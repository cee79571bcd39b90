#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "test_util.hpp"
#include "xplat/circuits.hpp"
#include "xplat/error.hpp"
#include "xplat/qsim.hpp"

using namespace xplat;
using circuits::GateKind;
using circuits::make_gate;
using qsim::DensityMatrix;
using Matrix = DensityMatrix::Matrix;
using cd = std::complex<double>;

namespace {

// Dense oracle: kron of 2x2 / 4x4 blocks built by hand, qubit 0 leftmost.
Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Matrix m2(cd a, cd b, cd c, cd d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

Matrix eye(int d) { return Matrix::Identity(d, d); }

// Partial trace over one qubit of an n-qubit matrix, then I/2 on it.
Matrix depolarize_oracle_1q(const Matrix& rho, int n, int q, double p) {
  const int d = 1 << n, bit = 1 << (n - 1 - q);
  Matrix replaced = Matrix::Zero(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) {
      if ((r & bit) != (c & bit)) continue;
      const cd reduced = rho(r & ~bit, c & ~bit) + rho(r | bit, c | bit);
      replaced(r, c) = 0.5 * reduced;
    }
  return (1 - p) * rho + p * replaced;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("gates: RZ leaves |0><0| unchanged and X flips it") {
  const auto g = DensityMatrix::ground(1);
  const auto rz = qsim::apply_gate(g, make_gate(GateKind::RZ, {0}, {1.234}));
  CHECK(max_abs_diff(rz.data(), g.data()) < 1e-12);
  const auto x = qsim::apply_gate(g, make_gate(GateKind::X, {0}));
  CHECK(std::abs(x(1, 1) - 1.0) < 1e-12);
  CHECK(std::abs(x(0, 0)) < 1e-12);
}

TEST_CASE("gates: H then CNOT gives a pure Bell state") {
  // H = U2(0, pi).
  auto rho = qsim::apply_gate(DensityMatrix::ground(2), make_gate(GateKind::U2, {0}, {0.0, M_PI}));
  rho = qsim::apply_gate(rho, make_gate(GateKind::CNOT, {0, 1}));
  Matrix bell = Matrix::Zero(4, 4);
  bell(0, 0) = bell(0, 3) = bell(3, 0) = bell(3, 3) = 0.5;
  CHECK(max_abs_diff(rho.data(), bell) < 1e-12);
  CHECK(qsim::purity(rho) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gates: qubit 0 is the most significant bit") {
  const auto rho = qsim::apply_gate(DensityMatrix::ground(3), make_gate(GateKind::X, {0}));
  CHECK(std::abs(rho(4, 4) - 1.0) < 1e-12);
  const auto c = qsim::apply_gate(rho, make_gate(GateKind::CNOT, {0, 2}));
  CHECK(std::abs(c(5, 5) - 1.0) < 1e-12);
}

TEST_CASE("gates: errors") {
  const auto g = DensityMatrix::ground(2);
  CHECK_THROWS_AS(qsim::apply_gate(g, make_gate(GateKind::X, {2})), ConfigError);
  CHECK_THROWS_AS(qsim::apply_gate(g, make_gate(GateKind::RX, {0}, {NAN})), ConfigError);
  CHECK_THROWS_AS(DensityMatrix::ground(qsim::kMaxQubits + 1), ResourceError);
}

TEST_CASE("depolarizing2: p = 0, p = 1 and the Bell p = 0.5 oracle") {
  Matrix bell = Matrix::Zero(4, 4);
  bell(0, 0) = bell(0, 3) = bell(3, 0) = bell(3, 3) = 0.5;
  const auto rho = DensityMatrix::from_matrix(bell);
  CHECK(max_abs_diff(qsim::apply_depolarizing2(rho, 0, 1, 0.0).data(), bell) < 1e-15);
  const auto full = qsim::apply_depolarizing2(rho, 0, 1, 1.0);
  CHECK(max_abs_diff(full.data(), eye(4) / 4.0) < 1e-15);
  CHECK(qsim::purity(full) == doctest::Approx(0.25));
  // 0.5 Bell + 0.5 I/4: eigenvalues 5/8, 1/8, 1/8, 1/8, so purity 28/64.
  CHECK(qsim::purity(qsim::apply_depolarizing2(rho, 0, 1, 0.5)) == doctest::Approx(28.0 / 64.0).epsilon(1e-12));
  CHECK_THROWS_AS(qsim::apply_depolarizing2(rho, 0, 1, 1.5), ConfigError);
  CHECK_THROWS_AS(qsim::apply_depolarizing2(rho, 0, 0, 0.1), ConfigError);
}

TEST_CASE("depolarizing2 on a subset matches the dense partial-trace oracle") {
  SeededRng rng(11);
  const auto rho = test::random_density(3, rng);
  const double p = 0.37;
  const auto got = qsim::apply_depolarizing2(rho, 0, 2, p);
  // Fully depolarizing two qubits = composing both single-qubit replacements.
  const Matrix both = depolarize_oracle_1q(depolarize_oracle_1q(rho.data(), 3, 0, 1.0), 3, 2, 1.0);
  CHECK(max_abs_diff(got.data(), (1 - p) * rho.data() + p * both) < 1e-12);
  CHECK(max_abs_diff(qsim::apply_depolarizing1(rho, 1, p).data(), depolarize_oracle_1q(rho.data(), 3, 1, p)) < 1e-12);
}

TEST_CASE("damping: closed forms and full relaxation") {
  CHECK(qsim::amplitude_damping_gamma(0.3, 70.0) == doctest::Approx(1.0 - std::exp(-0.3 / 70.0)).epsilon(1e-15));
  CHECK(qsim::amplitude_damping_gamma(0.3, INFINITY) == 0.0);
  // 1/Tphi = 1/80 - 1/140.
  const double tphi = 1.0 / (1.0 / 80.0 - 1.0 / 140.0);
  CHECK(qsim::phase_damping_lambda(0.05, 70.0, 80.0) == doctest::Approx(1.0 - std::exp(-2.0 * 0.05 / tphi)));
  // T2 = 2 T1 leaves no pure dephasing.
  CHECK(qsim::phase_damping_lambda(0.3, 70.0, 140.0) == doctest::Approx(0.0));

  const auto one = qsim::apply_gate(DensityMatrix::ground(1), make_gate(GateKind::X, {0}));
  const auto relaxed = qsim::apply_amplitude_damping(one, 0, 1.0);
  CHECK(std::abs(relaxed(0, 0) - 1.0) < 1e-15);
  CHECK(std::abs(relaxed(1, 1)) < 1e-15);
}

TEST_CASE("device noise: identity when error free, fixed order otherwise") {
  auto prof = circuits::builtin_profile("device_a", 2);
  auto& cal = std::get<circuits::CalibratedNoise>(prof.noise);
  SeededRng rng(3);
  const auto rho = test::random_density(2, rng);
  const auto g = make_gate(GateKind::CNOT, {0, 1});

  auto clean = prof;
  auto& cc = std::get<circuits::CalibratedNoise>(clean.noise);
  for (auto& [k, e] : cc.gate_errors) e = 0.0;
  cc.t1.assign(2, INFINITY);
  cc.t2.assign(2, INFINITY);
  CHECK(max_abs_diff(qsim::apply_device_noise(rho, g, clean).data(), rho.data()) < 1e-15);

  // Hand-built Kraus-product oracle in the pinned order.
  const double e = cal.gate_errors.at(GateKind::CNOT);
  Matrix expect = rho.data();
  {
    const Matrix a = depolarize_oracle_1q(depolarize_oracle_1q(expect, 2, 0, 1.0), 2, 1, 1.0);
    expect = (1 - e) * expect + e * a;
  }
  for (int q = 0; q < 2; ++q) {
    const double gam = 1.0 - std::exp(-0.3 / cal.t1[q]);
    const Matrix k0 = m2(1, 0, 0, std::sqrt(1 - gam)), k1 = m2(0, std::sqrt(gam), 0, 0);
    const Matrix K0 = q == 0 ? kron(k0, eye(2)) : kron(eye(2), k0);
    const Matrix K1 = q == 0 ? kron(k1, eye(2)) : kron(eye(2), k1);
    expect = K0 * expect * K0.adjoint() + K1 * expect * K1.adjoint();
  }
  for (int q = 0; q < 2; ++q) {
    const double rate = std::max(0.0, 1.0 / cal.t2[q] - 0.5 / cal.t1[q]);
    const double lam = 1.0 - std::exp(-2.0 * 0.3 * rate);
    const Matrix k0 = m2(1, 0, 0, std::sqrt(1 - lam)), k1 = m2(0, 0, 0, std::sqrt(lam));
    const Matrix K0 = q == 0 ? kron(k0, eye(2)) : kron(eye(2), k0);
    const Matrix K1 = q == 0 ? kron(k1, eye(2)) : kron(eye(2), k1);
    expect = K0 * expect * K0.adjoint() + K1 * expect * K1.adjoint();
  }
  CHECK(max_abs_diff(qsim::apply_device_noise(rho, g, prof).data(), expect) < 1e-12);

  auto missing = prof;
  std::get<circuits::CalibratedNoise>(missing.noise).t1.resize(1);
  CHECK_THROWS_AS(qsim::apply_device_noise(rho, g, missing), ConfigError);
}

TEST_CASE("readout: zero, certain and 0.1 flip rates") {
  auto prof = circuits::builtin_profile("device_a", 2);
  auto& cal = std::get<circuits::CalibratedNoise>(prof.noise);
  SeededRng rng(5);
  cal.prob_meas0_prep1.assign(2, 0.0);
  cal.prob_meas1_prep0.assign(2, 0.0);
  const std::vector<int> bits{1, 0};
  CHECK(qsim::apply_readout_error(bits, prof, rng) == bits);
  cal.prob_meas0_prep1[0] = 1.0;
  CHECK(qsim::apply_readout_error(bits, prof, rng) == std::vector<int>{0, 0});

  cal.prob_meas1_prep0.assign(2, 0.1);
  const std::vector<int> zeros{0, 0};
  int flips = 0;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) flips += qsim::apply_readout_error(zeros, prof, rng)[0];
  CHECK(std::abs(flips / double(trials) - 0.1) <= 0.01);
}

TEST_CASE("run_circuit: empty, single X, and noisy purity below one") {
  const auto clean = circuits::depolarizing_profile(3, 0.0);
  circuits::Circuit empty{3, {}, 0};
  CHECK(max_abs_diff(qsim::run_circuit(empty, clean).data(), DensityMatrix::ground(3).data()) < 1e-15);
  circuits::Circuit x{3, {make_gate(GateKind::X, {0})}, 1};
  CHECK(std::abs(qsim::run_circuit(x, clean)(4, 4) - 1.0) < 1e-15);

  const auto noisy = circuits::depolarizing_profile(4, 0.05);
  SeededRng rng(17);
  int tested = 0;
  while (tested < 5) {
    const auto c = circuits::sample_circuit(4, 3, rng);
    bool has_cnot = false;
    for (const auto& g : c.gates) has_cnot |= g.kind == GateKind::CNOT;
    if (!has_cnot) continue;
    CHECK(qsim::purity(qsim::run_circuit(circuits::transpile(c, noisy), noisy)) < 1.0 - 1e-6);
    ++tested;
  }
}

TEST_CASE("cross_fidelity and purity examples") {
  const auto zero = DensityMatrix::ground(1);
  const auto mixed = DensityMatrix::maximally_mixed(1);
  const auto one = qsim::apply_gate(zero, make_gate(GateKind::X, {0}));
  CHECK(qsim::cross_fidelity(zero, mixed) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(qsim::cross_fidelity(zero, one) == doctest::Approx(0.0));
  CHECK(qsim::purity(mixed) == doctest::Approx(0.5));
  CHECK(qsim::purity(DensityMatrix::maximally_mixed(2)) == doctest::Approx(0.25));
  SeededRng rng(1);
  const auto r = test::random_density(3, rng);
  CHECK(qsim::cross_fidelity(r, r) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(qsim::cross_fidelity(zero, DensityMatrix::ground(2)), ConfigError);
}

TEST_CASE("property: channels preserve trace over 1000 random inputs") {
  SeededRng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng.index(3));
    const auto rho = test::random_density(n, rng);
    const int q = static_cast<int>(rng.index(n));
    const double p = rng.uniform();
    DensityMatrix out = qsim::apply_depolarizing1(rho, q, p);
    switch (t % 4) {
      case 0:
        out = qsim::apply_amplitude_damping(rho, q, p);
        break;
      case 1:
        out = qsim::apply_phase_damping(rho, q, p);
        break;
      case 2:
        if (n >= 2) out = qsim::apply_depolarizing2(rho, q, (q + 1) % n, p);
        break;
      default:
        break;
    }
    REQUIRE(std::abs(out.trace() - 1.0) <= 1e-10);
  }
}

TEST_CASE("property: fidelity symmetric and bounded") {
  SeededRng rng(99);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng.index(3));
    const auto a = test::random_density(n, rng), b = test::random_density(n, rng);
    const double ab = qsim::cross_fidelity(a, b), ba = qsim::cross_fidelity(b, a);
    REQUIRE(ab == ba);
    REQUIRE(ab >= -1e-9);
    REQUIRE(ab <= 1.0 + 1e-9);
  }
}

TEST_CASE("property: Hermitian and PSD after 50 operations") {
  SeededRng rng(7);
  const auto prof = circuits::builtin_profile("device_a", 3);
  for (int run = 0; run < 10; ++run) {
    auto rho = DensityMatrix::ground(3);
    for (int s = 0; s < 50; ++s) {
      const int q = static_cast<int>(rng.index(3));
      circuits::Gate g = rng.bernoulli(0.3) ? make_gate(GateKind::CNOT, {q, (q + 1) % 3})
                                            : make_gate(GateKind::RZ, {q}, {rng.uniform(0, 6.28)});
      if (rng.bernoulli(0.5) && g.kind != GateKind::CNOT) g = make_gate(GateKind::SX, {q});
      rho = qsim::apply_device_noise(qsim::apply_gate(rho, g), g, prof);
    }
    CHECK(rho.hermiticity_error() <= 1e-10);
    CHECK(rho.min_eigenvalue() >= -1e-9);
    CHECK(std::abs(rho.trace() - 1.0) <= 1e-10);
  }
}
