#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "xplat/circuits.hpp"
#include "xplat/qsim.hpp"
#include "xplat/rng.hpp"

namespace xplat::shadows {

// Codes double as the on-disk 2-bit basis encoding.
enum class Pauli : std::uint8_t { X = 0, Y = 1, Z = 2 };

char to_char(Pauli p);

struct Record {
  std::vector<Pauli> basis;
  std::vector<std::uint8_t> outcome;

  bool operator==(const Record&) const = default;
};

struct SnapshotSet {
  int n_qubits = 0;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  // Throws ConfigError unless every record has n_qubits bases and bits.
  void validate() const;

  bool operator==(const SnapshotSet&) const = default;
};

// V with V P V^dagger = Z, i.e. the rotation applied before a Z readout.
Eigen::Matrix2cd basis_change(Pauli p);

// 3 V^dagger |b><b| V - I.
Eigen::Matrix2cd snapshot_local(Pauli p, int bit);

// Tr(snapshot_local(a, x) snapshot_local(b, y)): 5 or -4 in a shared basis,
// 1/2 across bases.
double local_overlap(Pauli a, int bit_a, Pauli b, int bit_b);

// Exact outcome distribution of a product-Pauli measurement. Index bit order
// follows the state (qubit 0 is the most significant bit).
std::vector<double> basis_distribution(const qsim::DensityMatrix& rho, std::span<const Pauli> basis);

struct SamplingOptions {
  // Applies the profile's readout flips when set and device-calibrated.
  const circuits::DeviceProfile* readout = nullptr;
  int threads = 1;
};

// m shots, each with an independent uniform basis per qubit. Every shot draws
// from its own stream derived from one draw of rng, so the result does not
// depend on the thread count.
SnapshotSet measure_random_pauli(const qsim::DensityMatrix& rho, int m, SeededRng& rng,
                                 const SamplingOptions& opts = {});

// Same, with every shot measured in the given basis.
SnapshotSet measure_fixed_basis(const qsim::DensityMatrix& rho, std::span<const Pauli> basis, int m,
                                SeededRng& rng, const SamplingOptions& opts = {});

// Mean over records of the tensor product of per-qubit snapshots. Trace one,
// not necessarily positive.
qsim::DensityMatrix::Matrix reconstruct_state(const SnapshotSet& snaps);

struct OverlapEstimate {
  double value = 0.0;
  double cross = 0.0;
  double self_i = 0.0;
  double self_j = 0.0;
  // Set when the product of self-overlaps is not positive; value then uses
  // its absolute value (or is 0 if it vanishes).
  bool unreliable = false;
};

// Mean over record pairs of prod_n Tr(rho_hat_{m,n} rho_hat_{m',n}).
// Self-overlaps drop the m == m' terms unless include_diagonal is set.
double shadow_overlap(const SnapshotSet& a, const SnapshotSet& b, bool self, bool include_diagonal);

OverlapEstimate cs_fidelity(const SnapshotSet& snaps_i, const SnapshotSet& snaps_j, bool include_diagonal = false);

// Empirical outcome distributions per basis setting.
struct ProbTable {
  int n_qubits = 0;
  std::vector<std::vector<Pauli>> settings;
  std::vector<std::vector<double>> probs;

  void validate() const;
};

std::vector<std::vector<Pauli>> random_settings(int n_qubits, int count, SeededRng& rng);

ProbTable sampled_table(const qsim::DensityMatrix& rho, const std::vector<std::vector<Pauli>>& settings,
                        int shots_per_setting, SeededRng& rng, const SamplingOptions& opts = {});
ProbTable exact_table(const qsim::DensityMatrix& rho, const std::vector<std::vector<Pauli>>& settings);

// 2^N sum_{b,b'} (-2)^{-D[b,b']} mean_U P_i(b) P_j(b').
double cc_overlap(const ProbTable& table_i, const ProbTable& table_j);
OverlapEstimate cc_fidelity(const ProbTable& table_i, const ProbTable& table_j);

// Binary layout: u32 n_qubits, u32 M, then per record ceil(3n/8) bytes holding
// n 2-bit basis codes followed by n outcome bits, least significant bit first.
std::vector<std::uint8_t> encode(const SnapshotSet& snaps);
SnapshotSet decode(std::span<const std::uint8_t> bytes);

void write_snapshots(const std::string& path, const SnapshotSet& snaps);
SnapshotSet read_snapshots(const std::string& path);

struct Sidecar {
  std::uint64_t seed = 0;
  std::string profile_name;
  int circuit_id = 0;
};
nlohmann::json to_json(const Sidecar& s);
Sidecar sidecar_from_json(const nlohmann::json& j);

}  // namespace xplat::shadows
