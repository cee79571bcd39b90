#include "xplat/shadows.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <thread>

#include "xplat/error.hpp"

namespace xplat::shadows {

namespace {

using cd = std::complex<double>;
using qsim::DensityMatrix;

constexpr double kInvSqrt2 = 0.70710678118654752440;

std::vector<Pauli> random_basis(int n, SeededRng& rng) {
  std::vector<Pauli> b(static_cast<std::size_t>(n));
  for (auto& p : b) p = static_cast<Pauli>(rng.index(3));
  return b;
}

std::uint64_t basis_key(std::span<const Pauli> basis) {
  std::uint64_t k = 0;
  for (Pauli p : basis) k = k * 3 + static_cast<std::uint64_t>(p);
  return k;
}

int sample_index(const std::vector<double>& probs, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left a sliver above the last cumulative sum.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const std::size_t t = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n));
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += t) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Shared engine: per-shot bases are fixed up front, distributions are
// computed once per distinct setting, then each shot samples from its own
// derived stream.
SnapshotSet sample_shots(const DensityMatrix& rho, std::vector<std::vector<Pauli>> bases, std::uint64_t root,
                         const SamplingOptions& opts) {
  const int n = rho.n_qubits();
  std::map<std::uint64_t, std::size_t> slot;
  std::vector<const std::vector<Pauli>*> distinct;
  for (const auto& b : bases) {
    if (slot.emplace(basis_key(b), distinct.size()).second) distinct.push_back(&b);
  }
  std::vector<std::vector<double>> dists(distinct.size());
  parallel_for(distinct.size(), opts.threads, [&](std::size_t k) { dists[k] = basis_distribution(rho, *distinct[k]); });

  const bool readout = opts.readout != nullptr && !opts.readout->is_depolarizing();
  SnapshotSet out;
  out.n_qubits = n;
  out.records.resize(bases.size());
  parallel_for(bases.size(), opts.threads, [&](std::size_t s) {
    SeededRng rng(derive_seed(root, s));
    const auto& probs = dists[slot.at(basis_key(bases[s]))];
    const int idx = sample_index(probs, rng.uniform());
    std::vector<int> bits(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) bits[q] = (idx >> (n - 1 - q)) & 1;
    if (readout) bits = qsim::apply_readout_error(bits, *opts.readout, rng);
    Record& r = out.records[s];
    r.basis = std::move(bases[s]);
    r.outcome.assign(bits.begin(), bits.end());
  });
  return out;
}

void check_shots(int m) {
  if (m < 1) throw ConfigError("shot count must be >= 1, got " + std::to_string(m));
}

// Tr(snapshot_local(a, x) snapshot_local(b, y)) indexed by [a][x][b][y].
const std::array<double, 36>& local_table() {
  static const std::array<double, 36> t = [] {
    std::array<double, 36> v{};
    for (int a = 0; a < 3; ++a)
      for (int x = 0; x < 2; ++x)
        for (int b = 0; b < 3; ++b)
          for (int y = 0; y < 2; ++y)
            v[((a * 2 + x) * 3 + b) * 2 + y] =
                (snapshot_local(static_cast<Pauli>(a), x) * snapshot_local(static_cast<Pauli>(b), y)).trace().real();
    return v;
  }();
  return t;
}

}  // namespace

char to_char(Pauli p) {
  switch (p) {
    case Pauli::X:
      return 'X';
    case Pauli::Y:
      return 'Y';
    case Pauli::Z:
      return 'Z';
  }
  return '?';
}

void SnapshotSet::validate() const {
  if (n_qubits < 1) throw ConfigError("snapshot set needs n_qubits >= 1");
  for (std::size_t m = 0; m < records.size(); ++m) {
    const auto& r = records[m];
    if (static_cast<int>(r.basis.size()) != n_qubits || static_cast<int>(r.outcome.size()) != n_qubits)
      throw ConfigError("snapshot record " + std::to_string(m) + " does not match n_qubits = " +
                        std::to_string(n_qubits));
    for (auto p : r.basis)
      if (static_cast<int>(p) > 2) throw ConfigError("snapshot record " + std::to_string(m) + " has a bad basis code");
    for (auto b : r.outcome)
      if (b > 1) throw ConfigError("snapshot record " + std::to_string(m) + " has a non-binary outcome");
  }
}

Eigen::Matrix2cd basis_change(Pauli p) {
  Eigen::Matrix2cd v;
  switch (p) {
    case Pauli::X:
      v << kInvSqrt2, kInvSqrt2, kInvSqrt2, -kInvSqrt2;
      break;
    case Pauli::Y:
      // H S^dagger.
      v << kInvSqrt2, cd(0, -kInvSqrt2), kInvSqrt2, cd(0, kInvSqrt2);
      break;
    case Pauli::Z:
      v = Eigen::Matrix2cd::Identity();
      break;
  }
  return v;
}

Eigen::Matrix2cd snapshot_local(Pauli p, int bit) {
  if (bit != 0 && bit != 1) throw ConfigError("outcome bit must be 0 or 1");
  const Eigen::Matrix2cd v = basis_change(p);
  Eigen::Matrix2cd proj = Eigen::Matrix2cd::Zero();
  proj(bit, bit) = 1.0;
  return 3.0 * v.adjoint() * proj * v - Eigen::Matrix2cd::Identity();
}

double local_overlap(Pauli a, int bit_a, Pauli b, int bit_b) {
  return local_table()[((static_cast<int>(a) * 2 + bit_a) * 3 + static_cast<int>(b)) * 2 + bit_b];
}

std::vector<double> basis_distribution(const DensityMatrix& rho, std::span<const Pauli> basis) {
  if (static_cast<int>(basis.size()) != rho.n_qubits())
    throw ConfigError("basis length " + std::to_string(basis.size()) + " != n_qubits " +
                      std::to_string(rho.n_qubits()));
  DensityMatrix r = rho;
  for (int q = 0; q < rho.n_qubits(); ++q)
    if (basis[q] != Pauli::Z) r = qsim::apply_unitary_1q(r, q, basis_change(basis[q]));
  std::vector<double> p(static_cast<std::size_t>(r.dim()));
  double total = 0.0;
  for (std::int64_t i = 0; i < r.dim(); ++i) {
    p[i] = std::max(0.0, r(i, i).real());
    total += p[i];
  }
  for (auto& x : p) x /= total;
  return p;
}

SnapshotSet measure_random_pauli(const DensityMatrix& rho, int m, SeededRng& rng, const SamplingOptions& opts) {
  check_shots(m);
  const std::uint64_t root = rng.next_u64();
  std::vector<std::vector<Pauli>> bases(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s) {
    SeededRng basis_rng(derive_seed(root ^ 0xB5ULL, s));
    bases[s] = random_basis(rho.n_qubits(), basis_rng);
  }
  return sample_shots(rho, std::move(bases), root, opts);
}

SnapshotSet measure_fixed_basis(const DensityMatrix& rho, std::span<const Pauli> basis, int m, SeededRng& rng,
                                const SamplingOptions& opts) {
  check_shots(m);
  if (static_cast<int>(basis.size()) != rho.n_qubits()) throw ConfigError("basis length does not match n_qubits");
  std::vector<std::vector<Pauli>> bases(static_cast<std::size_t>(m), std::vector<Pauli>(basis.begin(), basis.end()));
  return sample_shots(rho, std::move(bases), rng.next_u64(), opts);
}

qsim::DensityMatrix::Matrix reconstruct_state(const SnapshotSet& snaps) {
  snaps.validate();
  if (snaps.records.empty()) throw ConfigError("cannot reconstruct from an empty snapshot set");
  if (snaps.n_qubits > qsim::kMaxQubits)
    throw ResourceError("reconstruction supports at most " + std::to_string(qsim::kMaxQubits) + " qubits");
  const int n = snaps.n_qubits;
  const std::int64_t dim = std::int64_t{1} << n;
  qsim::DensityMatrix::Matrix acc = qsim::DensityMatrix::Matrix::Zero(dim, dim);
  // Records repeat at small n, so each distinct (basis, outcome) word is
  // expanded once and weighted by its count.
  std::map<std::vector<std::uint8_t>, int> counts;
  for (const auto& r : snaps.records) {
    std::vector<std::uint8_t> key(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) key[q] = static_cast<std::uint8_t>(2 * static_cast<int>(r.basis[q]) + r.outcome[q]);
    ++counts[key];
  }
  std::vector<Eigen::Matrix2cd> locals(static_cast<std::size_t>(n));
  for (const auto& [key, count] : counts) {
    for (int q = 0; q < n; ++q) locals[q] = snapshot_local(static_cast<Pauli>(key[q] / 2), key[q] % 2);
    for (std::int64_t i = 0; i < dim; ++i) {
      for (std::int64_t j = 0; j < dim; ++j) {
        cd v = static_cast<double>(count);
        for (int q = 0; q < n; ++q) {
          const int s = n - 1 - q;
          v *= locals[q]((i >> s) & 1, (j >> s) & 1);
        }
        acc(i, j) += v;
      }
    }
  }
  return acc / static_cast<double>(snaps.records.size());
}

double shadow_overlap(const SnapshotSet& a, const SnapshotSet& b, bool self, bool include_diagonal) {
  a.validate();
  b.validate();
  if (a.n_qubits != b.n_qubits) throw ConfigError("snapshot sets have different qubit counts");
  const auto& table = local_table();
  const int n = a.n_qubits;
  // Pack each record as (basis, bit) codes for the table lookup.
  auto codes = [n](const SnapshotSet& s) {
    std::vector<int> c(s.records.size() * static_cast<std::size_t>(n));
    for (std::size_t m = 0; m < s.records.size(); ++m)
      for (int q = 0; q < n; ++q)
        c[m * n + q] = static_cast<int>(s.records[m].basis[q]) * 2 + s.records[m].outcome[q];
    return c;
  };
  const auto ca = codes(a);
  const auto cb = codes(b);
  const std::size_t ma = a.records.size(), mb = b.records.size();
  double sum = 0.0;
  for (std::size_t m = 0; m < ma; ++m) {
    for (std::size_t k = 0; k < mb; ++k) {
      if (self && !include_diagonal && m == k) continue;
      double prod = 1.0;
      for (int q = 0; q < n; ++q) prod *= table[ca[m * n + q] * 6 + cb[k * n + q]];
      sum += prod;
    }
  }
  const double pairs = (self && !include_diagonal) ? static_cast<double>(ma) * static_cast<double>(ma - 1)
                                                   : static_cast<double>(ma) * static_cast<double>(mb);
  return sum / pairs;
}

OverlapEstimate cs_fidelity(const SnapshotSet& snaps_i, const SnapshotSet& snaps_j, bool include_diagonal) {
  if (snaps_i.size() < 2 || snaps_j.size() < 2)
    throw ConfigError("cs_fidelity needs at least 2 records per set, got " + std::to_string(snaps_i.size()) +
                      " and " + std::to_string(snaps_j.size()));
  OverlapEstimate e;
  e.cross = shadow_overlap(snaps_i, snaps_j, false, include_diagonal);
  e.self_i = shadow_overlap(snaps_i, snaps_i, true, include_diagonal);
  e.self_j = shadow_overlap(snaps_j, snaps_j, true, include_diagonal);
  const double denom = e.self_i * e.self_j;
  e.unreliable = !(denom > 0.0);
  e.value = denom == 0.0 ? 0.0 : e.cross / std::sqrt(std::abs(denom));
  return e;
}

void ProbTable::validate() const {
  if (n_qubits < 1 || n_qubits > qsim::kMaxQubits) throw ConfigError("probability table qubit count out of range");
  if (settings.size() != probs.size()) throw ConfigError("probability table has mismatched settings and rows");
  const std::size_t dim = std::size_t{1} << n_qubits;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    if (static_cast<int>(settings[s].size()) != n_qubits || probs[s].size() != dim)
      throw ConfigError("probability table row " + std::to_string(s) + " has the wrong size");
    double total = 0.0;
    for (double p : probs[s]) total += p;
    if (std::abs(total - 1.0) > 1e-9)
      throw NumericError("probability table row " + std::to_string(s) + " sums to " + std::to_string(total));
  }
}

std::vector<std::vector<Pauli>> random_settings(int n_qubits, int count, SeededRng& rng) {
  if (count < 1) throw ConfigError("need at least one basis setting");
  std::vector<std::vector<Pauli>> out(static_cast<std::size_t>(count));
  for (auto& s : out) s = random_basis(n_qubits, rng);
  return out;
}

ProbTable sampled_table(const DensityMatrix& rho, const std::vector<std::vector<Pauli>>& settings,
                        int shots_per_setting, SeededRng& rng, const SamplingOptions& opts) {
  check_shots(shots_per_setting);
  ProbTable t;
  t.n_qubits = rho.n_qubits();
  t.settings = settings;
  const std::size_t dim = static_cast<std::size_t>(rho.dim());
  for (const auto& s : settings) {
    const SnapshotSet shots = measure_fixed_basis(rho, s, shots_per_setting, rng, opts);
    std::vector<double> freq(dim, 0.0);
    for (const auto& r : shots.records) {
      std::size_t idx = 0;
      for (auto b : r.outcome) idx = (idx << 1) | b;
      freq[idx] += 1.0;
    }
    for (auto& f : freq) f /= shots_per_setting;
    t.probs.push_back(std::move(freq));
  }
  return t;
}

ProbTable exact_table(const DensityMatrix& rho, const std::vector<std::vector<Pauli>>& settings) {
  ProbTable t;
  t.n_qubits = rho.n_qubits();
  t.settings = settings;
  for (const auto& s : settings) t.probs.push_back(basis_distribution(rho, s));
  return t;
}

double cc_overlap(const ProbTable& table_i, const ProbTable& table_j) {
  table_i.validate();
  table_j.validate();
  if (table_i.n_qubits != table_j.n_qubits || table_i.settings != table_j.settings)
    throw ConfigError("cc_overlap needs identical basis settings on both tables");
  if (table_i.settings.empty()) throw ConfigError("cc_overlap needs at least one setting");
  const int n = table_i.n_qubits;
  const std::size_t dim = std::size_t{1} << n;
  // (-2)^{-D} factorises over qubits into the kernel [[1, -1/2], [-1/2, 1]],
  // so apply it one qubit at a time instead of summing all 4^N pairs.
  double total = 0.0;
  std::vector<double> w(dim);
  for (std::size_t s = 0; s < table_i.settings.size(); ++s) {
    w = table_j.probs[s];
    for (int q = 0; q < n; ++q) {
      const std::size_t mask = std::size_t{1} << q;
      for (std::size_t b = 0; b < dim; ++b) {
        if (b & mask) continue;
        const double lo = w[b], hi = w[b | mask];
        w[b] = lo - 0.5 * hi;
        w[b | mask] = hi - 0.5 * lo;
      }
    }
    double acc = 0.0;
    for (std::size_t b = 0; b < dim; ++b) acc += table_i.probs[s][b] * w[b];
    total += acc;
  }
  return static_cast<double>(dim) * total / static_cast<double>(table_i.settings.size());
}

OverlapEstimate cc_fidelity(const ProbTable& table_i, const ProbTable& table_j) {
  OverlapEstimate e;
  e.cross = cc_overlap(table_i, table_j);
  e.self_i = cc_overlap(table_i, table_i);
  e.self_j = cc_overlap(table_j, table_j);
  const double denom = e.self_i * e.self_j;
  e.unreliable = !(denom > 0.0);
  e.value = denom == 0.0 ? 0.0 : e.cross / std::sqrt(std::abs(denom));
  return e;
}

std::vector<std::uint8_t> encode(const SnapshotSet& snaps) {
  snaps.validate();
  const int n = snaps.n_qubits;
  const std::size_t rec_bytes = (3 * static_cast<std::size_t>(n) + 7) / 8;
  std::vector<std::uint8_t> out(8 + rec_bytes * snaps.records.size(), 0);
  auto put_u32 = [&](std::size_t off, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out[off + k] = static_cast<std::uint8_t>(v >> (8 * k));
  };
  put_u32(0, static_cast<std::uint32_t>(n));
  put_u32(4, static_cast<std::uint32_t>(snaps.records.size()));
  for (std::size_t m = 0; m < snaps.records.size(); ++m) {
    std::uint8_t* rec = out.data() + 8 + m * rec_bytes;
    auto set_bit = [rec](std::size_t pos) { rec[pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8)); };
    const auto& r = snaps.records[m];
    for (int q = 0; q < n; ++q) {
      const unsigned code = static_cast<unsigned>(r.basis[q]);
      if (code & 1u) set_bit(2 * q);
      if (code & 2u) set_bit(2 * q + 1);
    }
    for (int q = 0; q < n; ++q)
      if (r.outcome[q]) set_bit(2 * n + q);
  }
  return out;
}

SnapshotSet decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ConfigError("snapshot blob shorter than its header");
  auto get_u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes[off + k]) << (8 * k);
    return v;
  };
  const std::uint32_t n = get_u32(0), m = get_u32(4);
  if (n < 1 || n > 64) throw ConfigError("snapshot blob has implausible n_qubits " + std::to_string(n));
  const std::size_t rec_bytes = (3 * static_cast<std::size_t>(n) + 7) / 8;
  if (bytes.size() != 8 + rec_bytes * m)
    throw ConfigError("snapshot blob size " + std::to_string(bytes.size()) + " does not match header");
  SnapshotSet s;
  s.n_qubits = static_cast<int>(n);
  s.records.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::uint8_t* rec = bytes.data() + 8 + k * rec_bytes;
    auto bit = [rec](std::size_t pos) { return (rec[pos / 8] >> (pos % 8)) & 1u; };
    Record& r = s.records[k];
    r.basis.resize(n);
    r.outcome.resize(n);
    for (std::uint32_t q = 0; q < n; ++q) {
      const unsigned code = bit(2 * q) | (bit(2 * q + 1) << 1);
      if (code > 2) throw ConfigError("snapshot record " + std::to_string(k) + " has basis code 3");
      r.basis[q] = static_cast<Pauli>(code);
      r.outcome[q] = static_cast<std::uint8_t>(bit(2 * n + q));
    }
  }
  return s;
}

void write_snapshots(const std::string& path, const SnapshotSet& snaps) {
  const auto bytes = encode(snaps);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ResourceError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ResourceError("short write to " + path);
}

SnapshotSet read_snapshots(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open snapshot file " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

nlohmann::json to_json(const Sidecar& s) {
  return {{"seed", s.seed}, {"profile_name", s.profile_name}, {"circuit_id", s.circuit_id}};
}

Sidecar sidecar_from_json(const nlohmann::json& j) {
  Sidecar s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.profile_name = j.at("profile_name").get<std::string>();
  s.circuit_id = j.at("circuit_id").get<int>();
  return s;
}

}  // namespace xplat::shadows
