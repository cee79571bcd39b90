#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xplat/circuits.hpp"
#include "xplat/mcnet.hpp"
#include "xplat/metrics.hpp"

namespace xplat::datapipe {

inline constexpr int kDatasetVersion = 1;

struct BuildConfig {
  int n_qubits = 4;
  int n_circuits = 60;
  int levels = 6;
  int m_shots = 200;
  int layers = 8;
  // Built-in profile name or path to a profile JSON file.
  std::string profile = "depolarizing";
  double level_min = 0.01;
  double level_max = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys.
  static BuildConfig from_json(const nlohmann::json& j);
};

// The device at one noise level. Uniform-depolarizing profiles take p = level;
// calibrated profiles scale every gate error by level / 0.01 (clamped to 1)
// and keep their T1, T2 and readout values.
circuits::DeviceProfile profile_at_level(const circuits::DeviceProfile& base, double level);

// Resolves a built-in name or a JSON path.
circuits::DeviceProfile resolve_profile(const std::string& name_or_path, int n_qubits);

// Writes manifest.json, circuits.json, snapshots/*.bin (+ .json sidecars),
// dags/*.json and labels.csv into out_dir and returns the manifest. Output is
// a pure function of the config (thread count included or not).
nlohmann::json build_dataset(const BuildConfig& cfg, const std::string& out_dir);

struct LabelRow {
  int record_id = 0;
  int circuit_id = 0;
  double level_i = 0.0;
  double level_j = 0.0;
  double fidelity = 0.0;
  double purity_i = 0.0;
  double purity_j = 0.0;
};

struct Dataset {
  std::string dir;
  nlohmann::json manifest;
  circuits::DeviceProfile base_profile;
  std::vector<double> levels;
  std::vector<circuits::Circuit> circuits;  // transpiled, indexed by circuit id
  std::vector<LabelRow> labels;
};

// Verifies every file hash listed in the manifest.
Dataset load_dataset(const std::string& dir);

// Model-ready view: one state per (circuit, level), pairs from labels.csv.
// The measurement noise suffix is appended when noise_suffix is set.
mcnet::Corpus to_corpus(const Dataset& ds, bool noise_suffix = true);

// Layout-disjoint split: round(test_fraction * n) circuit ids held out,
// chosen by a seeded shuffle. Throws unless both sides are non-empty.
mcnet::Split split_by_circuit(const std::vector<int>& circuit_ids, double test_fraction, std::uint64_t seed);

// States of one circuit at each listed level with fresh snapshots, and pairs
// (0, k) for k >= 1 labelled with the exact fidelity to the first level.
// Used for noise sweeps outside the stored dataset levels.
mcnet::Corpus sweep_corpus(const circuits::Circuit& transpiled, const circuits::DeviceProfile& base,
                           const std::vector<double>& levels, int m_shots, std::uint64_t seed,
                           bool noise_suffix = true, int circuit_id = 0);

using xplat::compute_metrics;

// Copies the corpus dimensions (qubits, feature widths) into a model config.
mcnet::ModelConfig configure_for(mcnet::ModelConfig cfg, const mcnet::Corpus& corpus);

struct BaselineConfig {
  std::string method = "cs";  // "cs" or "cc"
  // cs: 0 reuses the stored snapshots; otherwise fresh snapshots of this size
  // are drawn from the exact states.
  int shots_override = 0;
  bool include_diagonal = false;
  // cc: shared random settings and shots per setting.
  int settings = 20;
  int shots_per_setting = 10;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct BaselineRow {
  int record_id = 0;
  int circuit_id = 0;
  double label = 0.0;
  double estimate = 0.0;
  bool unreliable = false;
};

// Runs the estimator on every record of the listed circuits (all circuits
// when empty), in record order. Readout error is applied for device profiles.
std::vector<BaselineRow> run_baseline(const Dataset& ds, const BaselineConfig& cfg,
                                      const std::vector<int>& circuits = {});

// One row per state: device, circuit_id, level, then v_0 .. v_{D-1}.
// Returns the number of rows written.
std::size_t export_representations(mcnet::MCNet& model, mcnet::Branch branch, const mcnet::Corpus& corpus,
                                   const std::string& path);

std::string sha256_file(const std::string& path);
std::string sha256_bytes(const std::string& bytes);

// Circuit ids map to "c0007"-style stems.
std::string state_stem(int circuit_id, int level_index);

}  // namespace xplat::datapipe
