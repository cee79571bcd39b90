#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xplat/circuits.hpp"
#include "xplat/dagenc.hpp"
#include "xplat/metrics.hpp"
#include "xplat/shadows.hpp"
#include "xplat/tensornet.hpp"

namespace xplat::mcnet {

using tensornet::Tensor;

enum class Aggregation { Lazy, Early };
enum class Fusion { Sum, Concat, Lrbp, Attention };
// Which representation feeds the heads.
enum class Branch { Measurement, Circuit, Fused };

std::string to_string(Aggregation a);
std::string to_string(Fusion f);
std::string to_string(Branch b);
Aggregation aggregation_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);
Branch branch_from_string(const std::string& s);

struct ModelConfig {
  int n_qubits = 4;
  // Per-record measurement feature width (8N plus any noise suffix).
  int measurement_features = 32;
  int node_features = 17;
  int dim = 256;
  // Rank of the bilinear fusion; must not exceed dim.
  int fusion_rank = 256;
  Aggregation aggregation = Aggregation::Lazy;
  Fusion fusion = Fusion::Lrbp;
  // Kernel size 1 convolutions over the record axis, i.e. one shared
  // per-record map; wider kernels would couple neighbouring records and break
  // permutation invariance.
  std::vector<int> conv_widths{64, 128, 256};
  std::vector<int> graph_widths{64, 128, 256};
  int mlp_hidden = 256;
  int glimpses = 2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys.
  static ModelConfig from_json(const nlohmann::json& j);
};

// Noise parameters appended to each measurement record: [p] for uniform
// depolarizing, otherwise [CNOT error, mean T1/150, mean T2/150,
// mean p(0|1), mean p(1|0)].
std::vector<double> noise_suffix(const circuits::DeviceProfile& profile);

// Per record, each qubit's 2x2 snapshot flattened row-major with real and
// imaginary parts interleaved, then the profile's noise suffix if given.
// Returns M x F values row-major.
std::vector<double> build_measurement_features(const shadows::SnapshotSet& snaps,
                                               const circuits::DeviceProfile* profile);
int measurement_feature_dim(int n_qubits, const circuits::DeviceProfile* profile);

// Column standardisation fitted on training rows. Columns before `start` pass
// through untouched; columns with std below 1e-8 are only centred.
struct Normalizer {
  int start = 0;
  std::vector<double> mean;
  std::vector<double> stddev;

  void fit(const std::vector<double>& rows, int cols);
  void apply(std::vector<double>& rows) const;
  bool fitted() const { return !mean.empty(); }
  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

// One device's run of one circuit at one noise level.
struct State {
  int circuit_id = 0;
  std::string device;
  double level = 0.0;
  int records = 0;
  std::vector<double> features;  // records x measurement_features
  dagenc::CircuitDag dag;
  double purity = 1.0;
};

struct Pair {
  int record_id = 0;
  int circuit_id = 0;
  int i = 0;  // indices into Corpus::states
  int j = 0;
  double fidelity = 0.0;
};

struct Corpus {
  int n_qubits = 0;
  std::vector<State> states;
  std::vector<Pair> pairs;

  std::vector<int> circuit_ids() const;
  std::vector<int> states_of(const std::vector<int>& circuits) const;
  std::vector<int> pairs_of(const std::vector<int>& circuits) const;
};

struct CircuitOutput {
  Tensor nodes;  // last graph-convolution layer, all nodes of the batch
  tensornet::Segments segments;
  Tensor pooled;  // one representation per state
};

class MCNet {
 public:
  explicit MCNet(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  tensornet::ParamStore& params() { return params_; }
  const tensornet::ParamStore& params() const { return params_; }

  // Fits measurement (noise-suffix columns only) and node standardisers on
  // the given training states.
  void fit_normalizers(const Corpus& corpus, const std::vector<int>& train_states);

  Tensor measurement(const Corpus& corpus, const std::vector<int>& states, bool train);
  CircuitOutput circuit(const Corpus& corpus, const std::vector<int>& states);
  Tensor fuse(const Tensor& x, const CircuitOutput& y);
  // One D-vector per listed state.
  Tensor represent(Branch branch, const Corpus& corpus, const std::vector<int>& states, bool train);

  // Parameters owned by a branch ("mea." or "circ.") or by fusion ("fuse.").
  std::vector<Tensor> parameters(const std::string& prefix) const;
  std::vector<Tensor> parameters_for(Branch branch) const;

  // Checkpoint plus config and normalisers in the manifest.
  void save(const std::string& prefix, const nlohmann::json& extra = {}) const;
  static MCNet load(const std::string& prefix);
  // Copies every parameter and batchnorm statistic whose name starts with
  // `prefix` from another checkpoint.
  void load_prefix(const std::string& path_prefix, const std::string& name_prefix);

  const Normalizer& measurement_normalizer() const { return mea_norm_; }
  const Normalizer& node_normalizer() const { return node_norm_; }

 private:
  Tensor linear(const std::string& name, const Tensor& x);
  void add_linear(const std::string& name, int in, int out, bool bias, SeededRng& rng);

  ModelConfig cfg_;
  tensornet::ParamStore params_;
  Normalizer mea_norm_;
  Normalizer node_norm_;
};

// Cosine similarity per row pair, not clamped.
Tensor fidelity_head(const Tensor& v_i, const Tensor& v_j);
// w_C^T v per row; w is D x 1.
Tensor purity_head(const Tensor& v, const Tensor& w);
// Mean cosine over unordered pairs i < j of the K rows of vs.
Tensor kdevice_fidelity(const Tensor& vs);
Tensor loss(const Tensor& pred, const Tensor& labels);

// Fidelity predictions for the listed pairs, in order.
std::vector<double> predict(MCNet& model, Branch branch, const Corpus& corpus, const std::vector<int>& pairs);

struct TrainConfig {
  int epochs_branch = 30;
  int epochs_finetune = 30;
  double lr_branch = 1e-3;
  double lr_finetune = 1e-4;
  int circuits_per_batch = 2;
  std::uint64_t seed = 0;
  // Stage 2 trains only the fusion parameters.
  bool freeze_branches = false;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double test_mse = 0.0;
  double test_r2 = 0.0;
};

struct Split {
  std::vector<int> train_circuits;
  std::vector<int> test_circuits;
};

// Trains the given branch (or, for Fused, the whole model with the branch
// parameters frozen when cfg.freeze_branches is set) with the fidelity head.
std::vector<EpochRecord> train_stage(MCNet& model, Branch branch, const Corpus& corpus, const Split& split,
                                     int epochs, double lr, const TrainConfig& cfg);

struct TwoStageResult {
  std::vector<EpochRecord> history;
  MetricsReport test;
};

// Stage 1 trains each branch on its own; stage 2 fine-tunes everything plus
// the fusion at the smaller learning rate.
TwoStageResult train_two_stage(MCNet& model, const Corpus& corpus, const Split& split, const TrainConfig& cfg);

MetricsReport evaluate(MCNet& model, Branch branch, const Corpus& corpus, const std::vector<int>& circuits);

// Fits w_C on frozen representations of the training states against their
// exact purities; returns w_C (D x 1).
Tensor train_purity_head(MCNet& model, Branch branch, const Corpus& corpus, const Split& split, int steps,
                         double lr);

}  // namespace xplat::mcnet
