#include "xplat/mcnet.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "xplat/error.hpp"

namespace xplat::mcnet {

namespace tn = tensornet;
using nlohmann::json;

namespace {

constexpr double kTimeScale = 150.0;

template <class E>
E parse_enum(const std::string& s, const std::vector<std::pair<const char*, E>>& table, const char* what) {
  for (const auto& [name, v] : table)
    if (s == name) return v;
  std::string opts;
  for (const auto& [name, v] : table) opts += (opts.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown " + std::string(what) + " '" + s + "' (expected one of " + opts + ")");
}

const std::vector<std::pair<const char*, Aggregation>> kAggregations{{"lazy_average", Aggregation::Lazy},
                                                                      {"early_average", Aggregation::Early}};
const std::vector<std::pair<const char*, Fusion>> kFusions{
    {"sum", Fusion::Sum}, {"concat", Fusion::Concat}, {"lrbp", Fusion::Lrbp}, {"attention", Fusion::Attention}};
const std::vector<std::pair<const char*, Branch>> kBranches{
    {"measurement", Branch::Measurement}, {"circuit", Branch::Circuit}, {"fused", Branch::Fused}};

template <class E>
std::string enum_name(E v, const std::vector<std::pair<const char*, E>>& table) {
  for (const auto& [name, e] : table)
    if (e == v) return name;
  return "?";
}

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown " + std::string(what) + " key '" + k + "'");
}

double mean_finite(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v)
    if (std::isfinite(x)) s += x, ++n;
  return n ? s / n : 0.0;
}

Tensor ones_row(std::int64_t n) { return Tensor::from({1, n}, std::vector<double>(static_cast<std::size_t>(n), 1.0)); }

}  // namespace

std::string to_string(Aggregation a) { return enum_name(a, kAggregations); }
std::string to_string(Fusion f) { return enum_name(f, kFusions); }
std::string to_string(Branch b) { return enum_name(b, kBranches); }
Aggregation aggregation_from_string(const std::string& s) { return parse_enum(s, kAggregations, "aggregation"); }
Fusion fusion_from_string(const std::string& s) { return parse_enum(s, kFusions, "fusion"); }
Branch branch_from_string(const std::string& s) { return parse_enum(s, kBranches, "branch"); }

// ---- Config -----------------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
  };
  positive(n_qubits, "n_qubits");
  positive(measurement_features, "measurement_features");
  positive(node_features, "node_features");
  positive(dim, "dim");
  positive(fusion_rank, "fusion_rank");
  positive(mlp_hidden, "mlp_hidden");
  positive(glimpses, "glimpses");
  if (fusion_rank > dim) throw ConfigError("fusion_rank must not exceed dim");
  if (conv_widths.empty() || graph_widths.empty()) throw ConfigError("conv_widths and graph_widths must be non-empty");
  for (int w : conv_widths) positive(w, "conv width");
  for (int w : graph_widths) positive(w, "graph width");
}

json ModelConfig::to_json() const {
  return {{"n_qubits", n_qubits},
          {"measurement_features", measurement_features},
          {"node_features", node_features},
          {"dim", dim},
          {"fusion_rank", fusion_rank},
          {"aggregation", mcnet::to_string(aggregation)},
          {"fusion", mcnet::to_string(fusion)},
          {"conv_widths", conv_widths},
          {"graph_widths", graph_widths},
          {"mlp_hidden", mlp_hidden},
          {"glimpses", glimpses},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"n_qubits", "measurement_features", "node_features", "dim", "fusion_rank", "aggregation", "fusion",
                  "conv_widths", "graph_widths", "mlp_hidden", "glimpses", "seed"},
                 "model config");
  ModelConfig c;
  c.n_qubits = j.value("n_qubits", c.n_qubits);
  c.measurement_features = j.value("measurement_features", c.measurement_features);
  c.node_features = j.value("node_features", c.node_features);
  c.dim = j.value("dim", c.dim);
  c.fusion_rank = j.value("fusion_rank", c.fusion_rank);
  if (j.contains("aggregation")) c.aggregation = aggregation_from_string(j["aggregation"].get<std::string>());
  if (j.contains("fusion")) c.fusion = fusion_from_string(j["fusion"].get<std::string>());
  c.conv_widths = j.value("conv_widths", c.conv_widths);
  c.graph_widths = j.value("graph_widths", c.graph_widths);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.glimpses = j.value("glimpses", c.glimpses);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return {{"epochs_branch", epochs_branch}, {"epochs_finetune", epochs_finetune},
          {"lr_branch", lr_branch},         {"lr_finetune", lr_finetune},
          {"circuits_per_batch", circuits_per_batch}, {"seed", seed},
          {"freeze_branches", freeze_branches}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"epochs_branch", "epochs_finetune", "lr_branch", "lr_finetune", "circuits_per_batch", "seed",
                  "freeze_branches"},
                 "training config");
  TrainConfig c;
  c.epochs_branch = j.value("epochs_branch", c.epochs_branch);
  c.epochs_finetune = j.value("epochs_finetune", c.epochs_finetune);
  c.lr_branch = j.value("lr_branch", c.lr_branch);
  c.lr_finetune = j.value("lr_finetune", c.lr_finetune);
  c.circuits_per_batch = j.value("circuits_per_batch", c.circuits_per_batch);
  c.seed = j.value("seed", c.seed);
  c.freeze_branches = j.value("freeze_branches", c.freeze_branches);
  if (c.epochs_branch < 0 || c.epochs_finetune < 0) throw ConfigError("epoch counts must be non-negative");
  if (c.circuits_per_batch < 1) throw ConfigError("circuits_per_batch must be >= 1");
  if (!(c.lr_branch > 0.0) || !(c.lr_finetune > 0.0)) throw ConfigError("learning rates must be positive");
  return c;
}

// ---- Features ---------------------------------------------------------------

std::vector<double> noise_suffix(const circuits::DeviceProfile& profile) {
  if (const auto* dep = std::get_if<circuits::UniformDepolarizing>(&profile.noise)) return {dep->p};
  const auto& cal = std::get<circuits::CalibratedNoise>(profile.noise);
  double cx = 0.0;
  if (auto it = cal.gate_errors.find(circuits::GateKind::CNOT); it != cal.gate_errors.end()) cx = it->second;
  return {cx, mean_finite(cal.t1) / kTimeScale, mean_finite(cal.t2) / kTimeScale, mean_finite(cal.prob_meas0_prep1),
          mean_finite(cal.prob_meas1_prep0)};
}

int measurement_feature_dim(int n_qubits, const circuits::DeviceProfile* profile) {
  return 8 * n_qubits + (profile ? static_cast<int>(noise_suffix(*profile).size()) : 0);
}

std::vector<double> build_measurement_features(const shadows::SnapshotSet& snaps,
                                               const circuits::DeviceProfile* profile) {
  snaps.validate();
  if (snaps.records.empty()) throw ConfigError("measurement features need a non-empty snapshot set");
  const std::vector<double> suffix = profile ? noise_suffix(*profile) : std::vector<double>{};
  const int n = snaps.n_qubits;
  // All 6 (basis, bit) blocks up front.
  std::array<std::array<double, 8>, 6> blocks{};
  for (int b = 0; b < 3; ++b)
    for (int bit = 0; bit < 2; ++bit) {
      const auto s = shadows::snapshot_local(static_cast<shadows::Pauli>(b), bit);
      auto& blk = blocks[b * 2 + bit];
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
          blk[(r * 2 + c) * 2] = s(r, c).real();
          blk[(r * 2 + c) * 2 + 1] = s(r, c).imag();
        }
    }
  std::vector<double> out;
  out.reserve(snaps.records.size() * (8 * n + suffix.size()));
  for (const auto& rec : snaps.records) {
    for (int q = 0; q < n; ++q) {
      const auto& blk = blocks[static_cast<int>(rec.basis[q]) * 2 + rec.outcome[q]];
      out.insert(out.end(), blk.begin(), blk.end());
    }
    out.insert(out.end(), suffix.begin(), suffix.end());
  }
  return out;
}

void Normalizer::fit(const std::vector<double>& rows, int cols) {
  if (cols <= 0 || rows.empty() || rows.size() % static_cast<std::size_t>(cols) != 0)
    throw ConfigError("normaliser given a ragged matrix");
  const std::size_t n = rows.size() / cols;
  mean.assign(cols, 0.0);
  stddev.assign(cols, 1.0);
  for (int c = start; c < cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += rows[r * cols + c];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t r = 0; r < n; ++r) v += (rows[r * cols + c] - m) * (rows[r * cols + c] - m);
    v = std::sqrt(v / static_cast<double>(n));
    mean[c] = m;
    stddev[c] = v < 1e-8 ? 1.0 : v;
  }
}

void Normalizer::apply(std::vector<double>& rows) const {
  if (!fitted()) return;
  const std::size_t cols = mean.size();
  if (rows.size() % cols != 0) throw ConfigError("normaliser width does not match the feature rows");
  for (std::size_t r = 0; r < rows.size() / cols; ++r)
    for (std::size_t c = static_cast<std::size_t>(start); c < cols; ++c)
      rows[r * cols + c] = (rows[r * cols + c] - mean[c]) / stddev[c];
}

json Normalizer::to_json() const { return {{"start", start}, {"mean", mean}, {"std", stddev}}; }

Normalizer Normalizer::from_json(const json& j) {
  Normalizer n;
  n.start = j.at("start").get<int>();
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
  return n;
}

// ---- Corpus -----------------------------------------------------------------

std::vector<int> Corpus::circuit_ids() const {
  std::set<int> ids;
  for (const auto& s : states) ids.insert(s.circuit_id);
  return {ids.begin(), ids.end()};
}

std::vector<int> Corpus::states_of(const std::vector<int>& circuits) const {
  const std::set<int> want(circuits.begin(), circuits.end());
  std::vector<int> out;
  for (std::size_t k = 0; k < states.size(); ++k)
    if (want.contains(states[k].circuit_id)) out.push_back(static_cast<int>(k));
  return out;
}

std::vector<int> Corpus::pairs_of(const std::vector<int>& circuits) const {
  const std::set<int> want(circuits.begin(), circuits.end());
  std::vector<int> out;
  for (std::size_t k = 0; k < pairs.size(); ++k)
    if (want.contains(pairs[k].circuit_id)) out.push_back(static_cast<int>(k));
  return out;
}

// ---- Model ------------------------------------------------------------------

void MCNet::add_linear(const std::string& name, int in, int out, bool bias, SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  params_.add(name + ".w", tn::uniform(in, out, bound, rng));
  if (bias) params_.add(name + ".b", tn::uniform(1, out, bound, rng));
}

Tensor MCNet::linear(const std::string& name, const Tensor& x) {
  Tensor y = tn::matmul(x, params_.get(name + ".w"));
  if (params_.contains(name + ".b")) y = tn::add_row(y, params_.get(name + ".b"));
  return y;
}

MCNet::MCNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  SeededRng rng(derive_seed(cfg_.seed, 0x4D434E4554ULL));
  const int D = cfg_.dim, R = cfg_.fusion_rank;

  int in = cfg_.measurement_features;
  for (std::size_t l = 0; l < cfg_.conv_widths.size(); ++l) {
    const int out = cfg_.conv_widths[l];
    const std::string base = "mea.conv" + std::to_string(l);
    add_linear(base, in, out, true, rng);
    params_.add("mea.bn" + std::to_string(l) + ".gamma", ones_row(out));
    params_.add("mea.bn" + std::to_string(l) + ".beta", Tensor::zeros({1, out}));
    params_.bn("mea.bn" + std::to_string(l), out);
    in = out;
  }
  add_linear("mea.mlp0", in, cfg_.mlp_hidden, true, rng);
  add_linear("mea.mlp1", cfg_.mlp_hidden, D, true, rng);

  in = cfg_.node_features;
  for (std::size_t l = 0; l < cfg_.graph_widths.size(); ++l) {
    add_linear("circ.gc" + std::to_string(l), in, cfg_.graph_widths[l], true, rng);
    in = cfg_.graph_widths[l];
  }
  add_linear("circ.mlp0", in, cfg_.mlp_hidden, true, rng);
  add_linear("circ.mlp1", cfg_.mlp_hidden, D, true, rng);

  switch (cfg_.fusion) {
    case Fusion::Sum:
      add_linear("fuse.W1", D, D, false, rng);
      add_linear("fuse.W2", D, D, false, rng);
      add_linear("fuse.P", D, D, false, rng);
      break;
    case Fusion::Concat:
      add_linear("fuse.mlp0", 2 * D, 2 * D, true, rng);
      add_linear("fuse.mlp1", 2 * D, D, true, rng);
      break;
    case Fusion::Attention: {
      const int node_width = cfg_.graph_widths.back();
      add_linear("fuse.att.node", node_width, R, false, rng);
      add_linear("fuse.att.query", D, R, false, rng);
      add_linear("fuse.att.logits", R, cfg_.glimpses, false, rng);
      add_linear("fuse.att.glimpse", cfg_.glimpses * node_width, D, false, rng);
      [[fallthrough]];
    }
    case Fusion::Lrbp:
      add_linear("fuse.A", D, R, false, rng);
      add_linear("fuse.B", D, R, false, rng);
      add_linear("fuse.P", R, D, false, rng);
      break;
  }
}

void MCNet::fit_normalizers(const Corpus& corpus, const std::vector<int>& train_states) {
  if (train_states.empty()) throw ConfigError("cannot fit normalisers without training states");
  std::vector<double> mea_rows, node_rows;
  for (int k : train_states) {
    const auto& s = corpus.states[k];
    mea_rows.insert(mea_rows.end(), s.features.begin(), s.features.end());
    for (const auto& f : s.dag.features) node_rows.insert(node_rows.end(), f.begin(), f.end());
  }
  mea_norm_ = Normalizer{};
  mea_norm_.start = 8 * cfg_.n_qubits;
  mea_norm_.fit(mea_rows, cfg_.measurement_features);
  node_norm_ = Normalizer{};
  node_norm_.fit(node_rows, cfg_.node_features);
}

Tensor MCNet::measurement(const Corpus& corpus, const std::vector<int>& states, bool train) {
  if (states.empty()) throw ConfigError("measurement branch needs at least one state");
  const int F = cfg_.measurement_features;
  std::vector<double> rows;
  tn::Segments seg{0};
  for (int k : states) {
    const auto& s = corpus.states[k];
    if (s.records < 1) throw ConfigError("state " + std::to_string(k) + " has no measurement records");
    if (static_cast<int>(s.features.size()) != s.records * F)
      throw ConfigError("state " + std::to_string(k) + " measurement features do not match width " +
                        std::to_string(F));
    rows.insert(rows.end(), s.features.begin(), s.features.end());
    seg.push_back(seg.back() + s.records);
  }
  mea_norm_.apply(rows);
  Tensor h = Tensor::from({seg.back(), F}, std::move(rows));
  if (cfg_.aggregation == Aggregation::Early) h = tn::segment_mean(h, seg);
  for (std::size_t l = 0; l < cfg_.conv_widths.size(); ++l) {
    const std::string c = "mea.conv" + std::to_string(l), b = "mea.bn" + std::to_string(l);
    h = tn::relu(tn::conv1d(h, params_.get(c + ".w"), params_.get(c + ".b"), 1));
    const bool batch_stats = train && h.rows() > 1;
    h = tn::batchnorm(h, params_.get(b + ".gamma"), params_.get(b + ".beta"), params_.bn(b, h.cols()), batch_stats);
  }
  if (cfg_.aggregation == Aggregation::Lazy) h = tn::segment_mean(h, seg);
  return linear("mea.mlp1", tn::relu(linear("mea.mlp0", h)));
}

CircuitOutput MCNet::circuit(const Corpus& corpus, const std::vector<int>& states) {
  if (states.empty()) throw ConfigError("circuit branch needs at least one state");
  const int F = cfg_.node_features;
  std::vector<double> rows;
  std::vector<std::vector<int>> in;
  CircuitOutput out;
  out.segments = {0};
  for (int k : states) {
    const auto& dag = corpus.states[k].dag;
    if (dag.node_count() == 0) throw ConfigError("state " + std::to_string(k) + " has an empty DAG");
    if (dag.feature_dim != F)
      throw ConfigError("DAG feature width " + std::to_string(dag.feature_dim) + " != model node_features " +
                        std::to_string(F));
    const int base = static_cast<int>(out.segments.back());
    for (const auto& f : dag.features) rows.insert(rows.end(), f.begin(), f.end());
    for (auto nb : dag.in_neighbors()) {
      for (int& v : nb) v += base;
      in.push_back(std::move(nb));
    }
    out.segments.push_back(base + dag.node_count());
  }
  node_norm_.apply(rows);
  Tensor h = Tensor::from({out.segments.back(), F}, std::move(rows));
  for (std::size_t l = 0; l < cfg_.graph_widths.size(); ++l)
    h = tn::relu(linear("circ.gc" + std::to_string(l), tn::neighbor_mean(h, in)));
  out.nodes = h;
  out.pooled = linear("circ.mlp1", tn::relu(linear("circ.mlp0", tn::segment_mean(h, out.segments))));
  return out;
}

Tensor MCNet::fuse(const Tensor& x, const CircuitOutput& y) {
  auto lrbp = [this](const Tensor& a, const Tensor& b) {
    return linear("fuse.P", tn::hadamard(tn::tanh(linear("fuse.A", a)), tn::tanh(linear("fuse.B", b))));
  };
  switch (cfg_.fusion) {
    case Fusion::Sum:
      return linear("fuse.P", tn::add(linear("fuse.W1", x), linear("fuse.W2", y.pooled)));
    case Fusion::Concat:
      return linear("fuse.mlp1", tn::relu(linear("fuse.mlp0", tn::concat_cols(x, y.pooled))));
    case Fusion::Lrbp:
      return lrbp(x, y.pooled);
    case Fusion::Attention: {
      // Broadcast each state's measurement vector to its graph nodes.
      std::vector<std::int64_t> owner;
      for (std::size_t s = 0; s + 1 < y.segments.size(); ++s)
        for (auto r = y.segments[s]; r < y.segments[s + 1]; ++r) owner.push_back(static_cast<std::int64_t>(s));
      const Tensor q = tn::tanh(linear("fuse.att.query", tn::gather_rows(x, owner)));
      const Tensor e = tn::hadamard(tn::tanh(linear("fuse.att.node", y.nodes)), q);
      const Tensor alpha = tn::segment_softmax(linear("fuse.att.logits", e), y.segments);
      const Tensor attended = linear("fuse.att.glimpse", tn::segment_attend(alpha, y.nodes, y.segments));
      return lrbp(x, attended);
    }
  }
  throw ConfigError("unknown fusion mode");
}

Tensor MCNet::represent(Branch branch, const Corpus& corpus, const std::vector<int>& states, bool train) {
  switch (branch) {
    case Branch::Measurement:
      return measurement(corpus, states, train);
    case Branch::Circuit:
      return circuit(corpus, states).pooled;
    case Branch::Fused: {
      const Tensor x = measurement(corpus, states, train);
      return fuse(x, circuit(corpus, states));
    }
  }
  throw ConfigError("unknown branch");
}

std::vector<Tensor> MCNet::parameters(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& name : params_.names())
    if (name.starts_with(prefix)) out.push_back(params_.get(name));
  return out;
}

std::vector<Tensor> MCNet::parameters_for(Branch branch) const {
  switch (branch) {
    case Branch::Measurement:
      return parameters("mea.");
    case Branch::Circuit:
      return parameters("circ.");
    case Branch::Fused:
      return params_.tensors();
  }
  return {};
}

void MCNet::save(const std::string& prefix, const json& extra) const {
  json meta = extra.is_null() ? json::object() : extra;
  meta["model_config"] = cfg_.to_json();
  meta["measurement_normalizer"] = mea_norm_.to_json();
  meta["node_normalizer"] = node_norm_.to_json();
  tn::save_checkpoint(prefix, params_, meta);
}

MCNet MCNet::load(const std::string& prefix) {
  std::ifstream f(prefix + ".json");
  if (!f) throw ConfigError("missing checkpoint " + prefix + ".json");
  const json manifest = json::parse(f);
  const json& extra = manifest.at("extra");
  MCNet model(ModelConfig::from_json(extra.at("model_config")));
  tn::load_checkpoint(prefix, model.params_);
  model.mea_norm_ = Normalizer::from_json(extra.at("measurement_normalizer"));
  model.node_norm_ = Normalizer::from_json(extra.at("node_normalizer"));
  return model;
}

void MCNet::load_prefix(const std::string& path_prefix, const std::string& name_prefix) {
  std::ifstream f(path_prefix + ".json");
  if (!f) throw ConfigError("missing checkpoint " + path_prefix + ".json");
  const json manifest = json::parse(f);
  std::map<std::string, Tensor> loaded;
  for (auto& [name, t] : tn::load_tensors(path_prefix + ".bin")) loaded.emplace(name, t);
  for (const auto& name : params_.names()) {
    if (!name.starts_with(name_prefix)) continue;
    auto it = loaded.find(name);
    if (it == loaded.end()) throw ConfigError("checkpoint " + path_prefix + " lacks parameter " + name);
    Tensor dst = params_.get(name);
    if (dst.shape() != it->second.shape()) throw ConfigError("checkpoint parameter " + name + " has the wrong shape");
    dst.mutable_values() = it->second.values();
  }
  for (auto& [name, s] : params_.bn_states()) {
    if (!name.starts_with(name_prefix)) continue;
    s.running_mean = loaded.at(name + ".running_mean").values();
    s.running_var = loaded.at(name + ".running_var").values();
  }
  const json& extra = manifest.at("extra");
  if (name_prefix == "mea.") mea_norm_ = Normalizer::from_json(extra.at("measurement_normalizer"));
  if (name_prefix == "circ.") node_norm_ = Normalizer::from_json(extra.at("node_normalizer"));
}

// ---- Heads and loss -----------------------------------------------------------

Tensor fidelity_head(const Tensor& v_i, const Tensor& v_j) { return tn::cosine_rows(v_i, v_j); }

Tensor purity_head(const Tensor& v, const Tensor& w) {
  if (w.cols() != 1 || w.rows() != v.cols())
    throw ConfigError("purity head weight must be " + std::to_string(v.cols()) + "x1");
  return tn::matmul(v, w);
}

Tensor kdevice_fidelity(const Tensor& vs) {
  const std::int64_t k = vs.rows();
  if (k < 2) throw ConfigError("k-device fidelity needs at least 2 devices, got " + std::to_string(k));
  std::vector<std::int64_t> a, b;
  for (std::int64_t i = 0; i < k; ++i)
    for (std::int64_t j = i + 1; j < k; ++j) a.push_back(i), b.push_back(j);
  return tn::mean(tn::cosine_rows(tn::gather_rows(vs, a), tn::gather_rows(vs, b)));
}

Tensor loss(const Tensor& pred, const Tensor& labels) { return tn::mse_loss(pred, labels); }

// ---- Training -------------------------------------------------------------------

namespace {

struct PairBatch {
  std::vector<int> states;
  std::vector<std::int64_t> left, right;
  std::vector<double> labels;
};

PairBatch assemble(const Corpus& corpus, const std::vector<int>& circuits) {
  PairBatch b;
  b.states = corpus.states_of(circuits);
  std::map<int, std::int64_t> row;
  for (std::size_t r = 0; r < b.states.size(); ++r) row[b.states[r]] = static_cast<std::int64_t>(r);
  for (int p : corpus.pairs_of(circuits)) {
    const auto& pr = corpus.pairs[p];
    b.left.push_back(row.at(pr.i));
    b.right.push_back(row.at(pr.j));
    b.labels.push_back(pr.fidelity);
  }
  return b;
}

template <class T>
void shuffle(std::vector<T>& v, SeededRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

// Chunks of circuits for inference, keeping memory bounded.
constexpr std::size_t kEvalCircuits = 4;

}  // namespace

std::vector<double> predict(MCNet& model, Branch branch, const Corpus& corpus, const std::vector<int>& pairs) {
  std::vector<int> circuits;
  for (int p : pairs) circuits.push_back(corpus.pairs[p].circuit_id);
  std::sort(circuits.begin(), circuits.end());
  circuits.erase(std::unique(circuits.begin(), circuits.end()), circuits.end());
  std::map<int, double> by_pair;
  for (std::size_t c = 0; c < circuits.size(); c += kEvalCircuits) {
    const std::vector<int> chunk(circuits.begin() + c, circuits.begin() + std::min(circuits.size(), c + kEvalCircuits));
    const auto states = corpus.states_of(chunk);
    std::map<int, std::int64_t> row;
    for (std::size_t r = 0; r < states.size(); ++r) row[states[r]] = static_cast<std::int64_t>(r);
    const Tensor v = model.represent(branch, corpus, states, false);
    const auto chunk_pairs = corpus.pairs_of(chunk);
    std::vector<std::int64_t> a, b;
    for (int p : chunk_pairs) a.push_back(row.at(corpus.pairs[p].i)), b.push_back(row.at(corpus.pairs[p].j));
    const Tensor f = fidelity_head(tn::gather_rows(v, a), tn::gather_rows(v, b));
    for (std::size_t k = 0; k < chunk_pairs.size(); ++k) by_pair[chunk_pairs[k]] = f.values()[k];
  }
  std::vector<double> out;
  out.reserve(pairs.size());
  for (int p : pairs) out.push_back(by_pair.at(p));
  return out;
}

MetricsReport evaluate(MCNet& model, Branch branch, const Corpus& corpus, const std::vector<int>& circuits) {
  const auto pairs = corpus.pairs_of(circuits);
  const auto preds = predict(model, branch, corpus, pairs);
  std::vector<double> labels;
  for (int p : pairs) labels.push_back(corpus.pairs[p].fidelity);
  return compute_metrics(preds, labels);
}

std::vector<EpochRecord> train_stage(MCNet& model, Branch branch, const Corpus& corpus, const Split& split,
                                     int epochs, double lr, const TrainConfig& cfg) {
  if (split.train_circuits.empty()) throw ConfigError("training split is empty");
  std::vector<Tensor> trainable;
  if (branch == Branch::Fused && cfg.freeze_branches)
    trainable = model.parameters("fuse.");
  else
    trainable = model.parameters_for(branch);
  if (trainable.empty()) throw ConfigError("no trainable parameters for branch " + to_string(branch));

  // Only the trained parameters take part in the backward pass.
  std::set<const tn::Node*> on;
  for (const auto& t : trainable) on.insert(t.node());
  for (auto t : model.params().tensors()) t.set_requires_grad(on.contains(t.node()));

  const std::string stage = branch == Branch::Measurement ? "branch-mea"
                            : branch == Branch::Circuit   ? "branch-circ"
                                                          : "finetune";
  tn::Adam opt(trainable, tn::AdamConfig{.lr = lr});
  SeededRng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(branch) + 101));
  std::vector<EpochRecord> history;
  std::vector<int> order = split.train_circuits;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.circuits_per_batch)) {
      const std::vector<int> chunk(order.begin() + b,
                                   order.begin() + std::min(order.size(), b + cfg.circuits_per_batch));
      const PairBatch batch = assemble(corpus, chunk);
      if (batch.labels.empty()) continue;
      const Tensor v = model.represent(branch, corpus, batch.states, true);
      const Tensor pred = fidelity_head(tn::gather_rows(v, batch.left), tn::gather_rows(v, batch.right));
      const Tensor l = loss(pred, Tensor::from({static_cast<std::int64_t>(batch.labels.size()), 1}, batch.labels));
      if (!std::isfinite(l.item())) throw NumericError(stage + ": loss became non-finite at epoch " + std::to_string(epoch));
      l.backward();
      opt.step();
      opt.zero_grad();
      total += l.item();
      ++batches;
    }
    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    rec.train_loss = batches ? total / batches : 0.0;
    rec.test_mse = rec.test_r2 = std::nan("");
    if (!split.test_circuits.empty()) {
      const auto m = evaluate(model, branch, corpus, split.test_circuits);
      rec.test_mse = m.mse;
      rec.test_r2 = m.r2;
    }
    history.push_back(rec);
  }
  for (auto t : model.params().tensors()) t.set_requires_grad(true);
  return history;
}

TwoStageResult train_two_stage(MCNet& model, const Corpus& corpus, const Split& split, const TrainConfig& cfg) {
  TwoStageResult r;
  auto append = [&r](std::vector<EpochRecord> h) { r.history.insert(r.history.end(), h.begin(), h.end()); };
  append(train_stage(model, Branch::Measurement, corpus, split, cfg.epochs_branch, cfg.lr_branch, cfg));
  append(train_stage(model, Branch::Circuit, corpus, split, cfg.epochs_branch, cfg.lr_branch, cfg));
  append(train_stage(model, Branch::Fused, corpus, split, cfg.epochs_finetune, cfg.lr_finetune, cfg));
  if (!split.test_circuits.empty()) r.test = evaluate(model, Branch::Fused, corpus, split.test_circuits);
  return r;
}

Tensor train_purity_head(MCNet& model, Branch branch, const Corpus& corpus, const Split& split, int steps,
                         double lr) {
  const auto states = corpus.states_of(split.train_circuits);
  if (states.empty()) throw ConfigError("purity head needs training states");
  std::vector<double> reps, labels;
  for (std::size_t c = 0; c < split.train_circuits.size(); c += kEvalCircuits) {
    const std::vector<int> chunk(split.train_circuits.begin() + c,
                                 split.train_circuits.begin() + std::min(split.train_circuits.size(), c + kEvalCircuits));
    const auto st = corpus.states_of(chunk);
    const Tensor v = model.represent(branch, corpus, st, false);
    reps.insert(reps.end(), v.values().begin(), v.values().end());
    for (int k : st) labels.push_back(corpus.states[k].purity);
  }
  const std::int64_t n = static_cast<std::int64_t>(labels.size()), d = model.config().dim;
  const Tensor v = Tensor::from({n, d}, std::move(reps));
  const Tensor y = Tensor::from({n, 1}, std::move(labels));
  Tensor w = Tensor::zeros({d, 1}, true);
  tn::Adam opt({w}, tn::AdamConfig{.lr = lr});
  for (int s = 0; s < steps; ++s) {
    loss(purity_head(v, w), y).backward();
    opt.step();
    opt.zero_grad();
  }
  return w;
}

}  // namespace xplat::mcnet
