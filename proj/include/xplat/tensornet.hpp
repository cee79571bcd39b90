#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xplat/rng.hpp"

namespace xplat::tensornet {

struct Node;

// Handle to a node of the computation graph. Copies share the node. Most
// operators work on 2-D row-major tensors; a scalar is 1x1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
  static Tensor from(std::vector<std::int64_t> shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::int64_t>& shape() const;
  std::int64_t rows() const;
  std::int64_t cols() const;
  std::int64_t numel() const;

  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();
  double item() const;
  double at(std::int64_t r, std::int64_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  // Empty until backward reaches this tensor.
  const std::vector<double>& grad() const;
  bool has_grad() const;
  void zero_grad();

  // New leaf sharing nothing with the graph.
  Tensor detach() const;

  // Reverse-mode sweep from a 1x1 tensor.
  void backward() const;

  const Node* node() const { return node_.get(); }
  std::shared_ptr<Node> node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  std::vector<std::int64_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
};

// Row-major index ranges [offset[s], offset[s + 1]) that group rows into
// segments, e.g. the records of one snapshot set or the nodes of one graph.
using Segments = std::vector<std::int64_t>;

// Operators. Shape errors throw ConfigError naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// a + b with b a 1 x cols row broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape);
Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& index);
// Row-wise softmax with max shift.
Tensor softmax_rows(const Tensor& a);
// Column-wise softmax inside each segment.
Tensor segment_softmax(const Tensor& a, const Segments& seg);
// Mean of the rows of each segment. Each column is summed in sorted order,
// so the result is bit-identical under any permutation of rows in a segment.
Tensor segment_mean(const Tensor& a, const Segments& seg);
// For weights w (rows x G) and values h (rows x C), the per-segment weighted
// sums sum_r w[r, g] h[r, :] laid out as a (segments x G*C) matrix.
Tensor segment_attend(const Tensor& w, const Tensor& h, const Segments& seg);
// Row u becomes the mean of rows {u} and in[u].
Tensor neighbor_mean(const Tensor& h, const std::vector<std::vector<int>>& in);
// <a_r, b_r> / (|a_r| |b_r| + 1e-12) per row; output rows x 1.
Tensor cosine_rows(const Tensor& a, const Tensor& b);
// Row l of the result holds rows l - k/2 .. l + k/2 of x side by side, zero
// padded at the ends.
Tensor unfold_rows(const Tensor& x, int k);
// x is (length x in_channels); w is (k * in_channels x out_channels) with tap
// t occupying rows [t * in, (t + 1) * in); same padding, odd k.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int k);
// mean((pred - target)^2) over all entries.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

inline constexpr double kCosineEps = 1e-12;

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};
// Train mode normalises with the batch statistics and folds them into the
// running averages as running = momentum * running + (1 - momentum) * batch.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train);

// Named parameters in insertion order.
class ParamStore {
 public:
  // Handles share the stored node, so returning copies is cheap.
  Tensor add(const std::string& name, Tensor t);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor> tensors() const;
  void zero_grad();
  std::size_t numel() const;

  // Batchnorm running statistics live alongside the parameters so they
  // travel with checkpoints.
  BatchNormState& bn(const std::string& name, std::int64_t channels);
  const std::map<std::string, BatchNormState>& bn_states() const { return bn_; }
  std::map<std::string, BatchNormState>& bn_states() { return bn_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Tensor> tensors_;
  std::map<std::string, BatchNormState> bn_;
};

// Weight uniform in +-sqrt(6 / fan_in).
Tensor kaiming_uniform(std::int64_t fan_in, std::int64_t fan_out, SeededRng& rng);
// Entries drawn from U(-bound, bound).
Tensor uniform(std::int64_t rows, std::int64_t cols, double bound, SeededRng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  // Throws ConfigError if lr <= 0.
  Adam(std::vector<Tensor> params, AdamConfig cfg);
  // Skips parameters without a gradient.
  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of fn (which must return a 1x1 tensor) with
// central differences. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double tol = 1e-4, double h = 1e-5, double floor = 1e-3);

// Flat binary of named tensors: "XPTN", u32 count, then per tensor u32 name
// length, name bytes, u32 ndim, i64 dims, f64 values (all little-endian).
void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

// Writes <prefix>.bin plus a <prefix>.json manifest listing names, shapes and
// any extra metadata. Batchnorm statistics are stored as "<name>.running_*".
void save_checkpoint(const std::string& prefix, const ParamStore& store, const nlohmann::json& extra = {});
// Loads values into an existing store with matching names and shapes;
// returns the manifest's extra block.
nlohmann::json load_checkpoint(const std::string& prefix, ParamStore& store);

}  // namespace xplat::tensornet
