#include "xplat/tensornet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "xplat/error.hpp"

namespace xplat::tensornet {

namespace {

using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const std::vector<std::int64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::int64_t product(const std::vector<std::int64_t>& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

void require_2d(const Tensor& t, const char* op) {
  if (!t.defined()) throw ConfigError(std::string(op) + ": undefined tensor");
  if (t.shape().size() != 2) throw ConfigError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

std::vector<double>& grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

// New node whose gradient flag follows its parents. Graph edges are only kept
// when a gradient can flow.
Tensor make(std::vector<std::int64_t> shape, std::vector<double> value, std::vector<NodePtr> parents, const char* op,
            std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

void check_segments(const Segments& seg, std::int64_t rows, const char* op) {
  if (seg.size() < 2 || seg.front() != 0 || seg.back() != rows)
    throw ConfigError(std::string(op) + ": segment offsets must run from 0 to " + std::to_string(rows));
  for (std::size_t s = 1; s < seg.size(); ++s)
    if (seg[s] <= seg[s - 1]) throw ConfigError(std::string(op) + ": empty or unordered segment");
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  os.write(b, 8);
}

std::uint64_t get_u64(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) throw ConfigError("truncated tensor file");
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
  const std::int64_t n = product(shape);
  return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::from(std::vector<std::int64_t> shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d < 0) throw ConfigError("negative dimension in " + shape_str(shape));
  if (product(shape) != static_cast<std::int64_t>(values.size()))
    throw ConfigError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1, 1}, {v}, requires_grad); }

const std::vector<std::int64_t>& Tensor::shape() const { return node_->shape; }
std::int64_t Tensor::rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
std::int64_t Tensor::cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->value.size()); }
const std::vector<double>& Tensor::values() const { return node_->value; }
std::vector<double>& Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const { return node_->value[r * cols() + c]; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
const std::vector<double>& Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

void Tensor::backward() const {
  if (numel() != 1) throw ConfigError("backward() needs a scalar, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  grad_of(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- Operators --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::int64_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  // Each output row depends only on its own input row, in a fixed order.
  for (std::int64_t i = 0; i < n; ++i) {
    double* c = out.data() + i * m;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* br = B + p * m;
      for (std::int64_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
  return make({n, m}, std::move(out), {a.node_ptr(), b.node_ptr()}, "matmul", [n, k, m](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* G = self.grad.data();
    if (na.requires_grad) {
      auto& ga = grad_of(na);
      const double* B = nb.value.data();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          const double* g = G + i * m;
          const double* br = B + p * m;
          double s = 0.0;
          for (std::int64_t j = 0; j < m; ++j) s += g[j] * br[j];
          ga[i * k + p] += s;
        }
    }
    if (nb.requires_grad) {
      auto& gb = grad_of(nb);
      const double* A = na.value.data();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          const double* g = G + i * m;
          double* dst = gb.data() + p * m;
          for (std::int64_t j = 0; j < m; ++j) dst[j] += av * g[j];
        }
    }
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_same(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) shape_error(op, a, b);
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i], b.values()[i]);
  return make(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, op, [bwd](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double da = 0.0, db = 0.0;
      bwd(na.value[i], nb.value[i], self.grad[i], da, db);
      if (na.requires_grad) grad_of(na)[i] += da;
      if (nb.requires_grad) grad_of(nb)[i] += db;
    }
  });
}

template <class Fwd, class Bwd>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
  if (!a.defined()) throw ConfigError(std::string(op) + ": undefined tensor");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
  return make(a.shape(), std::move(out), {a.node_ptr()}, op, [bwd](Node& self) {
    Node& na = *self.parents[0];
    auto& ga = grad_of(na);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += bwd(na.value[i], self.value[i], self.grad[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) { da = g, db = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) { da = g, db = -g; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary_same(
      "hadamard", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) { da = g * y, db = g * x; });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  require_2d(a, "add_row");
  require_2d(b, "add_row");
  if (b.rows() != 1 || b.cols() != a.cols()) shape_error("add_row", a, b);
  const std::int64_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.values());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) out[i * m + j] += b.values()[j];
  return make(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, "add_row", [n, m](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& ga = grad_of(na);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& gb = grad_of(nb);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) gb[j] += self.grad[i * m + j];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double, double g) { return s * g; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y, double g) { return g * (1.0 - y * y); });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double, double g) { return 2.0 * x * g; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make({1, 1}, {s}, {a.node_ptr()}, "sum", [](Node& self) {
    auto& ga = grad_of(*self.parents[0]);
    for (auto& g : ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ConfigError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  const std::int64_t n = a.rows(), p = a.cols(), q = b.cols();
  std::vector<double> out(static_cast<std::size_t>(n * (p + q)));
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.values().data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(b.values().data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return make({n, p + q}, std::move(out), {a.node_ptr(), b.node_ptr()}, "concat_cols", [n, p, q](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * (p + q);
      if (na.requires_grad) {
        auto& ga = grad_of(na);
        for (std::int64_t j = 0; j < p; ++j) ga[i * p + j] += g[j];
      }
      if (nb.requires_grad) {
        auto& gb = grad_of(nb);
        for (std::int64_t j = 0; j < q; ++j) gb[i * q + j] += g[p + j];
      }
    }
  });
}

Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape) {
  if (product(shape) != a.numel())
    throw ConfigError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return make(std::move(shape), a.values(), {a.node_ptr()}, "reshape", [](Node& self) {
    auto& ga = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& index) {
  require_2d(a, "gather_rows");
  const std::int64_t m = a.cols();
  std::vector<double> out(index.size() * static_cast<std::size_t>(m));
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= a.rows())
      throw ConfigError("gather_rows: index " + std::to_string(index[r]) + " outside " + shape_str(a.shape()));
    std::copy_n(a.values().data() + index[r] * m, m, out.data() + r * m);
  }
  return make({static_cast<std::int64_t>(index.size()), m}, std::move(out), {a.node_ptr()}, "gather_rows",
              [index, m](Node& self) {
                auto& ga = grad_of(*self.parents[0]);
                for (std::size_t r = 0; r < index.size(); ++r)
                  for (std::int64_t j = 0; j < m; ++j) ga[index[r] * m + j] += self.grad[r * m + j];
              });
}

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  const std::int64_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.values().size());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* x = a.values().data() + i * m;
    double* y = out.data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double s = 0.0;
    for (std::int64_t j = 0; j < m; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::int64_t j = 0; j < m; ++j) y[j] /= s;
  }
  return make(a.shape(), std::move(out), {a.node_ptr()}, "softmax_rows", [n, m](Node& self) {
    auto& ga = grad_of(*self.parents[0]);
    for (std::int64_t i = 0; i < n; ++i) {
      const double* y = self.value.data() + i * m;
      const double* g = self.grad.data() + i * m;
      double dot = 0.0;
      for (std::int64_t j = 0; j < m; ++j) dot += g[j] * y[j];
      for (std::int64_t j = 0; j < m; ++j) ga[i * m + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor segment_softmax(const Tensor& a, const Segments& seg) {
  require_2d(a, "segment_softmax");
  check_segments(seg, a.rows(), "segment_softmax");
  const std::int64_t m = a.cols();
  std::vector<double> out(a.values().size());
  for (std::size_t s = 0; s + 1 < seg.size(); ++s) {
    for (std::int64_t c = 0; c < m; ++c) {
      double mx = -INFINITY;
      for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r) mx = std::max(mx, a.values()[r * m + c]);
      double tot = 0.0;
      for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r) tot += (out[r * m + c] = std::exp(a.values()[r * m + c] - mx));
      for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r) out[r * m + c] /= tot;
    }
  }
  return make(a.shape(), std::move(out), {a.node_ptr()}, "segment_softmax", [seg, m](Node& self) {
    auto& ga = grad_of(*self.parents[0]);
    for (std::size_t s = 0; s + 1 < seg.size(); ++s)
      for (std::int64_t c = 0; c < m; ++c) {
        double dot = 0.0;
        for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r) dot += self.grad[r * m + c] * self.value[r * m + c];
        for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r)
          ga[r * m + c] += self.value[r * m + c] * (self.grad[r * m + c] - dot);
      }
  });
}

Tensor segment_mean(const Tensor& a, const Segments& seg) {
  require_2d(a, "segment_mean");
  check_segments(seg, a.rows(), "segment_mean");
  const std::int64_t m = a.cols();
  const std::int64_t ns = static_cast<std::int64_t>(seg.size()) - 1;
  std::vector<double> out(static_cast<std::size_t>(ns * m));
  std::vector<double> buf;
  for (std::int64_t s = 0; s < ns; ++s) {
    const std::int64_t len = seg[s + 1] - seg[s];
    buf.resize(static_cast<std::size_t>(len));
    for (std::int64_t c = 0; c < m; ++c) {
      for (std::int64_t r = 0; r < len; ++r) buf[r] = a.values()[(seg[s] + r) * m + c];
      std::sort(buf.begin(), buf.end());
      double tot = 0.0;
      for (double v : buf) tot += v;
      out[s * m + c] = tot / static_cast<double>(len);
    }
  }
  return make({ns, m}, std::move(out), {a.node_ptr()}, "segment_mean", [seg, m, ns](Node& self) {
    auto& ga = grad_of(*self.parents[0]);
    for (std::int64_t s = 0; s < ns; ++s) {
      const double inv = 1.0 / static_cast<double>(seg[s + 1] - seg[s]);
      for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r)
        for (std::int64_t c = 0; c < m; ++c) ga[r * m + c] += self.grad[s * m + c] * inv;
    }
  });
}

Tensor segment_attend(const Tensor& w, const Tensor& h, const Segments& seg) {
  require_2d(w, "segment_attend");
  require_2d(h, "segment_attend");
  if (w.rows() != h.rows()) shape_error("segment_attend", w, h);
  check_segments(seg, h.rows(), "segment_attend");
  const std::int64_t G = w.cols(), C = h.cols();
  const std::int64_t ns = static_cast<std::int64_t>(seg.size()) - 1;
  std::vector<double> out(static_cast<std::size_t>(ns * G * C), 0.0);
  for (std::int64_t s = 0; s < ns; ++s)
    for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r)
      for (std::int64_t g = 0; g < G; ++g) {
        const double wv = w.values()[r * G + g];
        double* dst = out.data() + s * G * C + g * C;
        for (std::int64_t c = 0; c < C; ++c) dst[c] += wv * h.values()[r * C + c];
      }
  return make({ns, G * C}, std::move(out), {w.node_ptr(), h.node_ptr()}, "segment_attend",
              [seg, G, C, ns](Node& self) {
                Node& nw = *self.parents[0];
                Node& nh = *self.parents[1];
                for (std::int64_t s = 0; s < ns; ++s)
                  for (std::int64_t r = seg[s]; r < seg[s + 1]; ++r)
                    for (std::int64_t g = 0; g < G; ++g) {
                      const double* go = self.grad.data() + s * G * C + g * C;
                      if (nw.requires_grad) {
                        double acc = 0.0;
                        for (std::int64_t c = 0; c < C; ++c) acc += go[c] * nh.value[r * C + c];
                        grad_of(nw)[r * G + g] += acc;
                      }
                      if (nh.requires_grad) {
                        auto& gh = grad_of(nh);
                        const double wv = nw.value[r * G + g];
                        for (std::int64_t c = 0; c < C; ++c) gh[r * C + c] += wv * go[c];
                      }
                    }
              });
}

Tensor neighbor_mean(const Tensor& h, const std::vector<std::vector<int>>& in) {
  require_2d(h, "neighbor_mean");
  if (static_cast<std::int64_t>(in.size()) != h.rows())
    throw ConfigError("neighbor_mean: " + std::to_string(in.size()) + " neighbour lists for " +
                      shape_str(h.shape()));
  const std::int64_t n = h.rows(), m = h.cols();
  std::vector<double> out(h.values().size(), 0.0);
  for (std::int64_t u = 0; u < n; ++u) {
    double* dst = out.data() + u * m;
    const double* self_row = h.values().data() + u * m;
    for (std::int64_t c = 0; c < m; ++c) dst[c] = self_row[c];
    for (int v : in[u]) {
      if (v < 0 || v >= n) throw ConfigError("neighbor_mean: neighbour index out of range");
      const double* src = h.values().data() + static_cast<std::int64_t>(v) * m;
      for (std::int64_t c = 0; c < m; ++c) dst[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(in[u].size() + 1);
    for (std::int64_t c = 0; c < m; ++c) dst[c] *= inv;
  }
  return make(h.shape(), std::move(out), {h.node_ptr()}, "neighbor_mean", [in, n, m](Node& self) {
    auto& gh = grad_of(*self.parents[0]);
    for (std::int64_t u = 0; u < n; ++u) {
      const double inv = 1.0 / static_cast<double>(in[u].size() + 1);
      const double* g = self.grad.data() + u * m;
      for (std::int64_t c = 0; c < m; ++c) gh[u * m + c] += g[c] * inv;
      for (int v : in[u])
        for (std::int64_t c = 0; c < m; ++c) gh[static_cast<std::int64_t>(v) * m + c] += g[c] * inv;
    }
  });
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  require_2d(a, "cosine_rows");
  require_2d(b, "cosine_rows");
  if (a.shape() != b.shape()) shape_error("cosine_rows", a, b);
  const std::int64_t n = a.rows(), m = a.cols();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* x = a.values().data() + i * m;
    const double* y = b.values().data() + i * m;
    double dot = 0.0, xx = 0.0, yy = 0.0;
    for (std::int64_t j = 0; j < m; ++j) dot += x[j] * y[j], xx += x[j] * x[j], yy += y[j] * y[j];
    out[i] = dot / (std::sqrt(xx) * std::sqrt(yy) + kCosineEps);
  }
  return make({n, 1}, std::move(out), {a.node_ptr(), b.node_ptr()}, "cosine_rows", [n, m](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    for (std::int64_t i = 0; i < n; ++i) {
      const double* x = na.value.data() + i * m;
      const double* y = nb.value.data() + i * m;
      double dot = 0.0, xx = 0.0, yy = 0.0;
      for (std::int64_t j = 0; j < m; ++j) dot += x[j] * y[j], xx += x[j] * x[j], yy += y[j] * y[j];
      const double nx = std::sqrt(xx), ny = std::sqrt(yy);
      const double d = nx * ny + kCosineEps;
      const double g = self.grad[i];
      // d/dx [dot / (|x||y| + eps)] = y / d - dot |y| x / (|x| d^2).
      const double cx = nx > 0.0 ? dot * ny / (nx * d * d) : 0.0;
      const double cy = ny > 0.0 ? dot * nx / (ny * d * d) : 0.0;
      if (na.requires_grad) {
        auto& ga = grad_of(na);
        for (std::int64_t j = 0; j < m; ++j) ga[i * m + j] += g * (y[j] / d - cx * x[j]);
      }
      if (nb.requires_grad) {
        auto& gb = grad_of(nb);
        for (std::int64_t j = 0; j < m; ++j) gb[i * m + j] += g * (x[j] / d - cy * y[j]);
      }
    }
  });
}

Tensor unfold_rows(const Tensor& x, int k) {
  require_2d(x, "unfold_rows");
  if (k < 1 || k % 2 == 0) throw ConfigError("unfold_rows: kernel size must be odd and positive, got " + std::to_string(k));
  const std::int64_t L = x.rows(), C = x.cols(), half = k / 2;
  std::vector<double> out(static_cast<std::size_t>(L * k * C), 0.0);
  for (std::int64_t l = 0; l < L; ++l)
    for (std::int64_t t = 0; t < k; ++t) {
      const std::int64_t src = l + t - half;
      if (src < 0 || src >= L) continue;
      std::copy_n(x.values().data() + src * C, C, out.data() + (l * k + t) * C);
    }
  return make({L, k * C}, std::move(out), {x.node_ptr()}, "unfold_rows", [L, C, k, half](Node& self) {
    auto& gx = grad_of(*self.parents[0]);
    for (std::int64_t l = 0; l < L; ++l)
      for (std::int64_t t = 0; t < k; ++t) {
        const std::int64_t src = l + t - half;
        if (src < 0 || src >= L) continue;
        for (std::int64_t c = 0; c < C; ++c) gx[src * C + c] += self.grad[(l * k + t) * C + c];
      }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int k) {
  require_2d(x, "conv1d");
  require_2d(w, "conv1d");
  if (w.rows() != static_cast<std::int64_t>(k) * x.cols()) shape_error("conv1d", x, w);
  const Tensor cols = k == 1 ? x : unfold_rows(x, k);
  return add_row(matmul(cols, w), bias);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() == 0) throw ConfigError("mse_loss on an empty batch");
  if (pred.numel() != target.numel()) shape_error("mse_loss", pred, target);
  return mean(square(sub(pred, reshape(target, pred.shape()))));
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train) {
  require_2d(x, "batchnorm");
  const std::int64_t n = x.rows(), m = x.cols();
  if (gamma.numel() != m || beta.numel() != m) shape_error("batchnorm", x, gamma);
  if (state.running_mean.empty()) {
    state.running_mean.assign(static_cast<std::size_t>(m), 0.0);
    state.running_var.assign(static_cast<std::size_t>(m), 1.0);
  }
  if (static_cast<std::int64_t>(state.running_mean.size()) != m) shape_error("batchnorm", x, gamma);
  std::vector<double> mu(static_cast<std::size_t>(m), 0.0), var(static_cast<std::size_t>(m), 0.0);
  if (train) {
    if (n < 2) throw ConfigError("batchnorm in train mode needs at least 2 rows");
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t c = 0; c < m; ++c) mu[c] += x.values()[i * m + c];
    for (auto& v : mu) v /= static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t c = 0; c < m; ++c) {
        const double d = x.values()[i * m + c] - mu[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(n);
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::int64_t c = 0; c < m; ++c) {
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mu[c];
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var[c] * unbias;
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }
  std::vector<double> inv(static_cast<std::size_t>(m));
  for (std::int64_t c = 0; c < m; ++c) inv[c] = 1.0 / std::sqrt(var[c] + state.eps);
  std::vector<double> xhat(x.values().size()), out(x.values().size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < m; ++c) {
      const std::int64_t at = i * m + c;
      xhat[at] = (x.values()[at] - mu[c]) * inv[c];
      out[at] = gamma.values()[c] * xhat[at] + beta.values()[c];
    }
  return make(x.shape(), std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()}, "batchnorm",
              [n, m, train, inv, xhat = std::move(xhat)](Node& self) {
                Node& nx = *self.parents[0];
                Node& ng = *self.parents[1];
                Node& nbeta = *self.parents[2];
                const auto& G = self.grad;
                if (ng.requires_grad || nbeta.requires_grad) {
                  for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t c = 0; c < m; ++c) {
                      if (ng.requires_grad) grad_of(ng)[c] += G[i * m + c] * xhat[i * m + c];
                      if (nbeta.requires_grad) grad_of(nbeta)[c] += G[i * m + c];
                    }
                }
                if (!nx.requires_grad) return;
                auto& gx = grad_of(nx);
                if (!train) {
                  for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t c = 0; c < m; ++c) gx[i * m + c] += G[i * m + c] * ng.value[c] * inv[c];
                  return;
                }
                std::vector<double> s1(static_cast<std::size_t>(m), 0.0), s2(static_cast<std::size_t>(m), 0.0);
                for (std::int64_t i = 0; i < n; ++i)
                  for (std::int64_t c = 0; c < m; ++c) {
                    const double d = G[i * m + c] * ng.value[c];
                    s1[c] += d;
                    s2[c] += d * xhat[i * m + c];
                  }
                const double invn = 1.0 / static_cast<double>(n);
                for (std::int64_t i = 0; i < n; ++i)
                  for (std::int64_t c = 0; c < m; ++c) {
                    const double d = G[i * m + c] * ng.value[c];
                    gx[i * m + c] += inv[c] * (d - invn * s1[c] - xhat[i * m + c] * invn * s2[c]);
                  }
              });
}

// ---- Parameters and optimisation -------------------------------------------

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return tensors_[it->second];
}

std::vector<Tensor> ParamStore::tensors() const { return tensors_; }

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.numel());
  return n;
}

BatchNormState& ParamStore::bn(const std::string& name, std::int64_t channels) {
  auto& s = bn_[name];
  if (s.running_mean.empty()) {
    s.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
    s.running_var.assign(static_cast<std::size_t>(channels), 1.0);
  }
  return s;
}

Tensor kaiming_uniform(std::int64_t fan_in, std::int64_t fan_out, SeededRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(fan_in * fan_out));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor uniform(std::int64_t rows, std::int64_t cols, double bound, SeededRng& rng) {
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({rows, cols}, std::move(v), true);
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("Adam learning rate must be positive, got " + std::to_string(cfg_.lr));
  for (const auto& p : params_) {
    m_.emplace_back(p.values().size(), 0.0);
    v_.emplace_back(p.values().size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mh = m_[k][i] / c1;
      const double vh = v_[k][i] / c2;
      w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
                           double tol, double h, double floor) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  fn(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.values().size(), 0.0));

  GradCheckReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& vals = inputs[k].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = fn(inputs).item();
      vals[i] = orig - h;
      const double fm = fn(inputs).item();
      vals[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.input = k;
        rep.index = i;
        rep.analytic = a;
        rep.numeric = num;
      }
    }
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

// ---- Persistence -----------------------------------------------------------

void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ResourceError("cannot open " + path + " for writing");
  f.write("XPTN", 4);
  put_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put_u64(f, static_cast<std::uint64_t>(d));
    for (double v : t.values()) put_u64(f, std::bit_cast<std::uint64_t>(v));
  }
  if (!f) throw ResourceError("short write to " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open tensor file " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "XPTN") throw ConfigError(path + " is not a tensor file");
  const auto count = get_u64(f, 4);
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get_u64(f, 4);
    std::string name(static_cast<std::size_t>(len), '\0');
    f.read(name.data(), static_cast<std::streamsize>(len));
    const auto nd = get_u64(f, 4);
    std::vector<std::int64_t> shape;
    for (std::uint64_t d = 0; d < nd; ++d) shape.push_back(static_cast<std::int64_t>(get_u64(f, 8)));
    std::vector<double> vals(static_cast<std::size_t>(product(shape)));
    for (auto& v : vals) v = std::bit_cast<double>(get_u64(f, 8));
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(vals)));
  }
  return out;
}

void save_checkpoint(const std::string& prefix, const ParamStore& store, const nlohmann::json& extra) {
  std::vector<std::pair<std::string, Tensor>> all;
  nlohmann::json manifest;
  manifest["format"] = "xptn-1";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& name : store.names()) all.emplace_back(name, store.get(name));
  for (const auto& [name, s] : store.bn_states()) {
    const auto c = static_cast<std::int64_t>(s.running_mean.size());
    all.emplace_back(name + ".running_mean", Tensor::from({1, c}, s.running_mean));
    all.emplace_back(name + ".running_var", Tensor::from({1, c}, s.running_var));
  }
  for (const auto& [name, t] : all) manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  manifest["extra"] = extra.is_null() ? nlohmann::json::object() : extra;
  save_tensors(prefix + ".bin", all);
  std::ofstream j(prefix + ".json", std::ios::trunc);
  if (!j) throw ResourceError("cannot open " + prefix + ".json for writing");
  j << manifest.dump(2) << '\n';
}

nlohmann::json load_checkpoint(const std::string& prefix, ParamStore& store) {
  std::ifstream j(prefix + ".json");
  if (!j) throw ConfigError("missing checkpoint manifest " + prefix + ".json");
  const auto manifest = nlohmann::json::parse(j);
  std::map<std::string, Tensor> loaded;
  for (auto& [name, t] : load_tensors(prefix + ".bin")) loaded.emplace(name, t);
  for (const auto& name : store.names()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw ConfigError("checkpoint " + prefix + " lacks parameter " + name);
    Tensor dst = store.get(name);
    if (dst.shape() != it->second.shape())
      throw ConfigError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(dst.shape()));
    dst.mutable_values() = it->second.values();
  }
  for (auto& [name, s] : store.bn_states()) {
    auto m = loaded.find(name + ".running_mean");
    auto v = loaded.find(name + ".running_var");
    if (m == loaded.end() || v == loaded.end()) throw ConfigError("checkpoint " + prefix + " lacks statistics for " + name);
    s.running_mean = m->second.values();
    s.running_var = v->second.values();
  }
  return manifest.value("extra", nlohmann::json::object());
}

}  // namespace xplat::tensornet
