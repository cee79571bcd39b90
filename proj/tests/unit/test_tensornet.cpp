#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "xplat/error.hpp"
#include "xplat/tensornet.hpp"

using namespace xplat;
using namespace xplat::tensornet;

namespace {

// Values bounded away from zero so relu and abs-like kinks are never hit.
Tensor rand_t(std::int64_t r, std::int64_t c, SeededRng& rng) {
  std::vector<double> v(static_cast<std::size_t>(r * c));
  for (auto& x : v) {
    const double m = rng.uniform(0.1, 1.0);
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return Tensor::from({r, c}, std::move(v));
}

// Weighted sum with fixed random weights, so every output entry matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  SeededRng rng(seed);
  return sum(hadamard(y, rand_t(y.rows(), y.cols(), rng)));
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(SeededRng&)> inputs;
  Fn fn;
};

std::vector<OpCase> op_cases() {
  const Segments seg{0, 2, 5};
  const std::vector<std::vector<int>> in{{}, {0}, {0, 1}, {2}, {1, 3}};
  return {
      {"matmul", [](SeededRng& r) { return std::vector{rand_t(3, 4, r), rand_t(4, 2, r)}; },
       [](const auto& x) { return probe(matmul(x[0], x[1]), 1); }},
      {"add", [](SeededRng& r) { return std::vector{rand_t(3, 2, r), rand_t(3, 2, r)}; },
       [](const auto& x) { return probe(add(x[0], x[1]), 2); }},
      {"add_row", [](SeededRng& r) { return std::vector{rand_t(3, 2, r), rand_t(1, 2, r)}; },
       [](const auto& x) { return probe(add_row(x[0], x[1]), 3); }},
      {"sub", [](SeededRng& r) { return std::vector{rand_t(3, 2, r), rand_t(3, 2, r)}; },
       [](const auto& x) { return probe(sub(x[0], x[1]), 4); }},
      {"hadamard", [](SeededRng& r) { return std::vector{rand_t(3, 2, r), rand_t(3, 2, r)}; },
       [](const auto& x) { return probe(hadamard(x[0], x[1]), 5); }},
      {"scale", [](SeededRng& r) { return std::vector{rand_t(2, 3, r)}; },
       [](const auto& x) { return probe(scale(x[0], -1.7), 6); }},
      {"relu", [](SeededRng& r) { return std::vector{rand_t(4, 3, r)}; },
       [](const auto& x) { return probe(relu(x[0]), 7); }},
      {"tanh", [](SeededRng& r) { return std::vector{rand_t(4, 3, r)}; },
       [](const auto& x) { return probe(tanh(x[0]), 8); }},
      {"square", [](SeededRng& r) { return std::vector{rand_t(4, 3, r)}; },
       [](const auto& x) { return probe(square(x[0]), 9); }},
      {"mean", [](SeededRng& r) { return std::vector{rand_t(4, 3, r)}; },
       [](const auto& x) { return scale(mean(x[0]), 3.0); }},
      {"concat_cols", [](SeededRng& r) { return std::vector{rand_t(3, 2, r), rand_t(3, 4, r)}; },
       [](const auto& x) { return probe(concat_cols(x[0], x[1]), 10); }},
      {"reshape", [](SeededRng& r) { return std::vector{rand_t(3, 4, r)}; },
       [](const auto& x) { return probe(reshape(x[0], {2, 6}), 11); }},
      {"gather_rows", [](SeededRng& r) { return std::vector{rand_t(4, 3, r)}; },
       [](const auto& x) { return probe(gather_rows(x[0], {3, 0, 3, 1}), 12); }},
      {"softmax_rows", [](SeededRng& r) { return std::vector{rand_t(3, 4, r)}; },
       [](const auto& x) { return probe(softmax_rows(x[0]), 13); }},
      {"segment_softmax", [](SeededRng& r) { return std::vector{rand_t(5, 2, r)}; },
       [seg](const auto& x) { return probe(segment_softmax(x[0], seg), 14); }},
      {"segment_mean", [](SeededRng& r) { return std::vector{rand_t(5, 3, r)}; },
       [seg](const auto& x) { return probe(segment_mean(x[0], seg), 15); }},
      {"segment_attend", [](SeededRng& r) { return std::vector{rand_t(5, 2, r), rand_t(5, 3, r)}; },
       [seg](const auto& x) { return probe(segment_attend(x[0], x[1], seg), 16); }},
      {"neighbor_mean", [](SeededRng& r) { return std::vector{rand_t(5, 3, r)}; },
       [in](const auto& x) { return probe(neighbor_mean(x[0], in), 17); }},
      {"cosine_rows", [](SeededRng& r) { return std::vector{rand_t(3, 4, r), rand_t(3, 4, r)}; },
       [](const auto& x) { return probe(cosine_rows(x[0], x[1]), 18); }},
      {"unfold_rows", [](SeededRng& r) { return std::vector{rand_t(5, 2, r)}; },
       [](const auto& x) { return probe(unfold_rows(x[0], 3), 19); }},
      {"conv1d", [](SeededRng& r) { return std::vector{rand_t(6, 2, r), rand_t(6, 3, r), rand_t(1, 3, r)}; },
       [](const auto& x) { return probe(conv1d(x[0], x[1], x[2], 3), 20); }},
      {"mse_loss", [](SeededRng& r) { return std::vector{rand_t(4, 1, r), rand_t(4, 1, r)}; },
       [](const auto& x) { return mse_loss(x[0], x[1]); }},
      {"batchnorm_train", [](SeededRng& r) { return std::vector{rand_t(6, 3, r), rand_t(1, 3, r), rand_t(1, 3, r)}; },
       [](const auto& x) {
         BatchNormState st;
         return probe(batchnorm(x[0], x[1], x[2], st, true), 21);
       }},
      {"batchnorm_eval", [](SeededRng& r) { return std::vector{rand_t(6, 3, r), rand_t(1, 3, r), rand_t(1, 3, r)}; },
       [](const auto& x) {
         BatchNormState st{{0.1, -0.2, 0.3}, {0.5, 1.5, 2.0}};
         return probe(batchnorm(x[0], x[1], x[2], st, false), 22);
       }},
  };
}

}  // namespace

TEST_CASE("grad: every operator matches central differences over 10 seeds") {
  for (const auto& op : op_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SeededRng rng(derive_seed(1234, seed));
      const auto rep = grad_check(op.fn, op.inputs(rng), 1e-4);
      INFO(op.name << " seed " << seed << " rel " << rep.max_rel_error << " analytic " << rep.analytic << " numeric "
                   << rep.numeric);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("grad: matmul 3x4 by 4x2 passes at 1e-4") {
  SeededRng rng(0);
  const auto rep = grad_check([](const auto& x) { return probe(matmul(x[0], x[1]), 1); },
                              {rand_t(3, 4, rng), rand_t(4, 2, rng)});
  CHECK(rep.passed);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("backward: sum of squares, detach and non-scalar errors") {
  Tensor w = Tensor::from({1, 2}, {1.0, 2.0}, true);
  sum(square(w)).backward();
  CHECK(w.grad() == std::vector<double>{2.0, 4.0});
  Tensor d = w.detach();
  Tensor u = Tensor::from({1, 2}, {3.0, 4.0}, true);
  sum(hadamard(d, u)).backward();
  CHECK_FALSE(d.has_grad());
  CHECK(u.grad() == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(square(w).backward(), ConfigError);
}

TEST_CASE("forward examples") {
  // Mean over identical rows returns that row.
  const Tensor rows = Tensor::from({3, 2}, {1.5, -2, 1.5, -2, 1.5, -2});
  const Tensor m = segment_mean(rows, {0, 3});
  CHECK(m.values() == std::vector<double>{1.5, -2});
  // Cosine of a vector with itself and tiny vectors.
  const Tensor v = Tensor::from({1, 3}, {0.3, -1.0, 2.0});
  CHECK(cosine_rows(v, v).item() == doctest::Approx(1.0).epsilon(1e-11));
  const Tensor tiny = Tensor::from({1, 2}, {1e-30, 1e-30});
  CHECK(std::isfinite(cosine_rows(tiny, tiny).item()));
  // Identity kernel preserves the input.
  const Tensor x = Tensor::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(conv1d(x, eye, Tensor::zeros({1, 2}), 1).values() == x.values());
  // Softmax rows sum to one and tolerate large logits.
  const Tensor big = Tensor::from({1, 3}, {1000.0, 1001.0, 999.0});
  const auto s = softmax_rows(big).values();
  CHECK(s[0] + s[1] + s[2] == doctest::Approx(1.0));
  CHECK(std::isfinite(s[1]));
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("batchnorm running statistics use momentum 0.9") {
  BatchNormState st;
  const Tensor x = Tensor::from({2, 1}, {1.0, 3.0});
  batchnorm(x, Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {0.0}), st, true);
  // Batch mean 2, unbiased variance 2.
  CHECK(st.running_mean[0] == doctest::Approx(0.1 * 2.0));
  CHECK(st.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
}

TEST_CASE("adam: zero gradient, first step size, determinism, bad lr") {
  Tensor w = Tensor::from({1, 1}, {0.5}, true);
  Adam opt({w}, AdamConfig{.lr = 0.01});
  w.zero_grad();
  sum(scale(w, 0.0)).backward();
  opt.step();
  CHECK(w.item() == 0.5);

  Tensor u = Tensor::from({1, 1}, {0.5}, true);
  Adam opt2({u}, AdamConfig{.lr = 0.01});
  sum(scale(u, 3.0)).backward();
  opt2.step();
  // m_hat = g, v_hat = g^2, so the step is lr g / (|g| + eps).
  CHECK(u.item() == doctest::Approx(0.5 - 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
  CHECK(opt2.steps() == 1);

  auto run = [] {
    Tensor p = Tensor::from({1, 2}, {0.3, -0.7}, true);
    Adam o({p}, AdamConfig{.lr = 0.05});
    for (int k = 0; k < 20; ++k) {
      sum(square(sub(p, Tensor::from({1, 2}, {1.0, 2.0})))).backward();
      o.step();
      o.zero_grad();
    }
    return p.values();
  };
  CHECK(run() == run());
  CHECK_THROWS_AS(Adam({w}, AdamConfig{.lr = 0.0}), ConfigError);
}

TEST_CASE("checkpoints round trip values and batchnorm statistics") {
  SeededRng rng(3);
  ParamStore store;
  store.add("a.w", kaiming_uniform(4, 3, rng));
  store.add("a.b", Tensor::zeros({1, 3}));
  auto& bn = store.bn("a.bn", 3);
  bn.running_mean = {1, 2, 3};
  bn.running_var = {4, 5, 6};
  const auto dir = test::temp_dir("ckpt");
  const std::string prefix = (dir / "m").string();
  save_checkpoint(prefix, store, {{"note", "x"}});

  ParamStore other;
  other.add("a.w", Tensor::zeros({4, 3}));
  other.add("a.b", Tensor::zeros({1, 3}));
  other.bn("a.bn", 3);
  const auto extra = load_checkpoint(prefix, other);
  CHECK(extra.at("note") == "x");
  CHECK(other.get("a.w").values() == store.get("a.w").values());
  CHECK(other.bn_states().at("a.bn").running_var == std::vector<double>{4, 5, 6});

  ParamStore wrong;
  wrong.add("a.w", Tensor::zeros({3, 4}));
  CHECK_THROWS_AS(load_checkpoint(prefix, wrong), ConfigError);
}

TEST_CASE("kaiming init is bounded by sqrt(6 / fan_in)") {
  SeededRng rng(1);
  const Tensor w = kaiming_uniform(24, 10, rng);
  const double bound = std::sqrt(6.0 / 24.0);
  for (double v : w.values()) CHECK(std::abs(v) <= bound);
}
