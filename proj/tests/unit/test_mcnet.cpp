#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "xplat/datapipe.hpp"
#include "xplat/error.hpp"
#include "xplat/mcnet.hpp"

using namespace xplat;
using namespace xplat::mcnet;
namespace tn = xplat::tensornet;

namespace {

// Small on-disk dataset reused by every test in this file.
const datapipe::Dataset& tiny_dataset() {
  static const datapipe::Dataset ds = [] {
    const auto dir = test::temp_dir("mcnet_tiny");
    datapipe::BuildConfig cfg;
    cfg.n_qubits = 2;
    cfg.n_circuits = 6;
    cfg.levels = 3;
    cfg.m_shots = 3;
    cfg.layers = 3;
    cfg.seed = 5;
    datapipe::build_dataset(cfg, dir.string());
    return datapipe::load_dataset(dir.string());
  }();
  return ds;
}

const Corpus& tiny_corpus() {
  static const Corpus c = datapipe::to_corpus(tiny_dataset());
  return c;
}

ModelConfig tiny_config(Fusion f, Aggregation a = Aggregation::Lazy) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.fusion_rank = 8;
  cfg.conv_widths = {6, 8};
  cfg.graph_widths = {6, 8};
  cfg.mlp_hidden = 8;
  cfg.glimpses = 2;
  cfg.fusion = f;
  cfg.aggregation = a;
  cfg.seed = 3;
  return datapipe::configure_for(cfg, tiny_corpus());
}

Split tiny_split() { return datapipe::split_by_circuit(tiny_corpus().circuit_ids(), 0.34, 1); }

void set_identity(MCNet& m, const std::string& name) {
  Tensor w = m.params().get(name + ".w");
  auto& v = w.mutable_values();
  std::fill(v.begin(), v.end(), 0.0);
  for (std::int64_t i = 0; i < std::min(w.rows(), w.cols()); ++i) v[i * w.cols() + i] = 1.0;
}

}  // namespace

TEST_CASE("measurement features: layout, width and suffix") {
  shadows::SnapshotSet s{1, {shadows::Record{{shadows::Pauli::Z}, {0}}}};
  CHECK(build_measurement_features(s, nullptr) == std::vector<double>{2, 0, 0, 0, 0, 0, -1, 0});
  const auto dep = circuits::depolarizing_profile(6, 0.05);
  CHECK(measurement_feature_dim(6, nullptr) == 48);
  CHECK(measurement_feature_dim(6, &dep) == 49);
  const auto dev = circuits::builtin_profile("device_a", 6);
  CHECK(measurement_feature_dim(6, &dev) == 53);
  SeededRng rng(1);
  const auto snaps = shadows::measure_random_pauli(qsim::DensityMatrix::ground(6), 4, rng);
  const auto f = build_measurement_features(snaps, &dep);
  CHECK(f.size() == 4 * 49);
  CHECK(f[48] == doctest::Approx(0.05));
}

TEST_CASE("normalizer standardises only the suffix columns") {
  Normalizer n;
  n.start = 1;
  const std::vector<double> rows{5, 1, 7, 3};
  n.fit(rows, 2);
  auto r = rows;
  n.apply(r);
  CHECK(r[0] == 5);
  CHECK(r[2] == 7);
  CHECK(r[1] == doctest::Approx(-1.0));
  CHECK(r[3] == doctest::Approx(1.0));
  const auto back = Normalizer::from_json(n.to_json());
  CHECK(back.mean == n.mean);
  CHECK(back.stddev == n.stddev);
}

TEST_CASE("config json round trips and rejects unknown keys") {
  const auto cfg = tiny_config(Fusion::Attention, Aggregation::Early);
  CHECK(ModelConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  auto j = cfg.to_json();
  j["conv_kernel"] = 3;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  ModelConfig bad = cfg;
  bad.fusion_rank = bad.dim + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(fusion_from_string("product"), ConfigError);
  TrainConfig t;
  CHECK(TrainConfig::from_json(t.to_json()).to_json() == t.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json({{"epochs", 3}}), ConfigError);
  CHECK(t.lr_branch == 1e-3);
  CHECK(t.lr_finetune == 1e-4);
  ModelConfig defaults;
  CHECK(defaults.dim == 256);
  CHECK(defaults.conv_widths == std::vector<int>{64, 128, 256});
}

TEST_CASE("lrbp with identity maps gives tanh(1)^2 per entry") {
  MCNet m(tiny_config(Fusion::Lrbp));
  for (const char* w : {"fuse.A", "fuse.B", "fuse.P"}) set_identity(m, w);
  CircuitOutput y;
  y.pooled = Tensor::from({1, 8}, std::vector<double>(8, 1.0));
  const Tensor out = m.fuse(y.pooled, y);
  CHECK(out.cols() == 8);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.5800).epsilon(1e-4));
  CHECK(out.values()[0] == doctest::Approx(std::tanh(1.0) * std::tanh(1.0)).epsilon(1e-15));
}

TEST_CASE("sum fusion with identity maps is x + y") {
  MCNet m(tiny_config(Fusion::Sum));
  for (const char* w : {"fuse.W1", "fuse.W2", "fuse.P"}) set_identity(m, w);
  SeededRng rng(2);
  std::vector<double> xv(8), yv(8);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : yv) v = rng.normal();
  CircuitOutput y;
  y.pooled = Tensor::from({1, 8}, yv);
  const Tensor out = m.fuse(Tensor::from({1, 8}, xv), y);
  for (int k = 0; k < 8; ++k) CHECK(out.values()[k] == doctest::Approx(xv[k] + yv[k]));
}

TEST_CASE("heads: cosine, purity, k-device, loss") {
  const Tensor v = Tensor::from({1, 3}, {0.2, -1.0, 0.5});
  CHECK(fidelity_head(v, v).item() == doctest::Approx(1.0));
  CHECK(fidelity_head(v, tn::scale(v, -1.0)).item() == doctest::Approx(-1.0));
  const Tensor a = Tensor::from({1, 2}, {1.0, 0.0}), b = Tensor::from({1, 2}, {0.0, 3.0});
  CHECK(fidelity_head(a, b).item() == doctest::Approx(0.0));
  CHECK(fidelity_head(a, b).item() == fidelity_head(b, a).item());

  const Tensor w0 = Tensor::zeros({3, 1});
  CHECK(purity_head(v, w0).item() == 0.0);
  const Tensor w = Tensor::from({3, 1}, {0.3, 0.1, -0.2});
  CHECK(purity_head(tn::scale(v, 2.5), w).item() == doctest::Approx(2.5 * purity_head(v, w).item()));
  CHECK_THROWS_AS(purity_head(v, Tensor::zeros({2, 1})), ConfigError);

  CHECK(kdevice_fidelity(Tensor::from({3, 2}, {1, 2, 1, 2, 1, 2})).item() == doctest::Approx(1.0));
  const Tensor two = Tensor::from({2, 3}, {0.2, -1.0, 0.5, 1.0, 0.3, 0.1});
  CHECK(kdevice_fidelity(two).item() ==
        doctest::Approx(fidelity_head(tn::gather_rows(two, {0}), tn::gather_rows(two, {1})).item()));
  // Pairs (0,1) = 1, (0,2) = 0, (1,2) = 0 over three unordered pairs.
  CHECK(kdevice_fidelity(Tensor::from({3, 2}, {1, 0, 1, 0, 0, 1})).item() == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(kdevice_fidelity(Tensor::from({1, 2}, {1, 0})), ConfigError);

  CHECK(loss(Tensor::from({1, 1}, {0.5}), Tensor::from({1, 1}, {1.0})).item() == doctest::Approx(0.25));
  CHECK(loss(v, v).item() == 0.0);
}

TEST_CASE("property: lazy MeaNet is bit-exact under record permutation") {
  Corpus c = tiny_corpus();
  for (auto agg : {Aggregation::Lazy, Aggregation::Early}) {
    MCNet m(tiny_config(Fusion::Lrbp, agg));
    m.fit_normalizers(c, c.states_of(c.circuit_ids()));
    const Tensor before = m.measurement(c, {0, 1}, false);
    auto& s = c.states[0];
    const int F = static_cast<int>(s.features.size()) / s.records;
    std::vector<double> permuted;
    for (int r = s.records - 1; r >= 0; --r)
      permuted.insert(permuted.end(), s.features.begin() + r * F, s.features.begin() + (r + 1) * F);
    std::swap(s.features, permuted);
    const Tensor after = m.measurement(c, {0, 1}, false);
    std::swap(s.features, permuted);
    CHECK(before.values() == after.values());
  }
}

TEST_CASE("duplicating every record leaves MeaNet unchanged") {
  Corpus c = tiny_corpus();
  MCNet m(tiny_config(Fusion::Lrbp));
  m.fit_normalizers(c, c.states_of(c.circuit_ids()));
  const Tensor before = m.measurement(c, {0}, false);
  auto& s = c.states[0];
  s.features.insert(s.features.end(), s.features.begin(), s.features.end());
  s.records *= 2;
  const Tensor after = m.measurement(c, {0}, false);
  for (std::size_t k = 0; k < before.values().size(); ++k)
    CHECK(after.values()[k] == doctest::Approx(before.values()[k]).epsilon(1e-12));
}

TEST_CASE("shared encoder: a state's representation does not depend on its batch") {
  const Corpus& c = tiny_corpus();
  for (auto f : {Fusion::Sum, Fusion::Concat, Fusion::Lrbp, Fusion::Attention}) {
    MCNet m(tiny_config(f));
    m.fit_normalizers(c, c.states_of(c.circuit_ids()));
    const std::size_t n_params = m.params().numel();
    const Tensor both = m.represent(Branch::Fused, c, {2, 5}, false);
    const Tensor first = m.represent(Branch::Fused, c, {2}, false);
    const Tensor second = m.represent(Branch::Fused, c, {5}, false);
    CHECK(m.params().numel() == n_params);
    CHECK(both.cols() == 8);
    std::vector<double> joined = first.values();
    joined.insert(joined.end(), second.values().begin(), second.values().end());
    CHECK(both.values() == joined);
  }
}

TEST_CASE("grad: end-to-end tiny model for every fusion mode") {
  const Corpus& c = tiny_corpus();
  for (auto f : {Fusion::Lrbp, Fusion::Sum, Fusion::Concat, Fusion::Attention}) {
    MCNet m(tiny_config(f));
    m.fit_normalizers(c, c.states_of(c.circuit_ids()));
    const std::vector<int> states = c.states_of({c.pairs.front().circuit_id});
    std::vector<std::int64_t> left, right;
    std::vector<double> labels;
    for (int p : c.pairs_of({c.pairs.front().circuit_id})) {
      const auto& pr = c.pairs[p];
      left.push_back(std::find(states.begin(), states.end(), pr.i) - states.begin());
      right.push_back(std::find(states.begin(), states.end(), pr.j) - states.begin());
      labels.push_back(pr.fidelity);
    }
    const Tensor y = Tensor::from({static_cast<std::int64_t>(labels.size()), 1}, labels);
    auto fn = [&](const std::vector<Tensor>&) {
      const Tensor v = m.represent(Branch::Fused, c, states, true);
      return loss(fidelity_head(tn::gather_rows(v, left), tn::gather_rows(v, right)), y);
    };
    const auto rep = tn::grad_check(fn, m.params().tensors(), 1e-4);
    INFO(to_string(f) << " rel " << rep.max_rel_error << " input " << m.params().names()[rep.input] << " analytic "
                      << rep.analytic << " numeric " << rep.numeric);
    CHECK(rep.passed);
    // The check is not vacuous: every branch receives gradient.
    for (const char* name : {"mea.conv0.w", "circ.gc0.w", f == Fusion::Concat ? "fuse.mlp1.w" : "fuse.P.w"}) {
      const auto& g = m.params().get(name).grad();
      CHECK(std::any_of(g.begin(), g.end(), [](double x) { return x != 0.0; }));
    }
  }
}

TEST_CASE("training: smoke run, determinism and frozen branches") {
  const Corpus& c = tiny_corpus();
  const Split split = tiny_split();
  TrainConfig t;
  t.seed = 4;
  t.lr_branch = 3e-3;
  auto run = [&] {
    MCNet m(tiny_config(Fusion::Lrbp));
    m.fit_normalizers(c, c.states_of(split.train_circuits));
    return train_stage(m, Branch::Measurement, c, split, 5, t.lr_branch, t);
  };
  const auto h1 = run();
  const auto h2 = run();
  REQUIRE(h1.size() == 5);
  int upticks = 0;
  for (std::size_t k = 1; k < h1.size(); ++k) upticks += h1[k].train_loss > h1[k - 1].train_loss;
  CHECK(upticks <= 2);
  for (std::size_t k = 0; k < h1.size(); ++k) {
    CHECK(h1[k].train_loss == h2[k].train_loss);
    CHECK(h1[k].test_mse == h2[k].test_mse);
  }

  MCNet m(tiny_config(Fusion::Lrbp));
  m.fit_normalizers(c, c.states_of(split.train_circuits));
  const auto mea_before = m.params().get("mea.mlp1.w").values();
  const auto fuse_before = m.params().get("fuse.A.w").values();
  TrainConfig frozen = t;
  frozen.freeze_branches = true;
  train_stage(m, Branch::Fused, c, split, 2, 1e-3, frozen);
  CHECK(m.params().get("mea.mlp1.w").values() == mea_before);
  CHECK(m.params().get("fuse.A.w").values() != fuse_before);
}

TEST_CASE("two-stage training and checkpoint round trip") {
  const Corpus& c = tiny_corpus();
  const Split split = tiny_split();
  TrainConfig t;
  t.epochs_branch = 2;
  t.epochs_finetune = 2;
  MCNet m(tiny_config(Fusion::Attention));
  m.fit_normalizers(c, c.states_of(split.train_circuits));
  const auto res = train_two_stage(m, c, split, t);
  CHECK(res.history.size() == 6);
  CHECK(res.history.front().stage == "branch-mea");
  CHECK(res.history.back().stage == "finetune");
  CHECK(res.test.count == c.pairs_of(split.test_circuits).size());

  const auto dir = test::temp_dir("mcnet_ckpt");
  m.save((dir / "m").string());
  MCNet back = MCNet::load((dir / "m").string());
  const auto pairs = c.pairs_of(split.test_circuits);
  CHECK(predict(back, Branch::Fused, c, pairs) == predict(m, Branch::Fused, c, pairs));

  MCNet partial(tiny_config(Fusion::Attention));
  partial.load_prefix((dir / "m").string(), "mea.");
  CHECK(partial.params().get("mea.conv0.w").values() == m.params().get("mea.conv0.w").values());
  CHECK(partial.measurement_normalizer().mean == m.measurement_normalizer().mean);
  CHECK(partial.params().get("circ.gc0.w").values() != m.params().get("circ.gc0.w").values());
}

TEST_CASE("purity head fits on frozen representations") {
  const Corpus& c = tiny_corpus();
  const Split split = tiny_split();
  MCNet m(tiny_config(Fusion::Lrbp));
  m.fit_normalizers(c, c.states_of(split.train_circuits));
  const Tensor w = train_purity_head(m, Branch::Fused, c, split, 200, 1e-2);
  CHECK(w.rows() == 8);
  CHECK(w.cols() == 1);
  for (double v : w.values()) CHECK(std::isfinite(v));
}
