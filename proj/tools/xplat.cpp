// Command-line front end: gen, baseline, train, eval.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xplat/datapipe.hpp"
#include "xplat/error.hpp"
#include "xplat/format.hpp"
#include "xplat/mcnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitResource = 3;
constexpr int kExitNumeric = 4;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string config;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  return j;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& what) {
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown " + what + " key '" + k + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ResourceError("cannot create " + dir.string() + ": " + ec.message());
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ResourceError("cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw ResourceError("short write to " + path.string());
}

void write_resolved(const fs::path& dir, const std::string& command, const json& cfg) {
  write_file(dir / "resolved_config.json", json{{"command", command}, {"config", cfg}}.dump(2) + "\n");
}

std::string metrics_csv(const std::string& label, const MetricsReport& m) {
  std::ostringstream os;
  os << "name,count,mse,r2,rmse\n"
     << label << ',' << m.count << ',' << fmt_double(m.mse) << ',' << fmt_double(m.r2) << ',' << fmt_double(m.rmse)
     << '\n';
  return os.str();
}

// ---- gen --------------------------------------------------------------------

struct GenArgs {
  int qubits = 4, circuits = 60, levels = 6, shots = 200, layers = 8;
  std::string profile, out;
};

int run_gen(const Globals& g, const GenArgs& a, const CLI::App& sub) {
  json j = read_json(g.config);
  auto cfg = datapipe::BuildConfig::from_json(j);
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  if (given("--qubits") || !j.contains("n_qubits")) cfg.n_qubits = a.qubits;
  if (given("--circuits") || !j.contains("n_circuits")) cfg.n_circuits = a.circuits;
  if (given("--levels") || !j.contains("levels")) cfg.levels = a.levels;
  if (given("--shots") || !j.contains("m_shots")) cfg.m_shots = a.shots;
  if (given("--layers") || !j.contains("layers")) cfg.layers = a.layers;
  cfg.profile = a.profile;
  if (g.seed_opt->count() || !j.contains("seed")) cfg.seed = g.seed;
  if (g.threads_opt->count() || !j.contains("threads")) cfg.threads = g.threads;
  const auto manifest = datapipe::build_dataset(cfg, a.out);
  write_resolved(a.out, "gen", cfg.to_json());
  std::cout << "wrote " << manifest.at("record_index").size() << " records to " << a.out << "\n";
  return kExitOk;
}

// ---- baseline ---------------------------------------------------------------

struct BaselineArgs {
  std::string method, dataset, out;
  int shots_override = 0, settings = 20, shots_per_setting = 10;
  bool include_diagonal = false;
};

int run_baseline(const Globals& g, const BaselineArgs& a, const CLI::App& sub) {
  json j = read_json(g.config);
  reject_unknown(j, {"method", "shots_override", "include_diagonal", "settings", "shots_per_setting", "seed", "threads"},
                 "baseline config");
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  datapipe::BaselineConfig cfg;
  cfg.method = given("--method") || !j.contains("method") ? a.method : j.at("method").get<std::string>();
  cfg.shots_override = given("--shots-override") ? a.shots_override : j.value("shots_override", a.shots_override);
  cfg.include_diagonal =
      given("--include-diagonal") ? a.include_diagonal : j.value("include_diagonal", a.include_diagonal);
  cfg.settings = given("--settings") ? a.settings : j.value("settings", a.settings);
  cfg.shots_per_setting =
      given("--shots-per-setting") ? a.shots_per_setting : j.value("shots_per_setting", a.shots_per_setting);
  cfg.seed = g.seed_opt->count() ? g.seed : j.value("seed", g.seed);
  cfg.threads = g.threads_opt->count() ? g.threads : j.value("threads", g.threads);
  cfg.validate();

  const auto ds = datapipe::load_dataset(a.dataset);
  const auto rows = datapipe::run_baseline(ds, cfg);
  const fs::path out = a.out.empty() ? fs::path("baseline-" + cfg.method) : fs::path(a.out);
  ensure_dir(out);
  std::ostringstream csv;
  csv << "record_id,circuit_id,label,estimate,unreliable\n";
  std::vector<double> preds, labels;
  for (const auto& r : rows) {
    csv << r.record_id << ',' << r.circuit_id << ',' << fmt_double(r.label) << ',' << fmt_double(r.estimate) << ','
        << (r.unreliable ? 1 : 0) << '\n';
    preds.push_back(r.estimate);
    labels.push_back(r.label);
  }
  write_file(out / "estimates.csv", csv.str());
  const auto m = compute_metrics(preds, labels);
  write_file(out / "metrics.csv", metrics_csv(cfg.method, m));
  write_resolved(out, "baseline",
                 {{"method", cfg.method},
                  {"dataset", a.dataset},
                  {"shots_override", cfg.shots_override},
                  {"include_diagonal", cfg.include_diagonal},
                  {"settings", cfg.settings},
                  {"shots_per_setting", cfg.shots_per_setting},
                  {"seed", cfg.seed},
                  {"threads", cfg.threads}});
  std::cout << cfg.method << ": mse " << fmt_double(m.mse) << " r2 " << fmt_double(m.r2) << " over " << m.count
            << " records\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string dataset, stage = "all", out;
};

struct TrainSetup {
  mcnet::ModelConfig model;
  mcnet::TrainConfig train;
  double test_fraction = 0.2;
  bool noise_suffix = true;

  json to_json() const {
    return {{"model", model.to_json()},
            {"train", train.to_json()},
            {"test_fraction", test_fraction},
            {"noise_suffix", noise_suffix}};
  }
};

TrainSetup train_setup(const Globals& g) {
  const json j = read_json(g.config);
  reject_unknown(j, {"model", "train", "test_fraction", "noise_suffix"}, "train config");
  TrainSetup s;
  if (j.contains("model")) s.model = mcnet::ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) s.train = mcnet::TrainConfig::from_json(j.at("train"));
  s.test_fraction = j.value("test_fraction", s.test_fraction);
  s.noise_suffix = j.value("noise_suffix", s.noise_suffix);
  if (g.seed_opt->count() || !(j.contains("train") && j.at("train").contains("seed"))) s.train.seed = g.seed;
  if (g.seed_opt->count() || !(j.contains("model") && j.at("model").contains("seed"))) s.model.seed = g.seed;
  return s;
}

std::string history_csv(const std::vector<mcnet::EpochRecord>& h) {
  std::ostringstream os;
  os << "stage,epoch,train_loss,test_mse,test_r2\n";
  for (const auto& r : h)
    os << r.stage << ',' << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.test_mse) << ','
       << fmt_double(r.test_r2) << '\n';
  return os.str();
}

json split_json(const mcnet::Split& s) { return {{"train", s.train_circuits}, {"test", s.test_circuits}}; }

int run_train(const Globals& g, const TrainArgs& a) {
  static const std::set<std::string> stages{"all", "branch-mea", "branch-circ", "finetune"};
  if (!stages.contains(a.stage)) throw ConfigError("unknown stage '" + a.stage + "'");
  const auto setup = train_setup(g);
  const auto ds = datapipe::load_dataset(a.dataset);
  const auto corpus = datapipe::to_corpus(ds, setup.noise_suffix);
  const auto split = datapipe::split_by_circuit(corpus.circuit_ids(), setup.test_fraction, setup.train.seed);
  const auto model_cfg = datapipe::configure_for(setup.model, corpus);
  const fs::path out(a.out);
  ensure_dir(out);
  const json extra{{"split", split_json(split)}, {"noise_suffix", setup.noise_suffix}, {"dataset", a.dataset}};

  auto fresh = [&] {
    mcnet::MCNet m(model_cfg);
    m.fit_normalizers(corpus, corpus.states_of(split.train_circuits));
    return m;
  };
  auto branch_stage = [&](mcnet::Branch b, const std::string& name) {
    auto m = fresh();
    const auto h = mcnet::train_stage(m, b, corpus, split, setup.train.epochs_branch, setup.train.lr_branch, setup.train);
    m.save((out / name).string(), extra);
    write_file(out / ("history_" + name + ".csv"), history_csv(h));
    return h;
  };
  std::vector<mcnet::EpochRecord> all;
  auto append = [&all](const std::vector<mcnet::EpochRecord>& h) { all.insert(all.end(), h.begin(), h.end()); };
  if (a.stage == "all" || a.stage == "branch-mea") append(branch_stage(mcnet::Branch::Measurement, "branch-mea"));
  if (a.stage == "all" || a.stage == "branch-circ") append(branch_stage(mcnet::Branch::Circuit, "branch-circ"));
  if (a.stage == "all" || a.stage == "finetune") {
    for (const char* name : {"branch-mea", "branch-circ"})
      if (!fs::exists(out / (std::string(name) + ".json")))
        throw ConfigError(std::string("missing checkpoint ") + (out / name).string() + " (run --stage " + name +
                          " first)");
    auto m = fresh();
    m.load_prefix((out / "branch-mea").string(), "mea.");
    m.load_prefix((out / "branch-circ").string(), "circ.");
    const auto h = mcnet::train_stage(m, mcnet::Branch::Fused, corpus, split, setup.train.epochs_finetune,
                                      setup.train.lr_finetune, setup.train);
    m.save((out / "model").string(), extra);
    write_file(out / "history_finetune.csv", history_csv(h));
    append(h);
    const auto test = mcnet::evaluate(m, mcnet::Branch::Fused, corpus, split.test_circuits);
    write_file(out / "metrics.csv", metrics_csv("mcnet", test));
    std::cout << "test mse " << fmt_double(test.mse) << " r2 " << fmt_double(test.r2) << "\n";
  }
  if (a.stage == "all") write_file(out / "history.csv", history_csv(all));
  json resolved = setup.to_json();
  resolved["dataset"] = a.dataset;
  resolved["stage"] = a.stage;
  resolved["model"] = model_cfg.to_json();
  write_resolved(out, "train", resolved);
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string model, dataset, out = "eval", subset = "test", branch = "fused";
  bool emit_repr = false;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  if (!g.config.empty()) reject_unknown(read_json(g.config), {}, "eval config");
  if (a.subset != "test" && a.subset != "all") throw ConfigError("subset must be test or all");
  const auto branch = mcnet::branch_from_string(a.branch);
  if (!fs::exists(a.model + ".json")) throw ConfigError("no checkpoint at " + a.model);
  auto model = mcnet::MCNet::load(a.model);
  const json manifest = json::parse(std::ifstream(a.model + ".json"));
  const json extra = manifest.value("extra", json::object());
  const auto ds = datapipe::load_dataset(a.dataset);
  const auto corpus = datapipe::to_corpus(ds, extra.value("noise_suffix", true));
  std::vector<int> circuits = corpus.circuit_ids();
  if (a.subset == "test") {
    if (!extra.contains("split")) throw ConfigError("checkpoint records no split; use --subset all");
    circuits = extra.at("split").at("test").get<std::vector<int>>();
  }
  const auto pairs = corpus.pairs_of(circuits);
  const auto preds = mcnet::predict(model, branch, corpus, pairs);
  const fs::path out(a.out);
  ensure_dir(out);
  std::ostringstream csv;
  csv << "record_id,circuit_id,label,prediction\n";
  std::vector<double> labels;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = corpus.pairs[pairs[k]];
    csv << p.record_id << ',' << p.circuit_id << ',' << fmt_double(p.fidelity) << ',' << fmt_double(preds[k]) << '\n';
    labels.push_back(p.fidelity);
  }
  write_file(out / "predictions.csv", csv.str());
  const auto m = compute_metrics(preds, labels);
  write_file(out / "metrics.csv", metrics_csv(mcnet::to_string(branch), m));
  if (a.emit_repr) datapipe::export_representations(model, branch, corpus, (out / "representations.csv").string());
  write_resolved(out, "eval",
                 {{"model", a.model},
                  {"dataset", a.dataset},
                  {"subset", a.subset},
                  {"branch", a.branch},
                  {"emit_repr", a.emit_repr},
                  {"seed", g.seed}});
  std::cout << "mse " << fmt_double(m.mse) << " r2 " << fmt_double(m.r2) << " over " << m.count << " records\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-platform fidelity estimation: datasets, baselines and MC-Net training"};
  app.require_subcommand(1);
  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Root seed")->capture_default_str();
  g.threads_opt = app.add_option("--threads", g.threads, "Worker threads")->capture_default_str();
  app.add_option("--config", g.config, "JSON config; flags override its keys");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a dataset")->fallthrough();
  gen_cmd->add_option("--qubits", gen.qubits)->capture_default_str();
  gen_cmd->add_option("--circuits", gen.circuits)->capture_default_str();
  gen_cmd->add_option("--levels", gen.levels)->capture_default_str();
  gen_cmd->add_option("--shots", gen.shots)->capture_default_str();
  gen_cmd->add_option("--layers", gen.layers)->capture_default_str();
  gen_cmd->add_option("--profile", gen.profile, "Built-in profile name or profile JSON")->required();
  gen_cmd->add_option("--out", gen.out)->required();

  BaselineArgs base;
  auto* base_cmd = app.add_subcommand("baseline", "Random-measurement fidelity estimates")->fallthrough();
  base_cmd->add_option("--method", base.method, "cs or cc")->required();
  base_cmd->add_option("--dataset", base.dataset)->required();
  base_cmd->add_option("--out", base.out);
  base_cmd->add_option("--shots-override", base.shots_override, "cs: fresh snapshots of this size")
      ->capture_default_str();
  base_cmd->add_flag("--include-diagonal", base.include_diagonal, "cs: keep m == m' self-overlap terms");
  base_cmd->add_option("--settings", base.settings, "cc: random basis settings")->capture_default_str();
  base_cmd->add_option("--shots-per-setting", base.shots_per_setting, "cc: shots per setting")
      ->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train MC-Net")->fallthrough();
  train_cmd->add_option("--dataset", train.dataset)->required();
  train_cmd->add_option("--stage", train.stage, "all, branch-mea, branch-circ or finetune")->capture_default_str();
  train_cmd->add_option("--out", train.out)->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint")->fallthrough();
  eval_cmd->add_option("--model", ev.model, "Checkpoint prefix")->required();
  eval_cmd->add_option("--dataset", ev.dataset)->required();
  eval_cmd->add_option("--out", ev.out)->capture_default_str();
  eval_cmd->add_option("--subset", ev.subset, "test or all")->capture_default_str();
  eval_cmd->add_option("--branch", ev.branch, "measurement, circuit or fused")->capture_default_str();
  eval_cmd->add_flag("--emit-repr", ev.emit_repr, "Also write representations.csv");

  for (auto* sub : {gen_cmd, base_cmd, train_cmd, eval_cmd}) {
    sub->add_option("--config", g.config, "JSON config; flags override its keys");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen_cmd) return run_gen(g, gen, *gen_cmd);
    if (*base_cmd) return run_baseline(g, base, *base_cmd);
    if (*train_cmd) return run_train(g, train);
    if (*eval_cmd) return run_eval(g, ev);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ResourceError& e) {
    std::cerr << "resource error: " << e.what() << "\n";
    return kExitResource;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "resource error: " << e.what() << "\n";
    return kExitResource;
  }
  return kExitConfig;
}
