#include "xplat/datapipe.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "xplat/dagenc.hpp"
#include "xplat/error.hpp"
#include "xplat/format.hpp"
#include "xplat/qsim.hpp"
#include "xplat/shadows.hpp"

namespace xplat::datapipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kReferenceLevel = 0.01;

struct StateResult {
  double purity = 0.0;
  shadows::SnapshotSet snaps;
  std::uint64_t snapshot_seed = 0;
  dagenc::CircuitDag dag;
};

struct CircuitResult {
  circuits::Circuit logical;
  circuits::Circuit transpiled;
  std::vector<StateResult> states;
  std::vector<std::vector<double>> fidelity;  // level x level
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ResourceError("cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw ResourceError("short write to " + path.string() + " (disk full?)");
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string hex(const unsigned char* d, unsigned n) {
  std::ostringstream os;
  for (unsigned i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(d[i]);
  return os.str();
}

// Each CSV cell, split on commas; the files written here never quote.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s) {
  std::istringstream is(s);
  is.imbue(std::locale::classic());
  double v = 0.0;
  is >> v;
  if (is.fail()) throw ConfigError("bad number '" + s + "' in labels.csv");
  return v;
}

CircuitResult simulate_circuit(const BuildConfig& cfg, const circuits::DeviceProfile& base,
                               const std::vector<double>& levels, int cid) {
  CircuitResult r;
  SeededRng crng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(cid)));
  r.logical = circuits::sample_circuit(cfg.n_qubits, cfg.layers, crng);
  r.transpiled = circuits::transpile(r.logical, base);
  std::vector<qsim::DensityMatrix> rhos;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto prof = profile_at_level(base, levels[k]);
    rhos.push_back(qsim::run_circuit(r.transpiled, prof));
    StateResult s;
    s.purity = qsim::purity(rhos.back());
    s.snapshot_seed = derive_seed(cfg.seed, (static_cast<std::uint64_t>(cid) + 1) * 1000003ULL + k);
    SeededRng srng(s.snapshot_seed);
    shadows::SamplingOptions opts;
    opts.readout = &prof;
    s.snaps = shadows::measure_random_pauli(rhos.back(), cfg.m_shots, srng, opts);
    s.dag = dagenc::circuit_to_dag(r.transpiled, prof);
    r.states.push_back(std::move(s));
  }
  r.fidelity.assign(levels.size(), std::vector<double>(levels.size(), 1.0));
  for (std::size_t i = 0; i < levels.size(); ++i)
    for (std::size_t j = i + 1; j < levels.size(); ++j)
      r.fidelity[i][j] = r.fidelity[j][i] = qsim::cross_fidelity(rhos[i], rhos[j]);
  return r;
}

}  // namespace

// ---- Config -----------------------------------------------------------------

void BuildConfig::validate() const {
  if (n_qubits < 2) throw ConfigError("n_qubits must be >= 2");
  if (n_qubits > qsim::kMaxQubits)
    throw ResourceError("n_qubits " + std::to_string(n_qubits) + " exceeds the dense limit of " +
                        std::to_string(qsim::kMaxQubits));
  if (n_circuits < 1) throw ConfigError("n_circuits must be >= 1");
  if (levels < 2) throw ConfigError("need at least 2 noise levels");
  if (m_shots < 2) throw ConfigError("m_shots must be >= 2");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (!(level_min >= 0.0 && level_max <= 1.0 && level_min <= level_max))
    throw ConfigError("noise level range must satisfy 0 <= min <= max <= 1");
  if (profile.empty()) throw ConfigError("missing profile");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

json BuildConfig::to_json() const {
  return {{"n_qubits", n_qubits}, {"n_circuits", n_circuits}, {"levels", levels},   {"m_shots", m_shots},
          {"layers", layers},     {"profile", profile},       {"level_min", level_min}, {"level_max", level_max},
          {"seed", seed},         {"threads", threads}};
}

BuildConfig BuildConfig::from_json(const json& j) {
  static const std::set<std::string> known{"n_qubits", "n_circuits", "levels",    "m_shots", "layers",
                                           "profile",  "level_min",  "level_max", "seed",    "threads"};
  if (!j.is_object()) throw ConfigError("dataset config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown dataset config key '" + k + "'");
  BuildConfig c;
  c.n_qubits = j.value("n_qubits", c.n_qubits);
  c.n_circuits = j.value("n_circuits", c.n_circuits);
  c.levels = j.value("levels", c.levels);
  c.m_shots = j.value("m_shots", c.m_shots);
  c.layers = j.value("layers", c.layers);
  c.profile = j.value("profile", c.profile);
  c.level_min = j.value("level_min", c.level_min);
  c.level_max = j.value("level_max", c.level_max);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  return c;
}

circuits::DeviceProfile profile_at_level(const circuits::DeviceProfile& base, double level) {
  if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("noise level must lie in [0, 1]");
  circuits::DeviceProfile p = base;
  if (auto* dep = std::get_if<circuits::UniformDepolarizing>(&p.noise)) {
    dep->p = level;
  } else {
    auto& cal = std::get<circuits::CalibratedNoise>(p.noise);
    for (auto& [kind, err] : cal.gate_errors) err = std::min(1.0, err * level / kReferenceLevel);
  }
  return p;
}

circuits::DeviceProfile resolve_profile(const std::string& name_or_path, int n_qubits) {
  const auto names = circuits::builtin_profile_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end())
    return circuits::builtin_profile(name_or_path, n_qubits);
  if (!fs::exists(name_or_path))
    throw ConfigError("profile '" + name_or_path + "' is neither a built-in profile nor an existing file");
  auto p = circuits::load_profile(name_or_path);
  if (p.n_qubits != n_qubits)
    throw ConfigError("profile " + name_or_path + " has " + std::to_string(p.n_qubits) + " qubits, expected " +
                      std::to_string(n_qubits));
  return p;
}

std::string state_stem(int circuit_id, int level_index) {
  std::ostringstream os;
  os << 'c' << std::setw(4) << std::setfill('0') << circuit_id << "_l" << std::setw(2) << std::setfill('0')
     << level_index;
  return os.str();
}

// ---- Build ------------------------------------------------------------------

json build_dataset(const BuildConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const auto base = resolve_profile(cfg.profile, cfg.n_qubits);
  if (auto errs = circuits::validate_profile(base); !errs.empty()) throw ConfigError("invalid profile: " + errs.front());

  SeededRng lrng(derive_seed(cfg.seed, 1));
  std::vector<double> levels(static_cast<std::size_t>(cfg.levels));
  for (auto& l : levels) l = lrng.uniform(cfg.level_min, cfg.level_max);
  std::sort(levels.begin(), levels.end());

  std::vector<CircuitResult> results(static_cast<std::size_t>(cfg.n_circuits));
  {
    const int t = std::min(cfg.threads, cfg.n_circuits);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int c = w; c < cfg.n_circuits; c += t) results[c] = simulate_circuit(cfg, base, levels, c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "snapshots", ec);
  fs::create_directories(root / "dags", ec);
  if (ec) throw ResourceError("cannot create dataset directory " + out_dir + ": " + ec.message());

  std::vector<std::string> files;
  json circuits_json = json::array();
  for (int c = 0; c < cfg.n_circuits; ++c) {
    const auto& r = results[c];
    circuits_json.push_back(
        {{"circuit_id", c}, {"logical", circuits::to_json(r.logical)}, {"transpiled", circuits::to_json(r.transpiled)}});
    for (int k = 0; k < cfg.levels; ++k) {
      const auto& s = r.states[k];
      const std::string stem = state_stem(c, k);
      shadows::write_snapshots((root / "snapshots" / (stem + ".bin")).string(), s.snaps);
      const json side = shadows::to_json(shadows::Sidecar{s.snapshot_seed, base.name, c});
      write_text(root / "snapshots" / (stem + ".json"), side.dump(2) + "\n");
      write_text(root / "dags" / (stem + ".json"), dagenc::to_json(s.dag).dump() + "\n");
      files.push_back("snapshots/" + stem + ".bin");
      files.push_back("snapshots/" + stem + ".json");
      files.push_back("dags/" + stem + ".json");
    }
  }
  write_text(root / "circuits.json", circuits_json.dump(1) + "\n");
  files.push_back("circuits.json");

  std::ostringstream labels;
  labels << "record_id,circuit_id,level_i,level_j,fidelity,purity_i,purity_j\n";
  json record_index = json::array();
  int rid = 0;
  for (int c = 0; c < cfg.n_circuits; ++c) {
    const auto& r = results[c];
    for (int i = 0; i < cfg.levels; ++i)
      for (int j = i + 1; j < cfg.levels; ++j) {
        labels << rid << ',' << c << ',' << fmt_double(levels[i]) << ',' << fmt_double(levels[j]) << ','
               << fmt_double(r.fidelity[i][j]) << ',' << fmt_double(r.states[i].purity) << ','
               << fmt_double(r.states[j].purity) << '\n';
        record_index.push_back({{"record_id", rid},
                                {"circuit_id", c},
                                {"level_index_i", i},
                                {"level_index_j", j},
                                {"snapshots_i", "snapshots/" + state_stem(c, i) + ".bin"},
                                {"snapshots_j", "snapshots/" + state_stem(c, j) + ".bin"},
                                {"dag_i", "dags/" + state_stem(c, i) + ".json"},
                                {"dag_j", "dags/" + state_stem(c, j) + ".json"}});
        ++rid;
      }
  }
  write_text(root / "labels.csv", labels.str());
  files.push_back("labels.csv");

  json hashes = json::object();
  for (const auto& f : files) hashes[f] = sha256_file((root / f).string());
  std::vector<int> ids(static_cast<std::size_t>(cfg.n_circuits));
  for (int c = 0; c < cfg.n_circuits; ++c) ids[c] = c;
  json manifest{{"version", kDatasetVersion},
                {"seed", cfg.seed},
                {"n_qubits", cfg.n_qubits},
                {"m_shots", cfg.m_shots},
                {"layers", cfg.layers},
                {"profiles", {{"base", circuits::to_json(base)}, {"levels", levels}}},
                {"circuit_ids", ids},
                {"record_index", record_index},
                {"files", hashes}};
  write_text(root / "manifest.json", manifest.dump(1) + "\n");
  return manifest;
}

// ---- Load -------------------------------------------------------------------

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json")) throw ConfigError("no dataset at " + dir + " (manifest.json missing)");
  Dataset ds;
  ds.dir = dir;
  ds.manifest = json::parse(read_text(root / "manifest.json"));
  if (ds.manifest.value("version", 0) != kDatasetVersion)
    throw ConfigError("unsupported dataset version in " + dir);
  for (const auto& [file, digest] : ds.manifest.at("files").items()) {
    if (sha256_file((root / file).string()) != digest.get<std::string>())
      throw ConfigError("dataset file " + file + " does not match its manifest hash");
  }
  ds.base_profile = circuits::profile_from_json(ds.manifest.at("profiles").at("base"));
  ds.levels = ds.manifest.at("profiles").at("levels").get<std::vector<double>>();
  const json cj = json::parse(read_text(root / "circuits.json"));
  for (const auto& c : cj) ds.circuits.push_back(circuits::circuit_from_json(c.at("transpiled")));

  std::istringstream labels(read_text(root / "labels.csv"));
  std::string line;
  std::getline(labels, line);
  if (line != "record_id,circuit_id,level_i,level_j,fidelity,purity_i,purity_j")
    throw ConfigError("labels.csv has an unexpected header");
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 7) throw ConfigError("labels.csv row has " + std::to_string(cells.size()) + " cells");
    LabelRow r;
    r.record_id = std::stoi(cells[0]);
    r.circuit_id = std::stoi(cells[1]);
    r.level_i = parse_double(cells[2]);
    r.level_j = parse_double(cells[3]);
    r.fidelity = parse_double(cells[4]);
    r.purity_i = parse_double(cells[5]);
    r.purity_j = parse_double(cells[6]);
    ds.labels.push_back(r);
  }
  return ds;
}

mcnet::Corpus to_corpus(const Dataset& ds, bool noise_suffix) {
  const fs::path root(ds.dir);
  mcnet::Corpus corpus;
  corpus.n_qubits = ds.manifest.at("n_qubits").get<int>();
  const int n_levels = static_cast<int>(ds.levels.size());
  std::map<std::pair<int, int>, int> state_of;
  std::map<std::pair<int, int>, double> purity_of;
  for (const auto& l : ds.labels) {
    auto idx = [&](double level) {
      const auto it = std::find(ds.levels.begin(), ds.levels.end(), level);
      if (it == ds.levels.end()) throw ConfigError("labels.csv level not found in the manifest");
      return static_cast<int>(it - ds.levels.begin());
    };
    purity_of[{l.circuit_id, idx(l.level_i)}] = l.purity_i;
    purity_of[{l.circuit_id, idx(l.level_j)}] = l.purity_j;
  }
  for (int c : ds.manifest.at("circuit_ids").get<std::vector<int>>()) {
    for (int k = 0; k < n_levels; ++k) {
      const auto prof = profile_at_level(ds.base_profile, ds.levels[k]);
      const std::string stem = state_stem(c, k);
      mcnet::State s;
      s.circuit_id = c;
      s.level = ds.levels[k];
      s.device = ds.base_profile.name + "@" + fmt_double(ds.levels[k]);
      const auto snaps = shadows::read_snapshots((root / "snapshots" / (stem + ".bin")).string());
      s.records = static_cast<int>(snaps.size());
      s.features = mcnet::build_measurement_features(snaps, noise_suffix ? &prof : nullptr);
      s.dag = dagenc::dag_from_json(json::parse(read_text(root / "dags" / (stem + ".json"))));
      s.purity = purity_of.count({c, k}) ? purity_of.at({c, k}) : 0.0;
      state_of[{c, k}] = static_cast<int>(corpus.states.size());
      corpus.states.push_back(std::move(s));
    }
  }
  for (const auto& rec : ds.manifest.at("record_index")) {
    mcnet::Pair p;
    p.record_id = rec.at("record_id").get<int>();
    p.circuit_id = rec.at("circuit_id").get<int>();
    p.i = state_of.at({p.circuit_id, rec.at("level_index_i").get<int>()});
    p.j = state_of.at({p.circuit_id, rec.at("level_index_j").get<int>()});
    corpus.pairs.push_back(p);
  }
  std::map<int, double> fid;
  for (const auto& l : ds.labels) fid[l.record_id] = l.fidelity;
  for (auto& p : corpus.pairs) {
    if (!fid.count(p.record_id)) throw ConfigError("record " + std::to_string(p.record_id) + " has no label");
    p.fidelity = fid.at(p.record_id);
  }
  return corpus;
}

mcnet::Corpus sweep_corpus(const circuits::Circuit& transpiled, const circuits::DeviceProfile& base,
                           const std::vector<double>& levels, int m_shots, std::uint64_t seed, bool noise_suffix,
                           int circuit_id) {
  if (levels.size() < 2) throw ConfigError("a sweep needs at least 2 levels");
  if (m_shots < 1) throw ConfigError("m_shots must be >= 1");
  mcnet::Corpus corpus;
  corpus.n_qubits = transpiled.n_qubits;
  std::vector<qsim::DensityMatrix> rhos;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto prof = profile_at_level(base, levels[k]);
    rhos.push_back(qsim::run_circuit(transpiled, prof));
    SeededRng rng(derive_seed(seed, k));
    shadows::SamplingOptions opts;
    opts.readout = &prof;
    const auto snaps = shadows::measure_random_pauli(rhos.back(), m_shots, rng, opts);
    mcnet::State s;
    s.circuit_id = circuit_id;
    s.level = levels[k];
    s.device = base.name + "@" + fmt_double(levels[k]);
    s.records = m_shots;
    s.features = mcnet::build_measurement_features(snaps, noise_suffix ? &prof : nullptr);
    s.dag = dagenc::circuit_to_dag(transpiled, prof);
    s.purity = qsim::purity(rhos.back());
    corpus.states.push_back(std::move(s));
  }
  for (std::size_t k = 1; k < levels.size(); ++k)
    corpus.pairs.push_back({static_cast<int>(k - 1), circuit_id, 0, static_cast<int>(k),
                            qsim::cross_fidelity(rhos.front(), rhos[k])});
  return corpus;
}

mcnet::Split split_by_circuit(const std::vector<int>& circuit_ids, double test_fraction, std::uint64_t seed) {
  std::vector<int> ids(circuit_ids);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw ConfigError("a split needs at least 2 distinct circuits");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
  if (n_test < 1 || n_test >= ids.size())
    throw ConfigError("test fraction " + fmt_double(test_fraction) + " leaves an empty side with " +
                      std::to_string(ids.size()) + " circuits");
  SeededRng rng(derive_seed(seed, 0x5EEDULL));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
  mcnet::Split s;
  s.test_circuits.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train_circuits.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  std::sort(s.test_circuits.begin(), s.test_circuits.end());
  std::sort(s.train_circuits.begin(), s.train_circuits.end());
  return s;
}

std::size_t export_representations(mcnet::MCNet& model, mcnet::Branch branch, const mcnet::Corpus& corpus,
                                   const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ResourceError("cannot open " + path + " for writing");
  const int d = model.config().dim;
  f << "device,circuit_id,level";
  for (int k = 0; k < d; ++k) f << ",v" << k;
  f << '\n';
  std::size_t rows = 0;
  const auto ids = corpus.circuit_ids();
  for (std::size_t c = 0; c < ids.size(); c += 4) {
    const std::vector<int> chunk(ids.begin() + c, ids.begin() + std::min(ids.size(), c + 4));
    const auto states = corpus.states_of(chunk);
    const auto v = model.represent(branch, corpus, states, false);
    for (std::size_t r = 0; r < states.size(); ++r) {
      const auto& s = corpus.states[states[r]];
      f << s.device << ',' << s.circuit_id << ',' << fmt_double(s.level);
      for (int k = 0; k < d; ++k) f << ',' << fmt_double(v.at(static_cast<std::int64_t>(r), k));
      f << '\n';
      ++rows;
    }
  }
  if (!f) throw ResourceError("short write to " + path);
  return rows;
}

mcnet::ModelConfig configure_for(mcnet::ModelConfig cfg, const mcnet::Corpus& corpus) {
  if (corpus.states.empty()) throw ConfigError("corpus has no states");
  const auto& s = corpus.states.front();
  if (s.records < 1) throw ConfigError("state without measurement records");
  cfg.n_qubits = corpus.n_qubits;
  cfg.measurement_features = static_cast<int>(s.features.size()) / s.records;
  cfg.node_features = s.dag.feature_dim;
  return cfg;
}

void BaselineConfig::validate() const {
  if (method != "cs" && method != "cc") throw ConfigError("unknown baseline method '" + method + "' (cs|cc)");
  if (shots_override < 0 || shots_override == 1) throw ConfigError("shots override must be 0 or >= 2");
  if (settings < 1 || shots_per_setting < 1) throw ConfigError("cc needs settings >= 1 and shots per setting >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::vector<BaselineRow> run_baseline(const Dataset& ds, const BaselineConfig& cfg, const std::vector<int>& circuits) {
  cfg.validate();
  const fs::path root(ds.dir);
  std::vector<int> ids = circuits;
  if (ids.empty()) ids = ds.manifest.at("circuit_ids").get<std::vector<int>>();
  const int n = ds.manifest.at("n_qubits").get<int>();
  const int n_levels = static_cast<int>(ds.levels.size());
  std::map<int, std::vector<const LabelRow*>> rows_of;
  std::map<int, std::pair<int, int>> level_pair;
  for (const auto& rec : ds.manifest.at("record_index"))
    level_pair[rec.at("record_id").get<int>()] = {rec.at("level_index_i").get<int>(),
                                                   rec.at("level_index_j").get<int>()};
  for (const auto& l : ds.labels) rows_of[l.circuit_id].push_back(&l);

  SeededRng settings_rng(derive_seed(cfg.seed, 0xCC));
  const auto settings = shadows::random_settings(n, cfg.settings, settings_rng);
  const bool need_states = cfg.method == "cc" || cfg.shots_override > 0;

  std::vector<std::vector<BaselineRow>> per(ids.size());
  auto run_one = [&](std::size_t idx) {
    const int c = ids[idx];
    if (c < 0 || c >= static_cast<int>(ds.circuits.size()))
      throw ConfigError("circuit id " + std::to_string(c) + " not in dataset");
    std::vector<shadows::SnapshotSet> snaps(static_cast<std::size_t>(n_levels));
    std::vector<shadows::ProbTable> tables(static_cast<std::size_t>(n_levels));
    for (int k = 0; k < n_levels; ++k) {
      const auto prof = profile_at_level(ds.base_profile, ds.levels[k]);
      shadows::SamplingOptions opts;
      opts.readout = &prof;
      const std::uint64_t key = (static_cast<std::uint64_t>(c) + 1) * 1000003ULL + static_cast<std::uint64_t>(k);
      if (!need_states) {
        snaps[k] = shadows::read_snapshots((root / "snapshots" / (state_stem(c, k) + ".bin")).string());
        continue;
      }
      const auto rho = qsim::run_circuit(ds.circuits[c], prof);
      SeededRng rng(derive_seed(cfg.seed ^ 0xB45E11AEULL, key));
      if (cfg.method == "cs")
        snaps[k] = shadows::measure_random_pauli(rho, cfg.shots_override, rng, opts);
      else
        tables[k] = shadows::sampled_table(rho, settings, cfg.shots_per_setting, rng, opts);
    }
    const auto found = rows_of.find(c);
    if (found == rows_of.end()) return;
    for (const LabelRow* l : found->second) {
      const auto [i, j] = level_pair.at(l->record_id);
      const auto est = cfg.method == "cs" ? shadows::cs_fidelity(snaps[i], snaps[j], cfg.include_diagonal)
                                          : shadows::cc_fidelity(tables[i], tables[j]);
      per[idx].push_back({l->record_id, c, l->fidelity, est.value, est.unreliable});
    }
  };

  const int t = std::max(1, std::min<int>(cfg.threads, static_cast<int>(ids.size())));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(t));
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t idx = static_cast<std::size_t>(w); idx < ids.size(); idx += static_cast<std::size_t>(t))
          run_one(idx);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<BaselineRow> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  std::sort(out.begin(), out.end(), [](const BaselineRow& a, const BaselineRow& b) { return a.record_id < b.record_id; });
  return out;
}

std::string sha256_bytes(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("SHA-256 computation failed");
  return hex(md, len);
}

std::string sha256_file(const std::string& path) { return sha256_bytes(read_text(path)); }

}  // namespace xplat::datapipe
