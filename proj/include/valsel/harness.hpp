// Experiment orchestration: crossed design planning, run execution,
// trajectory persistence, analysis and report emission.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "valsel/criteria.hpp"
#include "valsel/datapipe.hpp"
#include "valsel/numkernel.hpp"
#include "valsel/selector.hpp"
#include "valsel/shallownet.hpp"
#include "valsel/stattests.hpp"

namespace valsel {

namespace fs = std::filesystem;
using nlohmann::json;

/// Invalid experiment configuration; the message lists every problem found.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct DatasetEntry {
  std::string id;
  std::string csv;     // as written in the config
  std::string schema;  // empty: inferred, last column is the target

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

inline const std::vector<double> kDefaultRatios = {0.3, 0.5, 0.7, 0.8, 1.0, 1.2, 5.0, 10.0, 50.0};

struct ExperimentConfig {
  std::vector<DatasetEntry> datasets;
  std::size_t folds = 10;
  double val_fraction = 0.15;
  std::vector<double> ratios = kDefaultRatios;
  std::vector<LossKind> losses = {LossKind::CE, LossKind::CLoss, LossKind::Poly1};
  double sigma = 0.5;
  double beta = 1.0;
  double epsilon = 1.0;
  std::vector<Criterion> criteria = {std::begin(kAllCriteria), std::end(kAllCriteria)};
  std::vector<Regime> regimes = {Regime::early_stop(10), Regime::early_stop(50), Regime::post_hoc()};
  double lr = 0.01;
  std::size_t batch = 64;
  int epochs = 20000;
  int perfect_fit_window = 10;  // 0 turns the post-hoc truncation off
  std::uint64_t seed = 20240917;
  double alpha = 0.05;
  std::vector<double> alpha_grid = {0.001, 0.01, 0.05, 0.1, 0.2};
  std::optional<double> gate_alpha;
  std::string output_dir = "runs";
  std::size_t workers = 1;
  std::string base_dir;  // directory of the config file; not serialized

  LossSpec loss_spec(LossKind k) const { return LossSpec{k, sigma, beta, epsilon}; }

  std::vector<SelectionRule> rules() const { return make_rules(criteria, regimes); }

  std::string resolve(const std::string& path) const {
    if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    std::set<std::string> ids;
    for (const auto& d : datasets) {
      if (d.id.empty()) out.push_back("datasets: entry with empty id");
      if (d.csv.empty()) out.push_back("datasets[" + d.id + "]: csv path missing");
      if (!ids.insert(d.id).second) out.push_back("datasets: duplicate id '" + d.id + "'");
    }
    if (folds < 2) out.push_back("folds: must be >= 2");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) out.push_back("val_fraction: must be in (0, 1)");
    if (ratios.empty()) out.push_back("ratios: empty");
    for (double r : ratios)
      if (!(r > 0.0) || !std::isfinite(r)) out.push_back("ratios: values must be finite and > 0");
    if (std::set<double>(ratios.begin(), ratios.end()).size() != ratios.size())
      out.push_back("ratios: duplicate value");
    if (losses.empty()) out.push_back("losses: empty");
    if (std::set<LossKind>(losses.begin(), losses.end()).size() != losses.size())
      out.push_back("losses: duplicate value");
    if (!(sigma > 0.0)) out.push_back("loss_params.sigma: must be > 0");
    if (!(beta > 0.0)) out.push_back("loss_params.beta: must be > 0");
    if (!(epsilon >= 0.0)) out.push_back("loss_params.epsilon: must be >= 0");
    if (criteria.empty()) out.push_back("criteria: empty");
    if (regimes.empty()) out.push_back("regimes: empty");
    if (!(lr > 0.0)) out.push_back("train.lr: must be > 0");
    if (batch < 1) out.push_back("train.batch: must be >= 1");
    if (epochs < 1) out.push_back("train.epochs: must be >= 1");
    if (perfect_fit_window < 0) out.push_back("perfect_fit_window: must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) out.push_back("alpha: must be in (0, 1)");
    for (double a : alpha_grid)
      if (!(a > 0.0 && a < 1.0)) out.push_back("alpha_grid: values must be in (0, 1)");
    if (gate_alpha && !(*gate_alpha > 0.0 && *gate_alpha < 1.0))
      out.push_back("normality_gate_alpha: must be in (0, 1)");
    if (workers < 1) out.push_back("workers: must be >= 1");
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& s : p) msg += "\n  - " + s;
    throw ConfigError(msg);
  }

  /// Every field that influences results. Output location and worker count
  /// are left out so they never change the hash.
  json design_json() const {
    json j;
    j["datasets"] = json::array();
    for (const auto& d : datasets) j["datasets"].push_back({{"id", d.id}, {"csv", d.csv}, {"schema", d.schema}});
    j["folds"] = folds;
    j["val_fraction"] = val_fraction;
    j["ratios"] = ratios;
    j["losses"] = json::array();
    for (auto k : losses) j["losses"].push_back(std::string(to_string(k)));
    j["loss_params"] = {{"sigma", sigma}, {"beta", beta}, {"epsilon", epsilon}};
    j["criteria"] = json::array();
    for (auto c : criteria) j["criteria"].push_back(std::string(to_string(c)));
    j["regimes"] = json::array();
    for (const auto& g : regimes) j["regimes"].push_back(g.label());
    j["train"] = {{"lr", lr}, {"batch", batch}, {"epochs", epochs}};
    j["perfect_fit_window"] = perfect_fit_window;
    j["seed"] = seed;
    j["alpha"] = alpha;
    j["alpha_grid"] = alpha_grid;
    j["normality_gate_alpha"] = gate_alpha ? json(*gate_alpha) : json(nullptr);
    return j;
  }

  json to_json() const {
    json j = design_json();
    j["output_dir"] = output_dir;
    j["workers"] = workers;
    return j;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, detail::fnv1a64(design_json().dump()));
    return buf;
  }

  static ExperimentConfig from_json(const json& j, std::string base_dir = {}) {
    if (!j.is_object()) throw ConfigError("invalid config: expected a JSON object");
    static const std::set<std::string> known = {
        "datasets", "folds",     "val_fraction", "ratios",     "losses",
        "loss_params", "criteria", "regimes",   "train",      "perfect_fit_window",
        "seed",     "alpha",     "alpha_grid",  "normality_gate_alpha", "output_dir",
        "workers",  "$schema",   "description"};
    ExperimentConfig c;
    c.base_dir = std::move(base_dir);
    std::vector<std::string> errs;
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) errs.push_back("unknown field '" + k + "'");

    auto field = [&](const char* name, auto&& apply) {
      if (!j.contains(name)) return;
      try {
        apply(j.at(name));
      } catch (const std::exception& e) {
        errs.push_back(std::string(name) + ": " + e.what());
      }
    };
    field("datasets", [&](const json& v) {
      c.datasets.clear();
      for (const auto& d : v) {
        DatasetEntry e{d.at("id").get<std::string>(), d.at("csv").get<std::string>(),
                       d.value("schema", std::string{})};
        c.datasets.push_back(std::move(e));
      }
    });
    field("folds", [&](const json& v) { c.folds = v.get<std::size_t>(); });
    field("val_fraction", [&](const json& v) { c.val_fraction = v.get<double>(); });
    field("ratios", [&](const json& v) { c.ratios = v.get<std::vector<double>>(); });
    field("losses", [&](const json& v) {
      c.losses.clear();
      for (const auto& s : v) c.losses.push_back(loss_kind_from_string(s.get<std::string>()));
    });
    field("loss_params", [&](const json& v) {
      c.sigma = v.value("sigma", c.sigma);
      c.beta = v.value("beta", c.beta);
      c.epsilon = v.value("epsilon", c.epsilon);
    });
    field("criteria", [&](const json& v) {
      c.criteria.clear();
      for (const auto& s : v) c.criteria.push_back(criterion_from_string(s.get<std::string>()));
    });
    field("regimes", [&](const json& v) {
      c.regimes.clear();
      for (const auto& s : v) {
        if (s.is_number_integer()) c.regimes.push_back(Regime::early_stop(s.get<int>()));
        else if (s.is_null()) c.regimes.push_back(Regime::post_hoc());
        else c.regimes.push_back(regime_from_string(s.get<std::string>()));
      }
    });
    field("train", [&](const json& v) {
      c.lr = v.value("lr", c.lr);
      c.batch = v.value("batch", c.batch);
      c.epochs = v.value("epochs", c.epochs);
    });
    field("perfect_fit_window", [&](const json& v) { c.perfect_fit_window = v.get<int>(); });
    field("seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); });
    field("alpha", [&](const json& v) { c.alpha = v.get<double>(); });
    field("alpha_grid", [&](const json& v) { c.alpha_grid = v.get<std::vector<double>>(); });
    field("normality_gate_alpha", [&](const json& v) {
      if (v.is_null()) c.gate_alpha.reset();
      else c.gate_alpha = v.get<double>();
    });
    field("output_dir", [&](const json& v) { c.output_dir = v.get<std::string>(); });
    field("workers", [&](const json& v) { c.workers = v.get<std::size_t>(); });

    for (auto& p : c.problems()) errs.push_back(std::move(p));
    if (!errs.empty()) {
      std::string msg = "invalid config:";
      for (const auto& s : errs) msg += "\n  - " + s;
      throw ConfigError(msg);
    }
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path + "': " + e.what());
    }
    auto cfg = from_json(j, fs::path(path).parent_path().string());
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Run keys

/// Shortest "%g"-style rendering used in file names and seed labels.
inline std::string format_ratio(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", r);
  return buf;
}

struct RunKey {
  std::string dataset;
  int fold = 0;
  LossSpec loss;
  double ratio = 1.0;

  std::string label() const {
    char fold_buf[16];
    std::snprintf(fold_buf, sizeof fold_buf, "%02d", fold);
    return dataset + "__fold" + fold_buf + "__" + std::string(to_string(loss.kind)) + "__r" +
           format_ratio(ratio);
  }

  json to_json() const {
    return {{"dataset", dataset},
            {"fold", fold},
            {"loss", {{"kind", std::string(to_string(loss.kind))},
                      {"sigma", loss.sigma},
                      {"beta", loss.beta},
                      {"epsilon", loss.epsilon}}},
            {"ratio", ratio}};
  }

  static RunKey from_json(const json& j) {
    RunKey k;
    k.dataset = j.at("dataset").get<std::string>();
    k.fold = j.at("fold").get<int>();
    const auto& l = j.at("loss");
    k.loss = LossSpec{loss_kind_from_string(l.at("kind").get<std::string>()), l.at("sigma").get<double>(),
                      l.at("beta").get<double>(), l.at("epsilon").get<double>()};
    k.ratio = j.at("ratio").get<double>();
    return k;
  }

  friend bool operator==(const RunKey&, const RunKey&) = default;
};

/// Datasets x folds x losses x ratios, in that nesting order.
inline std::vector<RunKey> plan_runs(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<RunKey> keys;
  keys.reserve(cfg.datasets.size() * cfg.folds * cfg.losses.size() * cfg.ratios.size());
  for (const auto& d : cfg.datasets)
    for (std::size_t f = 0; f < cfg.folds; ++f)
      for (LossKind l : cfg.losses)
        for (double r : cfg.ratios) keys.push_back({d.id, static_cast<int>(f), cfg.loss_spec(l), r});
  return keys;
}

struct RunSeeds {
  Rng folds;
  Rng holdout;
  std::uint64_t train = 0;
};

/// Fold plans depend on (root, dataset); the holdout on (root, dataset,
/// fold); training on the whole key.
inline RunSeeds derive_seeds(std::uint64_t root_seed, const RunKey& key) {
  const Rng ds = Rng(root_seed).derive("dataset:" + key.dataset);
  const Rng fold = ds.derive("fold:" + std::to_string(key.fold));
  const Rng train = fold.derive("loss:" + std::string(to_string(key.loss.kind)))
                        .derive("r:" + format_ratio(key.ratio));
  return {ds.derive("folds"), fold.derive("holdout"), train.seed()};
}

// ---------------------------------------------------------------------------
// Run records

enum class RunStatus { Ok, Diverged, Aborted };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::Aborted: return "aborted";
  }
  return "?";
}

inline RunStatus run_status_from_string(std::string_view s) {
  if (s == "ok") return RunStatus::Ok;
  if (s == "diverged") return RunStatus::Diverged;
  if (s == "aborted") return RunStatus::Aborted;
  throw DataError("unknown run status '" + std::string(s) + "'");
}

struct RunRecord {
  RunKey key;
  ModelConfig model;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Ok;
  std::string message;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  Trajectory trajectory;
  double seconds = 0.0;  // persisted separately from the trajectory
};

/// A dataset loaded once and shared read-only by every run on it.
struct LoadedDataset {
  DatasetEntry entry;
  Dataset data;
  FoldPlan plan;
  double gdv = 0.0;
};

inline LoadedDataset load_entry(const ExperimentConfig& cfg, const DatasetEntry& e) {
  const std::string csv = cfg.resolve(e.csv);
  const Schema schema = e.schema.empty() ? infer_schema(csv) : Schema::load(cfg.resolve(e.schema));
  LoadedDataset ld{e, load_dataset(csv, schema, e.id), {}, 0.0};
  RunKey probe;
  probe.dataset = e.id;
  ld.plan = stratified_kfold(ld.data, cfg.folds, derive_seeds(cfg.seed, probe).folds);
  ld.gdv = gdv(ld.data);
  return ld;
}

/// Fold split, stratified holdout, train-only z-score, width for r, training.
/// `mutate_split` lets callers alter the raw rows of the split before
/// normalization (used by the leakage checks).
inline RunRecord execute_run(const RunKey& key, const ExperimentConfig& cfg, const LoadedDataset& ld,
                             const std::function<void(Dataset&, const SplitIndices&)>& mutate_split = {}) {
  const auto seeds = derive_seeds(cfg.seed, key);
  RunRecord rec;
  rec.key = key;
  rec.seed = seeds.train;
  const auto t0 = std::chrono::steady_clock::now();

  const SplitIndices idx = fold_split(ld.plan, static_cast<std::size_t>(key.fold), ld.data.y,
                                      cfg.val_fraction, seeds.holdout);
  PreparedSplit split;
  if (mutate_split) {
    Dataset copy = ld.data;
    mutate_split(copy, idx);
    split = prepare_split(copy, idx);
  } else {
    split = prepare_split(ld.data, idx);
  }
  rec.n_train = idx.train.size();
  rec.n_val = idx.val.size();
  rec.n_test = idx.test.size();

  const std::size_t d = ld.data.X.cols();
  const std::size_t k = static_cast<std::size_t>(ld.data.num_classes);
  rec.model = ModelConfig{d, hidden_size_for_ratio(key.ratio, d, k, rec.n_train), k};

  TrainConfig tc;
  tc.lr = cfg.lr;
  tc.batch = cfg.batch;
  tc.max_epochs = cfg.epochs;
  tc.seed = seeds.train;
  RunMeta meta{key.dataset, key.fold, key.loss, key.ratio, seeds.train};
  try {
    rec.trajectory = run_training(split, key.loss, rec.model, tc, meta);
  } catch (const DivergenceError& e) {
    rec.status = RunStatus::Diverged;
    rec.message = e.what();
    rec.trajectory = e.partial();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Persistence

inline json header_json(const RunRecord& r) {
  return {{"run_key", r.key.to_json()},
          {"model_config", {{"input_dim", r.model.input_dim},
                            {"hidden", r.model.hidden},
                            {"classes", r.model.classes},
                            {"param_count", r.model.param_count()}}},
          {"seed", r.seed},
          {"status", std::string(to_string(r.status))},
          {"message", r.message},
          {"split", {{"train", r.n_train}, {"val", r.n_val}, {"test", r.n_test}}},
          {"epochs", r.trajectory.length()}};
}

inline json epoch_json(const EpochRecord& e) {
  return {{"e", e.epoch},
          {"val_ce", e.val.ce},     {"val_closs", e.val.closs},   {"val_poly1", e.val.poly1},
          {"val_acc", e.val.acc},   {"test_ce", e.test.ce},       {"test_closs", e.test.closs},
          {"test_poly1", e.test.poly1}, {"test_acc", e.test.acc}, {"train_acc", e.train_acc}};
}

/// Writes `text` to `path` through a temporary file and a rename so a
/// crash never leaves a truncated file under the final name.
inline void atomic_write(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string trajectory_jsonl(const RunRecord& r) {
  std::string s = header_json(r).dump() + "\n";
  for (const auto& e : r.trajectory.epochs) s += epoch_json(e).dump() + "\n";
  return s;
}

inline fs::path trajectory_path(const fs::path& runs_dir, const RunKey& k) {
  return runs_dir / "trajectories" / (k.label() + ".jsonl");
}

inline void persist_run(const fs::path& runs_dir, const RunRecord& r) {
  fs::create_directories(runs_dir / "trajectories");
  fs::create_directories(runs_dir / "meta");
  atomic_write(trajectory_path(runs_dir, r.key), trajectory_jsonl(r));
  json meta = {{"run", r.key.label()}, {"seconds", r.seconds}};
  atomic_write(runs_dir / "meta" / (r.key.label() + ".json"), meta.dump() + "\n");
}

inline RunRecord read_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  RunRecord r;
  std::string line;
  std::size_t lineno = 0;
  try {
    if (!std::getline(in, line)) throw DataError("empty trajectory file");
    ++lineno;
    const json h = json::parse(line);
    r.key = RunKey::from_json(h.at("run_key"));
    const auto& m = h.at("model_config");
    r.model = {m.at("input_dim").get<std::size_t>(), m.at("hidden").get<std::size_t>(),
               m.at("classes").get<std::size_t>()};
    r.seed = h.at("seed").get<std::uint64_t>();
    r.status = run_status_from_string(h.at("status").get<std::string>());
    r.message = h.value("message", std::string{});
    if (h.contains("split")) {
      r.n_train = h["split"].value("train", std::size_t{0});
      r.n_val = h["split"].value("val", std::size_t{0});
      r.n_test = h["split"].value("test", std::size_t{0});
    }
    r.trajectory.meta = {r.key.dataset, r.key.fold, r.key.loss, r.key.ratio, r.seed};
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::blank(line)) continue;
      const json e = json::parse(line);
      EpochRecord rec;
      rec.epoch = e.at("e").get<int>();
      rec.val = {e.at("val_ce").get<double>(), e.at("val_closs").get<double>(),
                 e.at("val_poly1").get<double>(), e.at("val_acc").get<double>()};
      rec.test = {e.at("test_ce").get<double>(), e.at("test_closs").get<double>(),
                  e.at("test_poly1").get<double>(), e.at("test_acc").get<double>()};
      rec.train_acc = e.at("train_acc").get<double>();
      r.trajectory.epochs.push_back(rec);
    }
    if (h.contains("epochs") && h["epochs"].get<std::size_t>() != r.trajectory.length())
      throw DataError("epoch count does not match header (truncated file?)");
  } catch (const json::exception& e) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return r;
}

/// Every trajectory under `runs_dir`, sorted by run label.
inline std::vector<RunRecord> load_runs(const fs::path& runs_dir) {
  const fs::path dir = runs_dir / "trajectories";
  if (!fs::is_directory(dir)) throw DataError("no trajectories directory in '" + runs_dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& ent : fs::directory_iterator(dir))
    if (ent.path().extension() == ".jsonl") files.push_back(ent.path());
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_trajectory(f));
  return out;
}

struct DatasetInfo {
  std::string id;
  double gdv = 0.0;
  std::size_t instances = 0;
  std::size_t features = 0;
  int classes = 0;
  std::size_t dropped_missing = 0;
};

inline json datasets_json(const std::vector<DatasetInfo>& v) {
  json j = json::array();
  for (const auto& d : v)
    j.push_back({{"id", d.id}, {"gdv", d.gdv}, {"instances", d.instances},
                 {"features", d.features}, {"classes", d.classes}});
  return j;
}

inline std::vector<DatasetInfo> datasets_from_json(const json& j) {
  std::vector<DatasetInfo> v;
  for (const auto& d : j)
    v.push_back({d.at("id").get<std::string>(), d.at("gdv").get<double>(),
                 d.value("instances", std::size_t{0}), d.value("features", std::size_t{0}),
                 d.value("classes", 0), 0});
  return v;
}

// ---------------------------------------------------------------------------
// Execution

struct RunSummary {
  std::size_t planned = 0;
  std::size_t executed = 0;
  std::size_t skipped = 0;  // already on disk with --resume
  std::size_t ok = 0;
  std::size_t diverged = 0;
  std::size_t aborted = 0;
  std::vector<std::string> errors;
};

using ProgressFn = std::function<void(const RunRecord&, std::size_t done, std::size_t total)>;

/// Runs the whole plan with `cfg.workers` threads pulling keys off a shared
/// counter. Each run writes only its own files, so the output is identical
/// for any worker count.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, bool resume,
                                 const ProgressFn& progress = {}) {
  cfg.validate();
  std::vector<LoadedDataset> loaded;
  std::vector<DatasetInfo> infos;
  for (const auto& e : cfg.datasets) {
    loaded.push_back(load_entry(cfg, e));
    const auto& d = loaded.back().data;
    infos.push_back({e.id, loaded.back().gdv, d.size(), d.X.cols(), d.num_classes, 0});
  }
  std::map<std::string, const LoadedDataset*> by_id;
  for (const auto& l : loaded) by_id[l.entry.id] = &l;

  fs::create_directories(out_dir / "trajectories");
  fs::create_directories(out_dir / "meta");
  atomic_write(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
  atomic_write(out_dir / "datasets.json", datasets_json(infos).dump(2) + "\n");

  const auto keys = plan_runs(cfg);
  RunSummary sum;
  sum.planned = keys.size();
  std::vector<RunStatus> status(keys.size(), RunStatus::Ok);
  std::vector<char> done(keys.size(), 0);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{0};
  std::mutex mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= keys.size()) return;
      const auto& key = keys[i];
      const fs::path path = trajectory_path(out_dir, key);
      if (resume && fs::exists(path)) {
        try {
          const RunRecord prev = read_trajectory(path);
          status[i] = prev.status;
          done[i] = 2;
          finished.fetch_add(1);
          continue;
        } catch (const DataError&) {
          // unreadable leftovers are recomputed
        }
      }
      try {
        RunRecord r = execute_run(key, cfg, *by_id.at(key.dataset));
        persist_run(out_dir, r);
        status[i] = r.status;
        done[i] = 1;
        const std::size_t n = finished.fetch_add(1) + 1;
        if (progress) {
          std::lock_guard lock(mu);
          progress(r, n, keys.size());
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        status[i] = RunStatus::Aborted;
        done[i] = 1;
        finished.fetch_add(1);
        sum.errors.push_back(key.label() + ": " + e.what());
      }
    }
  };

  const std::size_t n_threads = std::min<std::size_t>(cfg.workers, std::max<std::size_t>(keys.size(), 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (done[i] == 2) ++sum.skipped;
    else ++sum.executed;
    switch (status[i]) {
      case RunStatus::Ok: ++sum.ok; break;
      case RunStatus::Diverged: ++sum.diverged; break;
      case RunStatus::Aborted: ++sum.aborted; break;
    }
  }
  std::sort(sum.errors.begin(), sum.errors.end());
  return sum;
}

// ---------------------------------------------------------------------------
// Analysis

struct HeatmapCell {
  std::string dataset;
  double gdv = 0.0;
  double ratio = 1.0;
  LossKind training_loss = LossKind::CE;
  SelectionRule rule;
  std::size_t n_folds = 0;
  TestOutcome outcome;
};

/// One rule applied to one run.
struct SelectionRow {
  std::string run;
  SelectionResult result;
};

struct ReportBundle {
  std::string config_hash;
  double alpha = 0.05;
  std::vector<double> alpha_grid;
  std::optional<double> gate_alpha;
  std::vector<SelectionRule> rules;
  std::vector<DatasetInfo> datasets;  // ascending separability: GDV descending
  std::vector<HeatmapCell> heatmap;
  std::vector<KeyedOutcome> outcomes;
  std::vector<AcceptanceRow> acceptance;
  std::vector<SweepPoint> alpha_points;
  std::vector<SweepPoint> ratio_points;
  std::vector<SelectionRow> selections;
  std::size_t runs_total = 0, runs_ok = 0, runs_diverged = 0, runs_aborted = 0;
  std::size_t groups_analyzed = 0, groups_skipped = 0;
  std::vector<std::string> notices;
};

struct AnalysisOptions {
  double alpha = 0.05;
  std::vector<double> alpha_grid = {0.001, 0.01, 0.05, 0.1, 0.2};
  std::optional<double> gate_alpha;
  std::vector<SelectionRule> rules = default_rules();
  int perfect_fit_window = 10;
  std::size_t min_folds = 3;
  std::string config_hash;

  static AnalysisOptions from_config(const ExperimentConfig& cfg) {
    return {cfg.alpha, cfg.alpha_grid, cfg.gate_alpha, cfg.rules(), cfg.perfect_fit_window, 3, cfg.hash()};
  }
};

/// Less separable first (GDV closer to zero), then by id.
inline void order_by_separability(std::vector<DatasetInfo>& v) {
  std::stable_sort(v.begin(), v.end(), [](const DatasetInfo& a, const DatasetInfo& b) {
    if (a.gdv != b.gdv) return a.gdv > b.gdv;
    return a.id < b.id;
  });
}

/// Pure function of the records: replays every rule on every ok trajectory,
/// pairs selected and test-optimal accuracy across folds per (dataset, loss,
/// r, rule) and runs the comparison test.
inline ReportBundle analyze(std::span<const RunRecord> records, std::vector<DatasetInfo> datasets,
                            const AnalysisOptions& opt) {
  ReportBundle b;
  b.config_hash = opt.config_hash;
  b.alpha = opt.alpha;
  b.alpha_grid = opt.alpha_grid;
  b.gate_alpha = opt.gate_alpha;
  b.rules = opt.rules;

  std::set<std::string> known;
  for (const auto& d : datasets) known.insert(d.id);
  for (const auto& r : records)
    if (!known.count(r.key.dataset)) {
      datasets.push_back({r.key.dataset, 0.0, 0, 0, 0, 0});
      known.insert(r.key.dataset);
      b.notices.push_back("dataset '" + r.key.dataset + "' has no GDV entry; using 0");
    }
  order_by_separability(datasets);
  b.datasets = datasets;
  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < datasets.size(); ++i) rank[datasets[i].id] = i;
  std::map<std::string, double> gdv_of;
  for (const auto& d : datasets) gdv_of[d.id] = d.gdv;

  using GroupKey = std::tuple<std::size_t, LossKind, double>;
  std::map<GroupKey, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    ++b.runs_total;
    if (r.status == RunStatus::Diverged) ++b.runs_diverged;
    if (r.status == RunStatus::Aborted) ++b.runs_aborted;
    if (r.status != RunStatus::Ok) continue;
    ++b.runs_ok;
    groups[{rank.at(r.key.dataset), r.key.loss.kind, r.key.ratio}].push_back(&r);
  }
  if (b.runs_diverged > 0)
    b.notices.push_back(std::to_string(b.runs_diverged) + " diverged run(s) excluded from analysis");

  const CrossedOptions copt{opt.perfect_fit_window};
  for (auto& [gk, runs] : groups) {
    std::sort(runs.begin(), runs.end(),
              [](const RunRecord* a, const RunRecord* c) { return a->key.fold < c->key.fold; });
    const auto& id = datasets[std::get<0>(gk)].id;
    if (runs.size() < opt.min_folds) {
      ++b.groups_skipped;
      b.notices.push_back("skipped " + id + "/" + std::string(to_string(std::get<1>(gk))) + "/r=" +
                          format_ratio(std::get<2>(gk)) + ": " + std::to_string(runs.size()) +
                          " ok fold(s) < " + std::to_string(opt.min_folds));
      continue;
    }
    ++b.groups_analyzed;
    std::vector<PairedSample> samples(opt.rules.size());
    for (const RunRecord* r : runs) {
      const auto results = crossed_selection(r->trajectory, opt.rules, copt);
      for (std::size_t i = 0; i < results.size(); ++i) {
        samples[i].selected.push_back(results[i].selected_test_acc);
        samples[i].optimal.push_back(results[i].optimal_test_acc);
        b.selections.push_back({r->key.label(), results[i]});
      }
    }
    for (std::size_t i = 0; i < opt.rules.size(); ++i) {
      TestOutcome o = decide(compare_to_optimal(samples[i], opt.alpha), opt.alpha, opt.gate_alpha);
      b.heatmap.push_back({id, gdv_of[id], std::get<2>(gk), std::get<1>(gk), opt.rules[i], runs.size(), o});
      b.outcomes.push_back({id, std::get<2>(gk), std::get<1>(gk), opt.rules[i], o});
    }
  }
  b.acceptance = acceptance_rate(b.outcomes);
  b.alpha_points = alpha_sweep(b.outcomes, b.alpha_grid, b.gate_alpha);
  b.ratio_points = ratio_breakdown(b.outcomes);
  return b;
}

/// Loads the persisted run directory and analyzes it with the config stored
/// alongside the trajectories.
inline ReportBundle analyze_dir(const fs::path& runs_dir, std::optional<double> alpha = {},
                                std::optional<std::vector<double>> alpha_grid = {}) {
  std::ifstream cin(runs_dir / "config.json");
  if (!cin) throw DataError("no config.json in '" + runs_dir.string() + "'");
  ExperimentConfig cfg = ExperimentConfig::from_json(json::parse(cin));
  if (alpha) cfg.alpha = *alpha;
  if (alpha_grid) cfg.alpha_grid = *alpha_grid;
  cfg.validate();
  std::vector<DatasetInfo> infos;
  std::ifstream din(runs_dir / "datasets.json");
  if (din) infos = datasets_from_json(json::parse(din));
  const auto records = load_runs(runs_dir);
  return analyze(records, std::move(infos), AnalysisOptions::from_config(cfg));
}

// ---------------------------------------------------------------------------
// Report emission

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string num(double v) { return fmt("%.10g", v); }
inline std::string pct(double v) { return fmt("%.2f", v); }

}  // namespace detail

enum class ReportFormat { Csv, Json };

inline ReportFormat report_format_from_string(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw ContractError("unknown report format '" + std::string(s) + "'");
}

inline std::string heatmap_csv(const ReportBundle& b) {
  std::string s = "# config_hash: " + b.config_hash + "\n";
  s += "dataset,gdv,r,training_loss,rule,criterion,regime,n_folds,test,statistic,p_value,alpha,reject\n";
  for (const auto& c : b.heatmap) {
    s += c.dataset + "," + detail::num(c.gdv) + "," + format_ratio(c.ratio) + "," +
         std::string(to_string(c.training_loss)) + "," + c.rule.label() + "," +
         std::string(to_string(c.rule.criterion)) + "," + c.rule.regime.label() + "," +
         std::to_string(c.n_folds) + "," + std::string(to_string(c.outcome.test_used)) + "," +
         detail::num(c.outcome.statistic) + "," + detail::num(c.outcome.p_value) + "," +
         detail::num(c.outcome.alpha) + "," + (c.outcome.reject ? "1" : "0") + "\n";
  }
  return s;
}

/// Rows: training loss x regime. Columns: acceptance percentage per
/// criterion, then accepted counts, then the shared denominator.
inline std::string acceptance_csv(const ReportBundle& b) {
  std::string s = "# config_hash: " + b.config_hash + "\n";
  s += "training_loss,regime";
  for (Criterion c : kAllCriteria) s += "," + std::string(to_string(c));
  for (Criterion c : kAllCriteria) s += ",accepted_" + std::string(to_string(c));
  s += ",n\n";
  for (const auto& row : b.acceptance) {
    s += std::string(to_string(row.training_loss)) + "," + row.regime.label();
    std::size_t n = 0;
    for (Criterion c : kAllCriteria) {
      auto it = row.cells.find(c);
      s += "," + (it == row.cells.end() ? std::string() : detail::pct(it->second.percent()));
      if (it != row.cells.end()) n = std::max(n, it->second.total);
    }
    for (Criterion c : kAllCriteria) {
      auto it = row.cells.find(c);
      s += "," + (it == row.cells.end() ? std::string() : std::to_string(it->second.accepted));
    }
    s += "," + std::to_string(n) + "\n";
  }
  return s;
}

inline std::string sweep_csv(const ReportBundle& b, const std::vector<SweepPoint>& pts, const char* x) {
  std::string s = "# config_hash: " + b.config_hash + "\n";
  s += std::string("training_loss,regime,criterion,") + x + ",accepted,total,acceptance_pct\n";
  for (const auto& p : pts)
    s += std::string(to_string(p.training_loss)) + "," + p.regime.label() + "," +
         std::string(to_string(p.criterion)) + "," + detail::num(p.x) + "," +
         std::to_string(p.cell.accepted) + "," + std::to_string(p.cell.total) + "," +
         detail::pct(p.cell.percent()) + "\n";
  return s;
}

inline std::string selections_csv(const ReportBundle& b) {
  std::string s = "# config_hash: " + b.config_hash + "\n";
  s += "run,rule,selected_epoch,halted,halt_epoch,selected_test_acc,optimal_test_epoch,optimal_test_acc,regret\n";
  for (const auto& r : b.selections) {
    const auto& x = r.result;
    s += r.run + "," + x.rule.label() + "," + std::to_string(x.selected_epoch) + "," +
         (x.halted ? "1" : "0") + "," + (x.halt_epoch ? std::to_string(*x.halt_epoch) : "") + "," +
         detail::num(x.selected_test_acc) + "," + std::to_string(x.optimal_test_epoch) + "," +
         detail::num(x.optimal_test_acc) + "," + detail::num(x.regret) + "\n";
  }
  return s;
}

inline json acceptance_json(const ReportBundle& b) {
  json rows = json::array();
  for (const auto& row : b.acceptance) {
    json cells = json::object();
    for (const auto& [c, cell] : row.cells)
      cells[std::string(to_string(c))] = {{"accepted", cell.accepted}, {"total", cell.total},
                                          {"percent", cell.percent()}};
    rows.push_back({{"training_loss", std::string(to_string(row.training_loss))},
                    {"regime", row.regime.label()}, {"cells", cells}});
  }
  return rows;
}

inline json summary_json(const ReportBundle& b) {
  json rules = json::array();
  for (const auto& r : b.rules) rules.push_back(r.label());
  return {{"config_hash", b.config_hash},
          {"alpha", b.alpha},
          {"alpha_grid", b.alpha_grid},
          {"normality_gate_alpha", b.gate_alpha ? json(*b.gate_alpha) : json(nullptr)},
          {"rules", rules},
          {"datasets", datasets_json(b.datasets)},
          {"runs", {{"total", b.runs_total}, {"ok", b.runs_ok}, {"diverged", b.runs_diverged},
                    {"aborted", b.runs_aborted}}},
          {"groups", {{"analyzed", b.groups_analyzed}, {"skipped", b.groups_skipped}}},
          {"tests", b.outcomes.size()},
          {"acceptance", acceptance_json(b)},
          {"notices", b.notices}};
}

/// Wide layout: heatmap[training_loss][rule][dataset][r] = {p, reject}.
inline json wide_json(const ReportBundle& b) {
  json heat = json::object();
  for (const auto& c : b.heatmap)
    heat[std::string(to_string(c.training_loss))][c.rule.label()][c.dataset][format_ratio(c.ratio)] = {
        {"p_value", c.outcome.p_value}, {"reject", c.outcome.reject}, {"test", std::string(to_string(c.outcome.test_used))}};
  json order = json::array();
  for (const auto& d : b.datasets) order.push_back(d.id);
  auto sweep = [](const std::vector<SweepPoint>& pts) {
    json out = json::array();
    for (const auto& p : pts)
      out.push_back({{"training_loss", std::string(to_string(p.training_loss))}, {"regime", p.regime.label()},
                     {"criterion", std::string(to_string(p.criterion))}, {"x", p.x},
                     {"accepted", p.cell.accepted}, {"total", p.cell.total}});
    return out;
  };
  json j = summary_json(b);
  j["dataset_order"] = order;
  j["heatmap"] = heat;
  j["alpha_sweep"] = sweep(b.alpha_points);
  j["ratio_breakdown"] = sweep(b.ratio_points);
  return j;
}

/// Writes the bundle into `dir` and returns the paths written. CSV output
/// also writes summary.json.
inline std::vector<fs::path> emit_report(const ReportBundle& b, const fs::path& dir, ReportFormat format) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError("cannot create output directory '" + dir.string() + "'");
  std::vector<std::pair<std::string, std::string>> files;
  if (format == ReportFormat::Csv) {
    files = {{"heatmap.csv", heatmap_csv(b)},
             {"acceptance.csv", acceptance_csv(b)},
             {"alpha_sweep.csv", sweep_csv(b, b.alpha_points, "alpha")},
             {"ratio_breakdown.csv", sweep_csv(b, b.ratio_points, "r")},
             {"selections.csv", selections_csv(b)},
             {"summary.json", summary_json(b).dump(2) + "\n"}};
  } else {
    files = {{"report.json", wide_json(b).dump(2) + "\n"}};
  }
  std::vector<fs::path> out;
  for (const auto& [name, text] : files) {
    atomic_write(dir / name, text);
    out.push_back(dir / name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct BlobSpec {
  std::size_t per_class = 100;
  std::size_t classes = 2;
  std::size_t dims = 2;
  double separation = 4.0;  // distance between neighbouring centres
  double spread = 1.0;      // per-axis standard deviation
};

/// Isotropic Gaussian blobs with centres spaced along a diagonal line.
/// Rows are grouped by class; labels are "c0", "c1", ...
inline Dataset make_blobs(const BlobSpec& spec, Rng rng, std::string id = "blobs") {
  if (spec.classes < 2 || spec.dims < 1 || spec.per_class < 1)
    throw ContractError("make_blobs: need >= 2 classes, >= 1 dim, >= 1 point per class");
  Dataset ds;
  ds.id = std::move(id);
  ds.num_classes = static_cast<int>(spec.classes);
  const std::size_t n = spec.per_class * spec.classes;
  ds.X = Matrix(n, spec.dims);
  const double step = spec.separation / std::sqrt(static_cast<double>(spec.dims));
  for (std::size_t c = 0; c < spec.classes; ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t row = c * spec.per_class + i;
      for (std::size_t j = 0; j < spec.dims; ++j)
        ds.X(row, j) = static_cast<double>(c) * step + spec.spread * rng.normal();
      ds.y.push_back(static_cast<int>(c));
    }
  }
  for (std::size_t j = 0; j < spec.dims; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  return ds;
}

/// Writes numeric features plus a "label" column, and the matching schema.
inline void write_dataset_csv(const Dataset& ds, const fs::path& csv, const fs::path& schema) {
  std::string s;
  for (const auto& f : ds.feature_names) s += f + ",";
  s += "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.X.cols(); ++j) s += detail::fmt("%.6f", ds.X(i, j)) + ",";
    s += ds.class_names[static_cast<std::size_t>(ds.y[i])] + "\n";
  }
  atomic_write(csv, s);
  json j = json::object();
  for (const auto& f : ds.feature_names) j[f] = "numeric";
  j["label"] = "target";
  atomic_write(schema, j.dump(2) + "\n");
}

}  // namespace valsel
