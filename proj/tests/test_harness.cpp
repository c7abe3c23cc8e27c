#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "valsel/harness.hpp"

namespace valsel {
namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("valsel_h_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes two small blob datasets into `dir` and returns a config using them.
ExperimentConfig small_config(const fs::path& dir) {
  BlobSpec a;
  a.per_class = 20;
  a.separation = 3.0;
  write_dataset_csv(make_blobs(a, Rng(1), "easy"), dir / "easy.csv", dir / "easy.schema.json");
  BlobSpec b;
  b.per_class = 15;
  b.classes = 3;
  b.separation = 1.0;
  write_dataset_csv(make_blobs(b, Rng(2), "hard"), dir / "hard.csv", dir / "hard.schema.json");
  ExperimentConfig cfg;
  cfg.datasets = {{"easy", "easy.csv", "easy.schema.json"}, {"hard", "hard.csv", "hard.schema.json"}};
  cfg.folds = 3;
  cfg.ratios = {0.5, 2.0};
  cfg.epochs = 15;
  cfg.lr = 0.05;
  cfg.base_dir = dir.string();
  return cfg;
}

TEST(Config, FullDesignRunCount) {
  ExperimentConfig cfg;
  cfg.datasets = {{"a", "a.csv", ""}, {"b", "b.csv", ""}};
  EXPECT_EQ(plan_runs(cfg).size(), 2u * 10u * 3u * 9u);
  EXPECT_EQ(cfg.rules().size(), 12u);
}

TEST(Config, DuplicateIdRejected) {
  ExperimentConfig cfg;
  cfg.datasets = {{"a", "a.csv", ""}, {"a", "b.csv", ""}};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, EveryProblemReportedAtOnce) {
  const json j = {{"datasets", json::array()}, {"folds", 1}, {"alpha", 2.0}, {"colour", "red"}};
  try {
    ExperimentConfig::from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("folds"), std::string::npos);
    EXPECT_NE(m.find("alpha"), std::string::npos);
    EXPECT_NE(m.find("colour"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfig::from_json(json{{"losses", {"hinge"}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json::array()), ConfigError);
}

TEST(Config, JsonRoundTripAndHash) {
  TempDir tmp;
  ExperimentConfig cfg = small_config(tmp.path());
  cfg.gate_alpha = 0.1;
  const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.hash(), cfg.hash());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(cfg.hash().size(), 16u);

  ExperimentConfig other = cfg;
  other.output_dir = "elsewhere";
  other.workers = 7;
  EXPECT_EQ(other.hash(), cfg.hash());
  other.seed += 1;
  EXPECT_NE(other.hash(), cfg.hash());
}

TEST(Config, LoadResolvesPathsAgainstConfigFile) {
  TempDir tmp;
  small_config(tmp.path());
  fs::create_directories(tmp.path() / "cfg");
  std::ofstream(tmp.path() / "cfg" / "x.json")
      << R"({"datasets": [{"id": "easy", "csv": "../easy.csv"}], "folds": 3, "ratios": [1]})";
  const auto cfg = ExperimentConfig::load((tmp.path() / "cfg" / "x.json").string());
  EXPECT_TRUE(fs::exists(cfg.resolve(cfg.datasets[0].csv)));
  EXPECT_THROW(ExperimentConfig::load((tmp.path() / "missing.json").string()), ConfigError);
}

TEST(Plan, StableOrderAndUniqueLabels) {
  TempDir tmp;
  const auto cfg = small_config(tmp.path());
  const auto a = plan_runs(cfg), b = plan_runs(cfg);
  EXPECT_EQ(a, b);
  std::set<std::string> labels;
  for (const auto& k : a) labels.insert(k.label());
  EXPECT_EQ(labels.size(), a.size());
  EXPECT_EQ(a.front().label(), "easy__fold00__ce__r0.5");
  EXPECT_EQ(RunKey::from_json(a[5].to_json()), a[5]);
}

TEST(Seeds, HoldoutSharedAcrossLossesAndRatios) {
  RunKey k{"d", 2, LossSpec{}, 0.5};
  RunKey l{"d", 2, LossSpec{LossKind::CLoss}, 5.0};
  const auto sk = derive_seeds(7, k), sl = derive_seeds(7, l);
  EXPECT_EQ(sk.holdout.seed(), sl.holdout.seed());
  EXPECT_EQ(sk.folds.seed(), sl.folds.seed());
  EXPECT_NE(sk.train, sl.train);
  RunKey m = k;
  m.fold = 3;
  EXPECT_NE(derive_seeds(7, m).holdout.seed(), sk.holdout.seed());
  EXPECT_EQ(derive_seeds(7, m).folds.seed(), sk.folds.seed());
}

TEST(Execute, ReplayIsBitIdenticalAndPersistsExactly) {
  TempDir tmp;
  const auto cfg = small_config(tmp.path());
  const LoadedDataset ld = load_entry(cfg, cfg.datasets[1]);
  const RunKey key{"hard", 1, cfg.loss_spec(LossKind::Poly1), 2.0};
  const RunRecord a = execute_run(key, cfg, ld), b = execute_run(key, cfg, ld);
  ASSERT_EQ(a.status, RunStatus::Ok);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(a.n_train + a.n_val + a.n_test, ld.data.size());

  persist_run(tmp.path() / "runs", a);
  const RunRecord r = read_trajectory(trajectory_path(tmp.path() / "runs", key));
  EXPECT_EQ(r.key, a.key);
  EXPECT_EQ(r.model, a.model);
  EXPECT_EQ(r.seed, a.seed);
  EXPECT_EQ(r.trajectory.epochs, a.trajectory.epochs);
}

TEST(Execute, TruncatedTrajectoryIsADataError) {
  TempDir tmp;
  const auto cfg = small_config(tmp.path());
  const LoadedDataset ld = load_entry(cfg, cfg.datasets[0]);
  const RunKey key{"easy", 0, LossSpec{}, 0.5};
  persist_run(tmp.path(), execute_run(key, cfg, ld));
  const fs::path p = trajectory_path(tmp.path(), key);
  std::string text = slurp(p);
  text.erase(text.rfind('\n', text.size() - 2) + 1);
  std::ofstream(p, std::ios::trunc) << text;
  EXPECT_THROW(read_trajectory(p), DataError);
}

TEST(Execute, TestRowsCannotInfluenceTraining) {
  TempDir tmp;
  const auto cfg = small_config(tmp.path());
  const LoadedDataset ld = load_entry(cfg, cfg.datasets[1]);
  const RunKey key{"hard", 0, LossSpec{}, 2.0};
  const RunRecord clean = execute_run(key, cfg, ld);
  NormStats clean_stats, dirty_stats;
  const RunRecord dirty = execute_run(key, cfg, ld, [&](Dataset& d, const SplitIndices& idx) {
    for (auto i : idx.test) {
      for (auto& v : d.X.row(i)) v = v * 1000.0 + 50.0;
      d.y[i] = (d.y[i] + 1) % d.num_classes;
    }
    clean_stats = prepare_split(ld.data, idx).stats;
    dirty_stats = prepare_split(d, idx).stats;
  });
  EXPECT_EQ(clean_stats, dirty_stats);
  ASSERT_EQ(clean.trajectory.length(), dirty.trajectory.length());
  bool test_changed = false;
  for (std::size_t i = 0; i < clean.trajectory.length(); ++i) {
    EXPECT_EQ(clean.trajectory.epochs[i].val, dirty.trajectory.epochs[i].val);
    EXPECT_EQ(clean.trajectory.epochs[i].train_acc, dirty.trajectory.epochs[i].train_acc);
    test_changed |= !(clean.trajectory.epochs[i].test == dirty.trajectory.epochs[i].test);
  }
  EXPECT_TRUE(test_changed);
}

TEST(Execute, ToyBlobsCompleteFullBudget) {
  TempDir tmp;
  auto cfg = small_config(tmp.path());
  cfg.epochs = 300;
  const LoadedDataset ld = load_entry(cfg, cfg.datasets[0]);
  const RunRecord r = execute_run({"easy", 0, LossSpec{}, 1.0}, cfg, ld);
  EXPECT_EQ(r.status, RunStatus::Ok);
  EXPECT_EQ(r.trajectory.length(), 300u);
}

TEST(Execute, DivergenceIsRecordedNotThrown) {
  TempDir tmp;
  auto cfg = small_config(tmp.path());
  cfg.lr = 1e250;
  const LoadedDataset ld = load_entry(cfg, cfg.datasets[0]);
  const RunRecord r = execute_run({"easy", 0, LossSpec{}, 1.0}, cfg, ld);
  EXPECT_EQ(r.status, RunStatus::Diverged);
  EXPECT_LT(r.trajectory.length(), static_cast<std::size_t>(cfg.epochs));
}

TEST(Experiment, WorkerCountDoesNotChangeOutput) {
  TempDir tmp;
  auto cfg = small_config(tmp.path());
  const auto one = run_experiment(cfg, tmp.path() / "w1", false);
  cfg.workers = 3;
  const auto three = run_experiment(cfg, tmp.path() / "w3", false);
  EXPECT_EQ(one.ok, one.planned);
  EXPECT_EQ(three.ok, three.planned);
  for (const auto& k : plan_runs(cfg))
    EXPECT_EQ(slurp(trajectory_path(tmp.path() / "w1", k)), slurp(trajectory_path(tmp.path() / "w3", k)));
  EXPECT_EQ(heatmap_csv(analyze_dir(tmp.path() / "w1")), heatmap_csv(analyze_dir(tmp.path() / "w3")));

  const auto again = run_experiment(cfg, tmp.path() / "w1", true);
  EXPECT_EQ(again.skipped, again.planned);
  EXPECT_EQ(again.executed, 0u);
}

// -- analysis on hand-built trajectories --

RunRecord synthetic_run(const std::string& ds, int fold, LossKind loss, double r,
                        const std::vector<double>& val, const std::vector<double>& test) {
  RunRecord rec;
  rec.key = {ds, fold, LossSpec{loss}, r};
  rec.model = {2, 3, 2};
  for (std::size_t i = 0; i < val.size(); ++i) {
    EpochRecord e;
    e.epoch = static_cast<int>(i) + 1;
    e.val = {val[i], val[i], val[i], 1.0 - val[i] / 10.0};
    e.test.acc = test[i];
    rec.trajectory.epochs.push_back(e);
  }
  return rec;
}

TEST(Analyze, ZeroRegretEverywhereAcceptsEverything) {
  std::vector<RunRecord> recs;
  for (int f = 0; f < 5; ++f) recs.push_back(synthetic_run("a", f, LossKind::CE, 1.0, {3, 2, 1}, {0.5, 0.6, 0.7}));
  const auto b = analyze(recs, {{"a", -0.2, 0, 0, 0, 0}}, AnalysisOptions{});
  EXPECT_EQ(b.outcomes.size(), 12u);
  EXPECT_EQ(b.groups_analyzed, 1u);
  for (const auto& row : b.acceptance)
    for (const auto& [c, cell] : row.cells) EXPECT_DOUBLE_EQ(cell.percent(), 100.0);
  for (const auto& o : b.outcomes) EXPECT_DOUBLE_EQ(o.outcome.p_value, 1.0);
}

TEST(Analyze, ConstantShortfallGivesExactWilcoxonP) {
  std::vector<RunRecord> recs;
  for (int f = 0; f < 10; ++f) recs.push_back(synthetic_run("a", f, LossKind::CE, 1.0, {3, 2, 1}, {0.9, 0.8, 0.8}));
  const auto b = analyze(recs, {}, AnalysisOptions{});
  ASSERT_EQ(b.outcomes.size(), 12u);
  for (const auto& o : b.outcomes) {
    EXPECT_EQ(o.outcome.test_used, TestKind::Wilcoxon);
    EXPECT_DOUBLE_EQ(o.outcome.p_value, 1.0 / 1024.0);
    EXPECT_TRUE(o.outcome.reject);
  }
  for (const auto& row : b.acceptance)
    for (const auto& [c, cell] : row.cells) EXPECT_DOUBLE_EQ(cell.percent(), 0.0);
  EXPECT_EQ(b.selections.size(), 120u);
}

TEST(Analyze, TooFewFoldsAndDivergedRunsAreNoticed) {
  std::vector<RunRecord> recs;
  for (int f = 0; f < 2; ++f) recs.push_back(synthetic_run("a", f, LossKind::CE, 1.0, {3, 2, 1}, {0.5, 0.6, 0.7}));
  recs.push_back(synthetic_run("a", 2, LossKind::CE, 1.0, {3}, {0.5}));
  recs.back().status = RunStatus::Diverged;
  const auto b = analyze(recs, {{"a", -0.2, 0, 0, 0, 0}}, AnalysisOptions{});
  EXPECT_EQ(b.groups_skipped, 1u);
  EXPECT_EQ(b.runs_diverged, 1u);
  EXPECT_TRUE(b.outcomes.empty());
  EXPECT_EQ(b.notices.size(), 2u);
}

TEST(Analyze, DatasetsOrderedLeastSeparableFirst) {
  std::vector<RunRecord> recs;
  for (const char* d : {"x", "y", "z"})
    for (int f = 0; f < 3; ++f) recs.push_back(synthetic_run(d, f, LossKind::CE, 1.0, {3, 2, 1}, {0.5, 0.6, 0.7}));
  const auto b = analyze(recs, {{"x", -0.5, 0, 0, 0, 0}, {"y", -0.1, 0, 0, 0, 0}, {"z", -0.3, 0, 0, 0, 0}},
                         AnalysisOptions{});
  ASSERT_EQ(b.datasets.size(), 3u);
  EXPECT_EQ(b.datasets[0].id, "y");
  EXPECT_EQ(b.datasets[1].id, "z");
  EXPECT_EQ(b.heatmap.front().dataset, "y");
  EXPECT_EQ(b.heatmap.back().dataset, "x");
}

TEST(Analyze, RejectMatchesPBelowAlphaInEveryCell) {
  TempDir tmp;
  auto cfg = small_config(tmp.path());
  run_experiment(cfg, tmp.path() / "runs", false);
  for (double alpha : {0.01, 0.05, 0.2}) {
    const auto b = analyze_dir(tmp.path() / "runs", alpha);
    EXPECT_EQ(b.outcomes.size(), 2u * 3u * 2u * 12u);
    for (const auto& c : b.heatmap) EXPECT_EQ(c.outcome.reject, c.outcome.p_value < alpha);
  }
}

TEST(Emit, EmptyBundleWritesHeadersOnly) {
  TempDir tmp;
  AnalysisOptions opt;
  opt.config_hash = "0123456789abcdef";
  const auto b = analyze({}, {}, opt);
  const auto files = emit_report(b, tmp.path(), ReportFormat::Csv);
  EXPECT_EQ(files.size(), 6u);
  for (const char* name : {"heatmap.csv", "acceptance.csv", "alpha_sweep.csv", "ratio_breakdown.csv"}) {
    const std::string text = slurp(tmp.path() / name);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2) << name;
    EXPECT_EQ(text.rfind("# config_hash: 0123456789abcdef\n", 0), 0u) << name;
  }
  const json s = json::parse(slurp(tmp.path() / "summary.json"));
  EXPECT_EQ(s["tests"], 0);
}

TEST(Emit, ReEmissionIsByteIdentical) {
  TempDir tmp;
  std::vector<RunRecord> recs;
  for (int f = 0; f < 4; ++f)
    recs.push_back(synthetic_run("a", f, LossKind::Poly1, 0.5, {3, 2, 2.5, 1}, {0.5, 0.9 - 0.01 * f, 0.6, 0.7}));
  const auto b = analyze(recs, {}, AnalysisOptions{});
  emit_report(b, tmp.path() / "one", ReportFormat::Csv);
  emit_report(analyze(recs, {}, AnalysisOptions{}), tmp.path() / "two", ReportFormat::Csv);
  for (const char* name : {"heatmap.csv", "acceptance.csv", "alpha_sweep.csv", "ratio_breakdown.csv", "summary.json"})
    EXPECT_EQ(slurp(tmp.path() / "one" / name), slurp(tmp.path() / "two" / name)) << name;
  emit_report(b, tmp.path() / "json", ReportFormat::Json);
  const json j = json::parse(slurp(tmp.path() / "json" / "report.json"));
  EXPECT_TRUE(j.contains("heatmap"));
  EXPECT_EQ(j["alpha_sweep"].size(), b.alpha_points.size());
}

TEST(Emit, AcceptanceTableShape) {
  std::vector<RunRecord> recs;
  for (LossKind l : {LossKind::CE, LossKind::CLoss, LossKind::Poly1})
    for (int f = 0; f < 3; ++f) recs.push_back(synthetic_run("a", f, l, 1.0, {3, 2, 1}, {0.5, 0.6, 0.7}));
  const std::string csv = acceptance_csv(analyze(recs, {}, AnalysisOptions{}));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line,
            "training_loss,regime,val_ce,val_closs,val_poly1,val_acc,accepted_val_ce,accepted_val_closs,"
            "accepted_val_poly1,accepted_val_acc,n");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 9);
}

TEST(Synthetic, BlobsRoundTripThroughCsv) {
  TempDir tmp;
  BlobSpec spec;
  spec.per_class = 10;
  spec.classes = 3;
  spec.dims = 4;
  const Dataset ds = make_blobs(spec, Rng(5), "b");
  write_dataset_csv(ds, tmp.path() / "b.csv", tmp.path() / "b.schema.json");
  const Dataset back = load_dataset((tmp.path() / "b.csv").string(), Schema::load((tmp.path() / "b.schema.json").string()));
  EXPECT_EQ(back.y, ds.y);
  ASSERT_EQ(back.X.rows(), ds.X.rows());
  for (std::size_t i = 0; i < ds.X.data().size(); ++i) EXPECT_NEAR(back.X.data()[i], ds.X.data()[i], 5e-7);
}

}  // namespace
}  // namespace valsel
