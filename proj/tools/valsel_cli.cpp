// valsel command-line entry point.
//
// Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 every failed
// run diverged (no other errors), 4 selftest failure.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "suites.hpp"
#include "valsel/harness.hpp"

namespace {

using namespace valsel;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kDiverged = 3;
constexpr int kSelftestFailed = 4;

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = detail::parse_double(detail::trim(item));
    if (!v) throw CLI::ValidationError("--alpha-grid", "cannot parse '" + item + "'");
    out.push_back(*v);
  }
  return out;
}

Schema schema_for(const std::string& csv, const std::string& schema) {
  return schema.empty() ? infer_schema(csv) : Schema::load(schema);
}

int cmd_ingest(const std::string& csv, const std::string& schema_path, const std::string& id) {
  const Schema schema = schema_for(csv, schema_path);
  const RawTable raw = load_csv(csv, schema);
  const Dataset ds = encode(raw, schema);
  std::printf("dataset:   %s\n", id.empty() ? csv.c_str() : id.c_str());
  std::printf("instances: %zu (dropped %zu with missing values)\n", ds.size(), raw.dropped_missing);
  std::printf("features:  %zu encoded from %zu columns\n", ds.X.cols(), schema.columns.size() - 1);
  std::printf("classes:   %d\n", ds.num_classes);
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    std::printf("  %-20s %zu\n", ds.class_names[c].c_str(), counts[c]);
  std::printf("gdv:       %.6f\n", gdv(ds));
  return kOk;
}

int cmd_gdv(const std::string& csv, const std::string& schema_path) {
  const Schema schema = schema_for(csv, schema_path);
  std::printf("%.10f\n", gdv(load_dataset(csv, schema)));
  return kOk;
}

int cmd_run(const std::string& config, std::size_t workers, bool resume, const std::string& out, bool quiet) {
  ExperimentConfig cfg = ExperimentConfig::load(config);
  if (workers > 0) cfg.workers = workers;
  const fs::path dir = out.empty() ? fs::path(cfg.resolve(cfg.output_dir)) : fs::path(out);
  std::fprintf(stderr, "config %s, %zu runs -> %s (%zu worker%s)\n", cfg.hash().c_str(), plan_runs(cfg).size(),
               dir.string().c_str(), cfg.workers, cfg.workers == 1 ? "" : "s");
  const auto summary = run_experiment(cfg, dir, resume, [quiet](const RunRecord& r, std::size_t done, std::size_t total) {
    if (quiet && r.status == RunStatus::Ok) return;
    std::fprintf(stderr, "[%zu/%zu] %s H=%zu epochs=%zu %s %.1fs\n", done, total, r.key.label().c_str(),
                 r.model.hidden, r.trajectory.length(), std::string(to_string(r.status)).c_str(), r.seconds);
  });
  std::printf("planned %zu, executed %zu, resumed %zu, ok %zu, diverged %zu, aborted %zu\n", summary.planned,
              summary.executed, summary.skipped, summary.ok, summary.diverged, summary.aborted);
  for (const auto& e : summary.errors) std::fprintf(stderr, "error: %s\n", e.c_str());
  if (summary.aborted > 0) return kData;
  if (summary.diverged > 0) return kDiverged;
  return kOk;
}

void print_acceptance(const ReportBundle& b) {
  std::printf("%-8s %-9s", "loss", "regime");
  for (Criterion c : kAllCriteria) std::printf(" %10s", std::string(to_string(c)).c_str());
  std::printf("\n");
  for (const auto& row : b.acceptance) {
    std::printf("%-8s %-9s", std::string(to_string(row.training_loss)).c_str(), row.regime.label().c_str());
    for (Criterion c : kAllCriteria) {
      auto it = row.cells.find(c);
      if (it == row.cells.end()) std::printf(" %10s", "-");
      else std::printf(" %9.2f%%", it->second.percent());
    }
    std::printf("\n");
  }
}

int cmd_analyze(const std::string& runs, std::optional<double> alpha, const std::string& grid,
                const std::string& out, ReportFormat format) {
  std::optional<std::vector<double>> g;
  if (!grid.empty()) g = parse_list(grid);
  const ReportBundle b = analyze_dir(runs, alpha, g);
  const fs::path dir = out.empty() ? fs::path(runs) / "report" : fs::path(out);
  for (const auto& p : emit_report(b, dir, format)) std::fprintf(stderr, "wrote %s\n", p.string().c_str());
  for (const auto& n : b.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
  std::printf("runs %zu (ok %zu, diverged %zu), groups %zu analyzed, %zu skipped, %zu tests at alpha=%g\n",
              b.runs_total, b.runs_ok, b.runs_diverged, b.groups_analyzed, b.groups_skipped, b.outcomes.size(),
              b.alpha);
  print_acceptance(b);
  return b.runs_diverged > 0 && b.runs_ok == 0 ? kDiverged : kOk;
}

int cmd_selftest(bool quick) {
  const int scale = quick ? 10 : 1;
  std::vector<suite::SuiteResult> results;
  for (LossKind k : {LossKind::CE, LossKind::Poly1, LossKind::CLoss})
    results.push_back(suite::gradient_suite(LossSpec{k, 0.5, 1.0, 1.0}, 100));
  results.push_back(suite::selector_suite(10000 / scale));
  results.push_back(suite::t_equals_e_suite(10000 / scale));
  results.push_back(suite::wilcoxon_suite(3000 / scale));
  results.push_back(suite::t_test_suite(500 / scale));
  results.push_back(suite::shapiro_suite());
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-22s checks=%-8zu failures=%-4zu worst=%.3g  %.2fs\n", r.passed() ? "PASS" : "FAIL",
                r.name.c_str(), r.checks, r.failures, r.worst, r.seconds);
    for (const auto& n : r.notes) std::printf("       %s\n", n.c_str());
    ok = ok && r.passed();
  }
  return ok ? kOk : kSelftestFailed;
}

int cmd_synth(const std::string& out, const std::string& schema, const BlobSpec& spec, std::uint64_t seed) {
  const Dataset ds = make_blobs(spec, Rng(seed), fs::path(out).stem().string());
  const fs::path schema_path = schema.empty() ? fs::path(out).replace_extension(".schema.json") : fs::path(schema);
  write_dataset_csv(ds, out, schema_path);
  std::printf("wrote %s (%zu rows) and %s, gdv %.6f\n", out.c_str(), ds.size(), schema_path.string().c_str(), gdv(ds));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Validation-criterion and stopping-regime experiments for shallow networks"};
  app.require_subcommand(1);

  std::string csv, schema, id;
  auto* ingest = app.add_subcommand("ingest", "Validate and encode a CSV dataset, report its GDV");
  ingest->add_option("csv", csv, "dataset CSV")->required();
  ingest->add_option("--schema", schema, "column schema JSON (default: last column is the target)");
  ingest->add_option("--id", id, "dataset id");

  auto* gdv_cmd = app.add_subcommand("gdv", "Print the generalized discrimination value of a dataset");
  gdv_cmd->add_option("csv", csv, "dataset CSV")->required();
  gdv_cmd->add_option("--schema", schema, "column schema JSON");

  std::string config, out;
  std::size_t workers = 0;
  bool resume = false, quiet = false;
  auto* run = app.add_subcommand("run", "Train every run of the crossed design");
  run->add_option("--config", config, "experiment config JSON")->required();
  run->add_option("--workers", workers, "worker threads (overrides the config)");
  run->add_flag("--resume", resume, "skip runs whose trajectory is already on disk");
  run->add_option("--out", out, "run directory (default: output_dir from the config)");
  run->add_flag("--quiet", quiet, "only report failed runs");

  std::string runs, grid, format = "csv";
  std::optional<double> alpha;
  auto* analyze_cmd = app.add_subcommand("analyze", "Replay selection rules and run the hypothesis tests");
  analyze_cmd->add_option("--runs", runs, "run directory")->required();
  analyze_cmd->add_option("--alpha", alpha, "significance level");
  analyze_cmd->add_option("--alpha-grid", grid, "comma-separated alphas for the sweep");
  analyze_cmd->add_option("--out", out, "report directory (default: <runs>/report)");

  auto* report = app.add_subcommand("report", "Emit the report bundle as CSV files or one JSON document");
  report->add_option("--runs", runs, "run directory")->required();
  report->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  report->add_option("--alpha", alpha, "significance level");
  report->add_option("--alpha-grid", grid, "comma-separated alphas for the sweep");
  report->add_option("--out", out, "report directory (default: <runs>/report)");

  bool quick = false;
  auto* selftest = app.add_subcommand("selftest", "Run the gradient, selector and statistics oracle suites");
  selftest->add_flag("--quick", quick, "smaller random samples");

  BlobSpec blob;
  std::uint64_t seed = 1;
  auto* synth = app.add_subcommand("synth", "Write a Gaussian-blob classification CSV and its schema");
  synth->add_option("--out", out, "output CSV")->required();
  synth->add_option("--schema", schema, "schema path (default: <out>.schema.json)");
  synth->add_option("--classes", blob.classes)->capture_default_str();
  synth->add_option("--per-class", blob.per_class)->capture_default_str();
  synth->add_option("--dims", blob.dims)->capture_default_str();
  synth->add_option("--separation", blob.separation, "distance between neighbouring centres")->capture_default_str();
  synth->add_option("--spread", blob.spread, "per-axis standard deviation")->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*ingest) return cmd_ingest(csv, schema, id);
    if (*gdv_cmd) return cmd_gdv(csv, schema);
    if (*run) return cmd_run(config, workers, resume, out, quiet);
    if (*analyze_cmd) return cmd_analyze(runs, alpha, grid, out, ReportFormat::Csv);
    if (*report) return cmd_analyze(runs, alpha, grid, out, report_format_from_string(format));
    if (*selftest) return cmd_selftest(quick);
    if (*synth) return cmd_synth(out, schema, blob, seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
