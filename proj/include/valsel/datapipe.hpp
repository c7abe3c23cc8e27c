// Dataset ingestion (CSV + JSON schema), one-hot encoding, stratified
// splitting, train-only z-scoring, and the generalized discrimination value.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "valsel/numkernel.hpp"

namespace valsel {

/// Problems with user-supplied data files. Messages carry the location.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColumnKind { Numeric, Categorical, Binary, Target };

inline std::string_view to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::Numeric: return "numeric";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Binary: return "binary";
    case ColumnKind::Target: return "target";
  }
  return "?";
}

inline ColumnKind column_kind_from_string(std::string_view s) {
  if (s == "numeric") return ColumnKind::Numeric;
  if (s == "categorical") return ColumnKind::Categorical;
  if (s == "binary") return ColumnKind::Binary;
  if (s == "target") return ColumnKind::Target;
  throw DataError("schema: unknown column kind '" + std::string(s) + "'");
}

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  /// Declared levels for categorical/binary/target columns. When present,
  /// values outside the list are rejected at encoding time.
  std::optional<std::vector<std::string>> levels;
};

/// Column name -> kind. JSON form: {"col": "numeric", "label": "target", ...}
/// or {"col": {"kind": "categorical", "levels": ["a", "b"]}}.
struct Schema {
  std::vector<ColumnSpec> columns;

  const ColumnSpec* find(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }

  void validate() const {
    const auto targets = std::count_if(columns.begin(), columns.end(),
                                       [](const auto& c) { return c.kind == ColumnKind::Target; });
    if (targets != 1)
      throw DataError("schema: exactly one target column required, found " +
                      std::to_string(targets));
    for (const auto& c : columns)
      if (c.kind == ColumnKind::Target && c.levels && c.levels->size() < 2)
        throw DataError("schema: target must declare at least 2 classes");
  }

  static Schema from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("schema: expected a JSON object");
    Schema s;
    for (const auto& [name, val] : j.items()) {
      ColumnSpec c{name, ColumnKind::Numeric, std::nullopt};
      if (val.is_string()) {
        c.kind = column_kind_from_string(val.get<std::string>());
      } else if (val.is_object() && val.contains("kind")) {
        c.kind = column_kind_from_string(val.at("kind").get<std::string>());
        if (val.contains("levels")) c.levels = val.at("levels").get<std::vector<std::string>>();
      } else {
        throw DataError("schema: column '" + name + "' must be a kind string or object");
      }
      s.columns.push_back(std::move(c));
    }
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& c : columns) {
      if (c.levels)
        j[c.name] = {{"kind", to_string(c.kind)}, {"levels", *c.levels}};
      else
        j[c.name] = std::string(to_string(c.kind));
    }
    return j;
  }

  static Schema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("schema: cannot open '" + path + "'");
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("schema '" + path + "': " + e.what());
    }
  }
};

/// Parsed CSV cells in schema-typed columns. Numeric cells are already
/// converted; categorical and target cells stay as text.
struct RawTable {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;
  std::vector<std::vector<double>> numeric;     // per column, empty unless numeric
  std::vector<std::vector<std::string>> text;   // per column, empty if numeric
  std::size_t rows = 0;
  std::size_t dropped_missing = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits one CSV line on commas, honoring double quotes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool is_missing(std::string_view cell) { return cell.empty() || cell == "?"; }

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace detail

/// Reads a comma-separated file with a header row. Rows containing a missing
/// cell ('?' or empty) are dropped and counted.
inline RawTable load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::blank(line)) break;
  }
  if (line_no == 0 || detail::blank(line)) throw DataError(path + ": empty file (no header)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  RawTable t;
  t.names = detail::split_csv_line(line);
  if (t.names.size() != schema.columns.size()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": header has " +
                    std::to_string(t.names.size()) + " columns, schema has " +
                    std::to_string(schema.columns.size()));
  }
  for (const auto& name : t.names) {
    const ColumnSpec* spec = schema.find(name);
    if (!spec)
      throw DataError(path + ":" + std::to_string(line_no) + ": column '" + name +
                      "' not in schema");
    t.kinds.push_back(spec->kind);
  }
  const std::size_t ncol = t.names.size();
  t.numeric.resize(ncol);
  t.text.resize(ncol);

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != ncol) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(ncol) + " cells, found " + std::to_string(cells.size()));
    }
    if (std::any_of(cells.begin(), cells.end(), [](const auto& c) { return detail::is_missing(c); })) {
      ++t.dropped_missing;
      continue;
    }
    for (std::size_t c = 0; c < ncol; ++c) {
      if (t.kinds[c] == ColumnKind::Numeric) {
        auto v = detail::parse_double(cells[c]);
        if (!v) {
          throw DataError(path + ":" + std::to_string(line_no) + ": column '" + t.names[c] +
                          "': cannot parse '" + cells[c] + "' as a number");
        }
        t.numeric[c].push_back(*v);
      } else {
        t.text[c].push_back(cells[c]);
      }
    }
    ++t.rows;
  }
  if (t.rows == 0) throw DataError(path + ": no instances");
  return t;
}

/// Best-effort schema guess: the last column is the target, all-numeric
/// columns are numeric, two-level columns binary, the rest categorical.
inline Schema infer_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file (no header)");
  const auto names = detail::split_csv_line(line);
  std::vector<bool> numeric(names.size(), true);
  std::vector<std::set<std::string>> levels(names.size());
  while (std::getline(in, line)) {
    if (detail::blank(line)) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != names.size()) continue;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (detail::is_missing(cells[c])) continue;
      if (!detail::parse_double(cells[c])) numeric[c] = false;
      if (levels[c].size() <= 2) levels[c].insert(cells[c]);
    }
  }
  Schema s;
  for (std::size_t c = 0; c < names.size(); ++c) {
    ColumnKind k = ColumnKind::Categorical;
    if (c + 1 == names.size())
      k = ColumnKind::Target;
    else if (numeric[c])
      k = ColumnKind::Numeric;
    else if (levels[c].size() == 2)
      k = ColumnKind::Binary;
    s.columns.push_back({names[c], k, std::nullopt});
  }
  s.validate();
  return s;
}

struct Dataset {
  std::string id;
  Matrix X;                 // N x d, encoded
  std::vector<int> y;       // class index per row, in 0..K-1
  int num_classes = 0;      // K
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;  // class index -> original label

  std::size_t size() const noexcept { return y.size(); }

  void validate() const {
    if (X.rows() != y.size()) throw ContractError("Dataset: X rows != label count");
    if (num_classes < 2) throw ContractError("Dataset: need at least 2 classes");
    for (int v : y)
      if (v < 0 || v >= num_classes) throw ContractError("Dataset: label out of range");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int v : y) ++counts[static_cast<std::size_t>(v)];
    return counts;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.id = id;
    out.X = X.select_rows(idx);
    out.y.reserve(idx.size());
    for (auto i : idx) out.y.push_back(y[i]);
    out.num_classes = num_classes;
    out.feature_names = feature_names;
    out.class_names = class_names;
    return out;
  }
};

namespace detail {

/// Sorted distinct values; numerically when every value parses as a number.
inline std::vector<std::string> ordered_levels(const std::vector<std::string>& values) {
  std::vector<std::string> lv(values.begin(), values.end());
  std::sort(lv.begin(), lv.end());
  lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
  const bool all_numeric =
      std::all_of(lv.begin(), lv.end(), [](const auto& s) { return parse_double(s).has_value(); });
  if (all_numeric) {
    std::stable_sort(lv.begin(), lv.end(), [](const auto& a, const auto& b) {
      return *parse_double(a) < *parse_double(b);
    });
  }
  return lv;
}

}  // namespace detail

/// Numeric columns pass through unchanged; each categorical or binary column
/// with c levels becomes c indicator columns named "column=level".
inline Dataset encode(const RawTable& raw, const Schema& schema) {
  Dataset ds;
  struct Block {
    std::size_t column;
    std::vector<std::string> levels;  // empty for numeric
  };
  std::vector<Block> blocks;
  std::size_t target_col = raw.names.size();
  for (std::size_t c = 0; c < raw.names.size(); ++c) {
    const ColumnSpec* spec = schema.find(raw.names[c]);
    if (!spec) throw DataError("encode: column '" + raw.names[c] + "' not in schema");
    switch (raw.kinds[c]) {
      case ColumnKind::Numeric:
        blocks.push_back({c, {}});
        ds.feature_names.push_back(raw.names[c]);
        break;
      case ColumnKind::Categorical:
      case ColumnKind::Binary: {
        auto lv = spec->levels ? *spec->levels : detail::ordered_levels(raw.text[c]);
        for (const auto& v : raw.text[c]) {
          if (std::find(lv.begin(), lv.end(), v) == lv.end())
            throw DataError("encode: column '" + raw.names[c] + "' has undeclared level '" + v + "'");
        }
        for (const auto& l : lv) ds.feature_names.push_back(raw.names[c] + "=" + l);
        blocks.push_back({c, std::move(lv)});
        break;
      }
      case ColumnKind::Target:
        target_col = c;
        break;
    }
  }
  if (target_col == raw.names.size()) throw DataError("encode: no target column");

  const ColumnSpec* tspec = schema.find(raw.names[target_col]);
  ds.class_names = tspec->levels ? *tspec->levels : detail::ordered_levels(raw.text[target_col]);
  if (ds.class_names.size() < 2)
    throw DataError("encode: target '" + raw.names[target_col] + "' has fewer than 2 classes");
  ds.num_classes = static_cast<int>(ds.class_names.size());
  for (const auto& label : raw.text[target_col]) {
    auto it = std::find(ds.class_names.begin(), ds.class_names.end(), label);
    if (it == ds.class_names.end())
      throw DataError("encode: unseen target label '" + label + "'");
    ds.y.push_back(static_cast<int>(it - ds.class_names.begin()));
  }

  ds.X = Matrix(raw.rows, ds.feature_names.size());
  std::size_t col = 0;
  for (const auto& b : blocks) {
    if (b.levels.empty()) {
      for (std::size_t r = 0; r < raw.rows; ++r) ds.X(r, col) = raw.numeric[b.column][r];
      ++col;
    } else {
      for (std::size_t r = 0; r < raw.rows; ++r) {
        const auto& v = raw.text[b.column][r];
        const auto pos = static_cast<std::size_t>(
            std::find(b.levels.begin(), b.levels.end(), v) - b.levels.begin());
        ds.X(r, col + pos) = 1.0;
      }
      col += b.levels.size();
    }
  }
  ds.validate();
  return ds;
}

inline Dataset load_dataset(const std::string& csv_path, const Schema& schema, std::string id = {}) {
  Dataset ds = encode(load_csv(csv_path, schema), schema);
  ds.id = std::move(id);
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting

/// k disjoint test folds covering 0..N-1.
struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> test_folds;  // each sorted ascending

  /// Everything outside test fold `f`, ascending.
  std::vector<std::size_t> train_indices(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < test_folds.size(); ++g) {
      if (g == f) continue;
      out.insert(out.end(), test_folds[g].begin(), test_folds[g].end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Each class is shuffled, classes are concatenated in index order, and the
/// i-th element of that sequence goes to fold i mod k.
inline FoldPlan stratified_kfold(const Dataset& ds, std::size_t k, const Rng& rng) {
  if (k < 2) throw ContractError("stratified_kfold: k must be >= 2");
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < k) {
      throw DataError("stratified_kfold: insufficient class support (class '" +
                      (c < ds.class_names.size() ? ds.class_names[c] : std::to_string(c)) +
                      "' has " + std::to_string(counts[c]) + " < k=" + std::to_string(k) +
                      " members)");
    }
  }
  FoldPlan plan{k, std::vector<std::vector<std::size_t>>(k)};
  std::size_t pos = 0;
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.y.size(); ++i)
      if (ds.y[i] == c) members.push_back(i);
    Rng class_rng = rng.derive("class-" + std::to_string(c));
    shuffle_in_place(class_rng, members);
    for (auto i : members) plan.test_folds[pos++ % k].push_back(i);
  }
  for (auto& f : plan.test_folds) std::sort(f.begin(), f.end());
  return plan;
}

struct HoldoutSplit {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> val;    // ascending
  std::vector<std::string> warnings;
};

/// Stratified validation holdout. Per-class quotas are apportioned by largest
/// remainder so the total is round-half-up(fraction * n). Classes with at
/// least two members keep at least one sample on each side; single-member
/// classes stay in train and a warning is recorded.
inline HoldoutSplit stratified_holdout(std::span<const std::size_t> train_idx,
                                       std::span<const int> labels, double fraction,
                                       const Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ContractError("stratified_holdout: fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (auto i : train_idx) {
    if (i >= labels.size()) throw ContractError("stratified_holdout: index out of range");
    by_class[labels[i]].push_back(i);
  }
  const double n = static_cast<double>(train_idx.size());
  const auto target = static_cast<std::size_t>(std::floor(fraction * n + 0.5));

  struct Quota {
    int cls;
    std::size_t count;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [cls, members] : by_class) {
    const double exact = fraction * static_cast<double>(members.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({cls, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t j = 0; assigned < target && j < order.size(); ++j) {
    ++quotas[order[j]].count;
    ++assigned;
  }

  HoldoutSplit out;
  for (auto& q : quotas) {
    auto members = by_class[q.cls];
    if (members.size() < 2) {
      q.count = 0;
      out.warnings.push_back("class " + std::to_string(q.cls) +
                             " has a single training member; kept in train, absent from validation");
    } else {
      q.count = std::clamp<std::size_t>(q.count, 1, members.size() - 1);
    }
    Rng class_rng = rng.derive("holdout-class-" + std::to_string(q.cls));
    shuffle_in_place(class_rng, members);
    out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<long>(q.count));
    out.train.insert(out.train.end(), members.begin() + static_cast<long>(q.count), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

inline SplitIndices fold_split(const FoldPlan& plan, std::size_t fold, std::span<const int> labels,
                               double val_fraction, const Rng& rng) {
  if (fold >= plan.k) throw ContractError("fold_split: fold index out of range");
  const auto outer_train = plan.train_indices(fold);
  auto hold = stratified_holdout(outer_train, labels, val_fraction, rng);
  return {std::move(hold.train), std::move(hold.val), plan.test_folds[fold],
          std::move(hold.warnings)};
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population (1/N)
  std::vector<bool> degenerate;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Per-feature mean and population standard deviation over `rows` only.
inline NormStats fit_zscore(const Matrix& X, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("fit_zscore: empty training index set");
  const std::size_t d = X.cols();
  NormStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0),
              std::vector<bool>(d, false)};
  const double n = static_cast<double>(rows.size());
  for (auto r : rows) {
    if (r >= X.rows()) throw ContractError("fit_zscore: row index out of range");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += X(r, j);
  }
  for (auto& m : s.mean) m /= n;
  for (auto r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = X(r, j) - s.mean[j];
      s.stddev[j] += dev * dev;
    }
  for (std::size_t j = 0; j < d; ++j) {
    s.stddev[j] = std::sqrt(s.stddev[j] / n);
    s.degenerate[j] = !(s.stddev[j] > 1e-12 * std::max(1.0, std::fabs(s.mean[j])));
  }
  return s;
}

inline NormStats fit_zscore(const Dataset& ds, std::span<const std::size_t> rows) {
  return fit_zscore(ds.X, rows);
}

/// (x - mean) / std; degenerate features map to 0.
inline Matrix apply_zscore(const Matrix& X, const NormStats& s) {
  if (X.cols() != s.mean.size()) throw ContractError("apply_zscore: feature count mismatch");
  Matrix out(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t j = 0; j < X.cols(); ++j)
      out(r, j) = s.degenerate[j] ? 0.0 : (X(r, j) - s.mean[j]) / s.stddev[j];
  return out;
}

inline Dataset apply_zscore(const Dataset& ds, const NormStats& s) {
  Dataset out = ds;
  out.X = apply_zscore(ds.X, s);
  return out;
}

/// Inverse of apply_zscore for non-degenerate features (degenerate ones are
/// restored to their mean).
inline Matrix invert_zscore(const Matrix& Z, const NormStats& s) {
  if (Z.cols() != s.mean.size()) throw ContractError("invert_zscore: feature count mismatch");
  Matrix out(Z.rows(), Z.cols());
  for (std::size_t r = 0; r < Z.rows(); ++r)
    for (std::size_t j = 0; j < Z.cols(); ++j)
      out(r, j) = s.degenerate[j] ? s.mean[j] : Z(r, j) * s.stddev[j] + s.mean[j];
  return out;
}

/// Train/validation/test datasets normalized with statistics from the
/// training rows alone.
struct PreparedSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  NormStats stats;
};

inline PreparedSplit prepare_split(const Dataset& ds, const SplitIndices& idx) {
  PreparedSplit p;
  p.stats = fit_zscore(ds.X, idx.train);
  p.train = apply_zscore(ds.subset(idx.train), p.stats);
  p.val = apply_zscore(ds.subset(idx.val), p.stats);
  p.test = apply_zscore(ds.subset(idx.test), p.stats);
  return p;
}

// ---------------------------------------------------------------------------
// Generalized discrimination value

/// GDV of the labelled point cloud. Each dimension is z-scored over all
/// points (population std) and scaled by 0.5, then
///   GDV = (1/sqrt(d)) * [ mean_l intra(l) - mean_{l<m} inter(l, m) ]
/// where intra(l) averages distances over distinct pairs within class l and
/// inter(l, m) averages over all cross pairs. More negative means more
/// separable.
inline double gdv(const Matrix& X, std::span<const int> y, int num_classes) {
  if (X.rows() != y.size()) throw ContractError("gdv: X rows != label count");
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(std::max(num_classes, 0)));
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= num_classes) throw ContractError("gdv: label out of range");
    members[static_cast<std::size_t>(y[i])].push_back(i);
  }
  std::erase_if(members, [](const auto& m) { return m.empty(); });
  if (members.size() < 2) throw ContractError("gdv: need at least two non-empty classes");
  const std::size_t d = X.cols();
  if (d == 0) throw ContractError("gdv: no features");

  std::vector<std::size_t> all(X.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const NormStats s = fit_zscore(X, all);
  Matrix Z = apply_zscore(X, s);
  for (double& v : Z.data()) v *= 0.5;

  auto dist = [&](std::size_t i, std::size_t j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = Z(i, k) - Z(j, k);
      acc += diff * diff;
    }
    return std::sqrt(acc);
  };

  const std::size_t L = members.size();
  double intra_sum = 0.0;
  for (const auto& m : members) {
    if (m.size() < 2) continue;  // a single point has zero spread
    double acc = 0.0;
    for (std::size_t a = 0; a + 1 < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b) acc += dist(m[a], m[b]);
    const double pairs = static_cast<double>(m.size()) * static_cast<double>(m.size() - 1) / 2.0;
    intra_sum += acc / pairs;
  }
  double inter_sum = 0.0;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t m = l + 1; m < L; ++m) {
      double acc = 0.0;
      for (auto i : members[l])
        for (auto j : members[m]) acc += dist(i, j);
      inter_sum += acc / (static_cast<double>(members[l].size()) *
                          static_cast<double>(members[m].size()));
    }
  const double intra = intra_sum / static_cast<double>(L);
  const double inter = 2.0 * inter_sum / (static_cast<double>(L) * static_cast<double>(L - 1));
  return (intra - inter) / std::sqrt(static_cast<double>(d));
}

inline double gdv(const Dataset& ds) { return gdv(ds.X, ds.y, ds.num_classes); }

}  // namespace valsel
