// Checkpoint selection over recorded training trajectories: post-hoc
// selection, early stopping with patience, and the test-optimal benchmark.
//
// Selection never touches model weights. Every epoch's validation criteria
// and test accuracy are already in the Trajectory, so any rule can be
// replayed offline.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "valsel/criteria.hpp"

namespace valsel {

struct EpochRecord {
  int epoch = 0;
  MetricVector val;
  MetricVector test;
  double train_acc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunMeta {
  std::string dataset_id;
  int fold = 0;
  LossSpec loss;
  double ratio = 1.0;
  std::uint64_t seed = 0;

  friend bool operator==(const RunMeta&, const RunMeta&) = default;
};

/// Per-epoch metrics of one training run. Epochs are contiguous from 1.
struct Trajectory {
  RunMeta meta;
  std::vector<EpochRecord> epochs;

  std::size_t length() const noexcept { return epochs.size(); }

  void validate() const {
    if (epochs.empty()) throw ContractError("Trajectory: empty");
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (epochs[i].epoch != static_cast<int>(i) + 1)
        throw ContractError("Trajectory: epochs must be contiguous from 1");
    }
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

enum class Criterion { ValCe, ValCloss, ValPoly1, ValAcc };

inline constexpr Criterion kAllCriteria[] = {Criterion::ValCe, Criterion::ValCloss,
                                             Criterion::ValPoly1, Criterion::ValAcc};

inline std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::ValCe: return "val_ce";
    case Criterion::ValCloss: return "val_closs";
    case Criterion::ValPoly1: return "val_poly1";
    case Criterion::ValAcc: return "val_acc";
  }
  return "?";
}

inline Criterion criterion_from_string(std::string_view s) {
  for (Criterion c : kAllCriteria)
    if (to_string(c) == s) return c;
  throw ContractError("unknown criterion '" + std::string(s) + "'");
}

/// Accuracy is maximized; the three losses are minimized.
inline constexpr bool higher_is_better(Criterion c) noexcept { return c == Criterion::ValAcc; }

inline double criterion_value(const EpochRecord& r, Criterion c) noexcept {
  switch (c) {
    case Criterion::ValCe: return r.val.ce;
    case Criterion::ValCloss: return r.val.closs;
    case Criterion::ValPoly1: return r.val.poly1;
    case Criterion::ValAcc: return r.val.acc;
  }
  return 0.0;
}

/// Strict improvement; equal values never count.
inline constexpr bool improves(Criterion c, double candidate, double incumbent) noexcept {
  return higher_is_better(c) ? candidate > incumbent : candidate < incumbent;
}

/// Stopping regime: post-hoc when `patience` is empty, otherwise early
/// stopping with that patience.
struct Regime {
  std::optional<int> patience;

  static Regime post_hoc() { return {}; }
  static Regime early_stop(int t) {
    if (t < 1) throw ContractError("Regime: patience must be >= 1");
    return Regime{t};
  }
  bool is_post_hoc() const noexcept { return !patience.has_value(); }

  std::string label() const {
    return patience ? "T=" + std::to_string(*patience) : std::string("disabled");
  }

  friend bool operator==(const Regime&, const Regime&) = default;
};

inline Regime regime_from_string(std::string_view s) {
  if (s == "disabled" || s == "post_hoc" || s == "none") return Regime::post_hoc();
  std::string_view num = s;
  if (num.starts_with("T=")) num.remove_prefix(2);
  try {
    std::size_t used = 0;
    const int t = std::stoi(std::string(num), &used);
    if (used == num.size()) return Regime::early_stop(t);
  } catch (const std::logic_error&) {
  }
  throw ContractError("unknown regime '" + std::string(s) + "'");
}

struct SelectionRule {
  Criterion criterion = Criterion::ValCe;
  Regime regime;

  std::string label() const { return std::string(to_string(criterion)) + "@" + regime.label(); }

  friend bool operator==(const SelectionRule&, const SelectionRule&) = default;
};

struct SelectionResult {
  SelectionRule rule;
  int selected_epoch = 1;
  std::optional<int> halt_epoch;  // set only when the patience condition fired
  bool halted = false;
  double selected_val_value = 0.0;
  double selected_test_acc = 0.0;
  int optimal_test_epoch = 1;
  double optimal_test_acc = 0.0;
  double regret = 0.0;

  /// Equality of everything except the rule that produced the result.
  bool same_selection(const SelectionResult& o) const noexcept {
    return selected_epoch == o.selected_epoch && halt_epoch == o.halt_epoch &&
           halted == o.halted && selected_val_value == o.selected_val_value &&
           selected_test_acc == o.selected_test_acc &&
           optimal_test_epoch == o.optimal_test_epoch &&
           optimal_test_acc == o.optimal_test_acc && regret == o.regret;
  }
};

struct TestOptimum {
  int epoch = 1;
  double accuracy = 0.0;
};

/// Highest test accuracy over all epochs, earliest epoch on ties.
inline TestOptimum test_optimal(const Trajectory& traj) {
  traj.validate();
  TestOptimum best{1, traj.epochs.front().test.acc};
  for (const auto& r : traj.epochs) {
    if (r.test.acc > best.accuracy) best = {r.epoch, r.test.acc};
  }
  return best;
}

namespace detail {

inline SelectionResult make_result(const Trajectory& traj, const SelectionRule& rule,
                                   std::size_t selected_index, const TestOptimum& opt) {
  const auto& rec = traj.epochs[selected_index];
  SelectionResult r;
  r.rule = rule;
  r.selected_epoch = rec.epoch;
  r.selected_val_value = criterion_value(rec, rule.criterion);
  r.selected_test_acc = rec.test.acc;
  r.optimal_test_epoch = opt.epoch;
  r.optimal_test_acc = opt.accuracy;
  r.regret = opt.accuracy - rec.test.acc;
  return r;
}

/// Index of the best criterion value among the first `limit` epochs.
inline std::size_t best_index(const Trajectory& traj, Criterion c, std::size_t limit) {
  std::size_t best = 0;
  double best_value = criterion_value(traj.epochs[0], c);
  for (std::size_t i = 1; i < limit; ++i) {
    const double v = criterion_value(traj.epochs[i], c);
    if (improves(c, v, best_value)) {
      best = i;
      best_value = v;
    }
  }
  return best;
}

inline SelectionResult post_hoc_within(const Trajectory& traj, Criterion c, std::size_t limit,
                                       const TestOptimum& opt) {
  return make_result(traj, SelectionRule{c, Regime::post_hoc()}, best_index(traj, c, limit), opt);
}

inline SelectionResult early_stop_with(const Trajectory& traj, Criterion c, int patience,
                                       const TestOptimum& opt) {
  if (patience < 1) throw ContractError("early_stop_select: patience must be >= 1");
  const SelectionRule rule{c, Regime::early_stop(patience)};
  std::size_t best = 0;
  double best_value = criterion_value(traj.epochs[0], c);
  for (std::size_t i = 1; i < traj.epochs.size(); ++i) {
    const double v = criterion_value(traj.epochs[i], c);
    if (improves(c, v, best_value)) {
      best = i;
      best_value = v;
    } else if (i - best >= static_cast<std::size_t>(patience)) {
      auto r = make_result(traj, rule, best, opt);
      r.halted = true;
      r.halt_epoch = traj.epochs[i].epoch;
      return r;
    }
  }
  // Never fired: equivalent to post-hoc over the recorded epochs.
  return make_result(traj, rule, best, opt);
}

}  // namespace detail

/// Best criterion value over every recorded epoch, earliest on ties.
inline SelectionResult post_hoc_select(const Trajectory& traj, Criterion c) {
  traj.validate();
  return detail::post_hoc_within(traj, c, traj.epochs.size(), test_optimal(traj));
}

/// Simulates early stopping with patience T. The best-so-far epoch is
/// replaced only on strict improvement; training halts at best + T when the
/// T epochs following the best-so-far epoch all fail to improve on it.
inline SelectionResult early_stop_select(const Trajectory& traj, Criterion c, int patience) {
  traj.validate();
  return detail::early_stop_with(traj, c, patience, test_optimal(traj));
}

inline SelectionResult select(const Trajectory& traj, const SelectionRule& rule) {
  return rule.regime.is_post_hoc() ? post_hoc_select(traj, rule.criterion)
                                   : early_stop_select(traj, rule.criterion, *rule.regime.patience);
}

/// Epoch at which training accuracy has been 1.0 for `window` consecutive
/// epochs, if that ever happens.
inline std::optional<int> perfect_fit_epoch(const Trajectory& traj, int window) {
  if (window < 1) return std::nullopt;
  int run = 0;
  for (const auto& r : traj.epochs) {
    run = (r.train_acc >= 1.0) ? run + 1 : 0;
    if (run >= window) return r.epoch;
  }
  return std::nullopt;
}

struct CrossedOptions {
  /// When positive, post-hoc rules only consider epochs up to the point where
  /// the training data has been fitted perfectly for this many epochs.
  int post_hoc_perfect_fit_window = 0;
};

/// Applies every rule to one trajectory. All results share one A*_Test.
inline std::vector<SelectionResult> crossed_selection(const Trajectory& traj,
                                                      std::span<const SelectionRule> rules,
                                                      const CrossedOptions& opts = {}) {
  traj.validate();
  const TestOptimum opt = test_optimal(traj);
  std::size_t post_hoc_limit = traj.epochs.size();
  if (auto pf = perfect_fit_epoch(traj, opts.post_hoc_perfect_fit_window))
    post_hoc_limit = static_cast<std::size_t>(*pf);

  std::vector<SelectionResult> out;
  out.reserve(rules.size());
  for (const auto& rule : rules) {
    if (rule.regime.is_post_hoc())
      out.push_back(detail::post_hoc_within(traj, rule.criterion, post_hoc_limit, opt));
    else
      out.push_back(detail::early_stop_with(traj, rule.criterion, *rule.regime.patience, opt));
  }
  return out;
}

/// Criteria x regimes, criteria varying fastest.
inline std::vector<SelectionRule> make_rules(std::span<const Criterion> criteria,
                                             std::span<const Regime> regimes) {
  std::vector<SelectionRule> rules;
  for (const auto& g : regimes)
    for (Criterion c : criteria) rules.push_back({c, g});
  return rules;
}

/// The 12 rules of the default design: 4 criteria x {T=10, T=50, post-hoc}.
inline std::vector<SelectionRule> default_rules() {
  const Regime regimes[] = {Regime::early_stop(10), Regime::early_stop(50), Regime::post_hoc()};
  return make_rules(kAllCriteria, regimes);
}

}  // namespace valsel
