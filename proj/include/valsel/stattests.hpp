// Hypothesis tests comparing validation-selected test accuracy against the
// test-optimal accuracy across folds, plus acceptance-rate aggregation.
//
// Pipeline per paired sample (d = selected - optimal):
//   Shapiro-Wilk on d  -> normality not rejected -> paired one-tailed t-test
//                      -> otherwise              -> one-tailed Wilcoxon signed-rank
// with H1: mean(selected) < mean(optimal).
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "valsel/criteria.hpp"
#include "valsel/numkernel.hpp"
#include "valsel/selector.hpp"

namespace valsel {

// ---------------------------------------------------------------------------
// Distribution functions

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Inverse standard normal CDF: Wichura's AS 241 rational approximation
/// followed by one Halley step against erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw ContractError("normal_quantile: p must lie in [0, 1]");
  }
  auto horner = [](const double* c, double x) {
    double s = c[7];
    for (int i = 6; i >= 0; --i) s = s * x + c[i];
    return s;
  };
  static constexpr double a[8] = {3.3871328727963666080e0,  1.3314166789178437745e+2,
                                  1.9715909503065514427e+3, 1.3731693765509461125e+4,
                                  4.5921953931549871457e+4, 6.7265770927008700853e+4,
                                  3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static constexpr double b[8] = {1.0,
                                  4.2313330701600911252e+1,
                                  6.8718700749205790830e+2,
                                  5.3941960214247511077e+3,
                                  2.1213794301586595867e+4,
                                  3.9307895800092710610e+4,
                                  2.8729085735721942674e+4,
                                  5.2264952788528545610e+3};
  static constexpr double c[8] = {1.42343711074968357734e0,  4.63033784615654529590e0,
                                  5.76949722146069140550e0,  3.64784832476320460504e0,
                                  1.27045825245236838258e0,  2.41780725177450611770e-1,
                                  2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr double d[8] = {1.0,
                                  2.05319162663775882187e0,
                                  1.67638483018380384940e0,
                                  6.89767334985100004550e-1,
                                  1.48103976427480074590e-1,
                                  1.51986665636164571966e-2,
                                  5.47593808499534494600e-4,
                                  1.05075007164441684324e-9};
  static constexpr double e[8] = {6.65790464350110377720e0,  5.46378491116411436990e0,
                                  1.78482653991729133580e0,  2.96560571828504891230e-1,
                                  2.65321895265761230930e-2, 1.24266094738807843860e-3,
                                  2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr double f[8] = {1.0,
                                  5.99832206555887937690e-1,
                                  1.36929880922735805310e-1,
                                  1.48753612908506148525e-2,
                                  7.86869131145613259100e-4,
                                  1.84631831751005468180e-5,
                                  1.42151175831644588870e-7,
                                  2.04426310338993978564e-15};
  const double q = p - 0.5;
  double x;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q * horner(a, r) / horner(b, r);
  } else {
    double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
    if (r <= 5.0) {
      r -= 1.6;
      x = horner(c, r) / horner(d, r);
    } else {
      r -= 5.0;
      x = horner(e, r) / horner(f, r);
    }
    if (q < 0.0) x = -x;
  }
  // Halley refinement.
  const double err = normal_cdf(x) - p;
  const double u = err / normal_pdf(x);
  return x - u / (1.0 + 0.5 * x * u);
}

namespace detail {

inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b), evaluated with the modified Lentz
/// continued fraction on whichever side of the mean converges faster.
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ContractError("incomplete_beta: a, b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

inline double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw ContractError("student_t_cdf: dof must be > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (Royston 1995, AS R94)

struct ShapiroResult {
  double w = 1.0;
  double p = 1.0;
  bool degenerate = false;  // zero range; the pipeline treats it as non-normal
};

namespace detail {

/// c[0] + c[1] x + c[2] x^2 + ...
inline double poly(std::span<const double> c, double x) {
  double s = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) s = s * x + c[i];
  return s;
}

}  // namespace detail

inline ShapiroResult shapiro_wilk(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 3 || n > 5000)
    throw ContractError("shapiro_wilk: sample size must be in [3, 5000], got " + std::to_string(n));

  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  const double scale = std::max(std::fabs(x.front()), std::fabs(x.back()));
  if (!(range > 1e-12 * std::max(1.0, scale))) return ShapiroResult{1.0, 0.0, true};

  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  const std::size_t half = n / 2;
  const double an = static_cast<double>(n);
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::numbers::sqrt2 / 2.0;
  } else {
    std::vector<double> m(half);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = detail::poly(c1, rsn) - m[0] / ssumm2;
    std::size_t first_scaled;
    double fac;
    if (n > 5) {
      const double a2 = -m[1] / ssumm2 + detail::poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
      first_scaled = 2;
    } else {
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
      first_scaled = 1;
    }
    a[0] = a1;
    for (std::size_t i = first_scaled; i < half; ++i) a[i] = -m[i] / fac;
  }

  // W as the squared correlation between ordered data and coefficients.
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= an;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  double num = 0.0;
  for (std::size_t i = 0; i < half; ++i) num += a[i] * (x[n - 1 - i] - x[i]);
  double w = std::min(1.0, num * num / ss);
  const double w1 = 1.0 - w;

  ShapiroResult res{w, 1.0, false};
  if (n == 3) {
    constexpr double pi6 = 6.0 / std::numbers::pi;
    constexpr double stqr = std::numbers::pi / 3.0;
    res.p = std::max(0.0, pi6 * (std::asin(std::sqrt(w)) - stqr));
    return res;
  }
  if (w1 <= 0.0) return res;  // perfect fit: p = 1
  double y = std::log(w1);
  const double lxx = std::log(an);
  double mu, sd;
  if (n <= 11) {
    const double gamma = detail::poly(g, an);
    if (y >= gamma) {
      res.p = 1e-99;
      return res;
    }
    y = -std::log(gamma - y);
    mu = detail::poly(c3, an);
    sd = std::exp(detail::poly(c4, an));
  } else {
    mu = detail::poly(c5, lxx);
    sd = std::exp(detail::poly(c6, lxx));
  }
  res.p = 1.0 - normal_cdf((y - mu) / sd);
  return res;
}

// ---------------------------------------------------------------------------
// Paired tests, H1: mean(a) < mean(b)

struct TestStat {
  double statistic = 0.0;
  double p = 1.0;
};

inline TestStat paired_t_one_tailed_less(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("paired_t: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw ContractError("paired_t: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  bool all_zero = true, constant = true;
  const double d0 = a[0] - b[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double di = a[i] - b[i];
    if (di != 0.0) all_zero = false;
    if (di != d0) constant = false;
    ss += (di - mean) * (di - mean);
  }
  if (all_zero) return {0.0, 1.0};
  // identical differences: rounding in the mean must not invent a spread
  const double sd = constant ? 0.0 : std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    if (mean < 0.0) return {-std::numeric_limits<double>::infinity(), 0.0};
    return {std::numeric_limits<double>::infinity(), 1.0};
  }
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  return {t, student_t_cdf(t, static_cast<double>(n - 1))};
}

struct SignedRanks {
  std::vector<double> diffs;  // nonzero differences
  std::vector<int> doubled_ranks;  // 2 * average rank of |d|, always integral
};

inline SignedRanks signed_ranks(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("wilcoxon: length mismatch");
  SignedRanks sr;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) sr.diffs.push_back(d);
  }
  const std::size_t m = sr.diffs.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::fabs(sr.diffs[i]) < std::fabs(sr.diffs[j]);
  });
  sr.doubled_ranks.assign(m, 0);
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j + 1 < m && std::fabs(sr.diffs[order[j + 1]]) == std::fabs(sr.diffs[order[i]])) ++j;
    // ranks i+1 .. j+1 share their average; doubled it is (i+1)+(j+1)
    const int doubled = static_cast<int>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) sr.doubled_ranks[order[k]] = doubled;
    i = j + 1;
  }
  return sr;
}

/// Sign patterns above this count switch to the normal approximation.
inline constexpr std::size_t kWilcoxonExactMax = 20;

/// W+ = sum of ranks of positive differences; p = P(W+ <= observed).
/// Exact by enumerating all 2^m sign patterns when m <= 20.
inline TestStat wilcoxon_signed_rank_one_tailed_less(std::span<const double> a,
                                                     std::span<const double> b) {
  const SignedRanks sr = signed_ranks(a, b);
  const std::size_t m = sr.diffs.size();
  if (m == 0) return {0.0, 1.0};
  long long observed2 = 0;  // doubled W+
  for (std::size_t i = 0; i < m; ++i)
    if (sr.diffs[i] > 0.0) observed2 += sr.doubled_ranks[i];
  const double w_plus = static_cast<double>(observed2) / 2.0;

  if (m <= kWilcoxonExactMax) {
    // Gray-code walk: each step flips one sign, so the running sum is O(1).
    const std::uint64_t patterns = std::uint64_t{1} << m;
    std::uint64_t at_or_below = 0;
    long long sum2 = 0;
    std::uint64_t gray = 0;
    for (std::uint64_t step = 0; step < patterns; ++step) {
      if (step > 0) {
        const int bit = std::countr_zero(step);
        gray ^= std::uint64_t{1} << bit;
        sum2 += (gray >> bit & 1U) ? sr.doubled_ranks[bit] : -sr.doubled_ranks[bit];
      }
      if (sum2 <= observed2) ++at_or_below;
    }
    return {w_plus, static_cast<double>(at_or_below) / static_cast<double>(patterns)};
  }

  const double md = static_cast<double>(m);
  const double mean = md * (md + 1.0) / 4.0;
  double var = md * (md + 1.0) * (2.0 * md + 1.0) / 24.0;
  std::map<int, int> ties;
  for (int r : sr.doubled_ranks) ++ties[r];
  for (const auto& [rank, t] : ties) {
    const double tt = static_cast<double>(t);
    var -= (tt * tt * tt - tt) / 48.0;
  }
  if (var <= 0.0) return {w_plus, w_plus <= mean ? 1.0 : 0.0};
  const double z = (w_plus - mean + 0.5) / std::sqrt(var);
  return {w_plus, std::min(1.0, normal_cdf(z))};
}

// ---------------------------------------------------------------------------
// Selected-vs-optimal comparison

struct PairedSample {
  std::vector<double> selected;  // per fold
  std::vector<double> optimal;   // per fold, A*_Test

  void validate() const {
    if (selected.size() != optimal.size())
      throw ContractError("PairedSample: selected/optimal length mismatch");
    if (selected.size() < 3) throw ContractError("PairedSample: need at least 3 folds");
    for (std::size_t i = 0; i < selected.size(); ++i)
      if (selected[i] > optimal[i])
        throw ContractError("PairedSample: selected accuracy exceeds the optimum");
  }
};

enum class TestKind { T, Wilcoxon };

inline std::string_view to_string(TestKind k) { return k == TestKind::T ? "t" : "wilcoxon"; }

/// Verdict plus everything needed to recompute it at another alpha.
struct TestOutcome {
  double normality_w = 1.0;
  double normality_p = 1.0;
  bool normality_degenerate = false;
  TestStat t;
  TestStat wilcoxon;
  TestKind test_used = TestKind::Wilcoxon;
  double statistic = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  bool reject = false;
};

/// Re-applies the normality gate and decision at `alpha`. The gate uses
/// `gate_alpha` when given, otherwise the working alpha.
inline TestOutcome decide(TestOutcome o, double alpha, std::optional<double> gate_alpha = {}) {
  const double gate = gate_alpha.value_or(alpha);
  const bool normal = !o.normality_degenerate && o.normality_p >= gate;
  o.test_used = normal ? TestKind::T : TestKind::Wilcoxon;
  const TestStat& chosen = normal ? o.t : o.wilcoxon;
  o.statistic = chosen.statistic;
  o.p_value = chosen.p;
  o.alpha = alpha;
  o.reject = o.p_value < alpha;
  return o;
}

inline TestOutcome compare_to_optimal(const PairedSample& ps, double alpha = 0.05) {
  ps.validate();
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("compare_to_optimal: alpha in (0, 1]");
  std::vector<double> d(ps.selected.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = ps.selected[i] - ps.optimal[i];
  TestOutcome o;
  const ShapiroResult sw = shapiro_wilk(d);
  o.normality_w = sw.w;
  o.normality_p = sw.p;
  o.normality_degenerate = sw.degenerate;
  o.t = paired_t_one_tailed_less(ps.selected, ps.optimal);
  o.wilcoxon = wilcoxon_signed_rank_one_tailed_less(ps.selected, ps.optimal);
  return decide(o, alpha);
}

// ---------------------------------------------------------------------------
// Aggregation

/// One hypothesis-test verdict with the design coordinates it belongs to.
struct KeyedOutcome {
  std::string dataset;
  double ratio = 1.0;
  LossKind training_loss = LossKind::CE;
  SelectionRule rule;
  TestOutcome outcome;
};

struct RateCell {
  std::size_t accepted = 0;
  std::size_t total = 0;

  double percent() const noexcept {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(accepted) / static_cast<double>(total);
  }
  void add(bool accept) noexcept {
    ++total;
    if (accept) ++accepted;
  }
};

/// Orders regimes as T ascending, then post-hoc ("disabled").
struct RegimeOrder {
  bool operator()(const Regime& a, const Regime& b) const noexcept {
    if (a.is_post_hoc() != b.is_post_hoc()) return b.is_post_hoc();
    if (a.is_post_hoc()) return false;
    return *a.patience < *b.patience;
  }
};

struct AcceptanceRow {
  LossKind training_loss = LossKind::CE;
  Regime regime;
  std::map<Criterion, RateCell> cells;
};

/// Percentage of non-rejected null hypotheses per (training loss, regime,
/// criterion); rows ordered by loss then regime, columns by criterion.
inline std::vector<AcceptanceRow> acceptance_rate(std::span<const KeyedOutcome> outcomes) {
  std::map<LossKind, std::map<Regime, std::map<Criterion, RateCell>, RegimeOrder>> grid;
  for (const auto& k : outcomes)
    grid[k.training_loss][k.rule.regime][k.rule.criterion].add(!k.outcome.reject);
  std::vector<AcceptanceRow> rows;
  for (auto& [loss, by_regime] : grid)
    for (auto& [regime, cells] : by_regime) rows.push_back({loss, regime, cells});
  return rows;
}

struct SweepPoint {
  LossKind training_loss = LossKind::CE;
  Regime regime;
  Criterion criterion = Criterion::ValCe;
  double x = 0.0;  // alpha or r
  RateCell cell;
};

namespace detail {

using SweepKey = std::tuple<LossKind, Regime, Criterion, double>;

struct SweepKeyLess {
  bool operator()(const SweepKey& a, const SweepKey& b) const noexcept {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return RegimeOrder{}(std::get<1>(a), std::get<1>(b));
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) < std::get<2>(b);
    return std::get<3>(a) < std::get<3>(b);
  }
};

inline std::vector<SweepPoint> flatten(const std::map<SweepKey, RateCell, SweepKeyLess>& m) {
  std::vector<SweepPoint> out;
  for (const auto& [key, cell] : m)
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), cell});
  return out;
}

}  // namespace detail

/// Acceptance rate per alpha. Each outcome's decision is recomputed at every
/// alpha; the normality gate follows the working alpha unless `gate_alpha`
/// pins it.
inline std::vector<SweepPoint> alpha_sweep(std::span<const KeyedOutcome> outcomes,
                                           std::span<const double> alphas,
                                           std::optional<double> gate_alpha = {}) {
  std::map<detail::SweepKey, RateCell, detail::SweepKeyLess> m;
  for (const auto& k : outcomes)
    for (double alpha : alphas) {
      const TestOutcome o = decide(k.outcome, alpha, gate_alpha);
      m[{k.training_loss, k.rule.regime, k.rule.criterion, alpha}].add(!o.reject);
    }
  return detail::flatten(m);
}

/// Acceptance rate per parameter-to-sample ratio, using each stored verdict.
inline std::vector<SweepPoint> ratio_breakdown(std::span<const KeyedOutcome> outcomes) {
  std::map<detail::SweepKey, RateCell, detail::SweepKeyLess> m;
  for (const auto& k : outcomes)
    m[{k.training_loss, k.rule.regime, k.rule.criterion, k.ratio}].add(!k.outcome.reject);
  return detail::flatten(m);
}

}  // namespace valsel
