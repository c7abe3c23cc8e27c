// Training objectives (cross-entropy, Poly-1, C-Loss), their gradients with
// respect to the logits, and classification accuracy.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "valsel/numkernel.hpp"

namespace valsel {

enum class LossKind { CE, CLoss, Poly1 };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::CE: return "ce";
    case LossKind::CLoss: return "closs";
    case LossKind::Poly1: return "poly1";
  }
  return "?";
}

inline LossKind loss_kind_from_string(std::string_view s) {
  if (s == "ce" || s == "cross_entropy") return LossKind::CE;
  if (s == "closs" || s == "c_loss") return LossKind::CLoss;
  if (s == "poly1" || s == "poly_1") return LossKind::Poly1;
  throw ContractError("unknown loss '" + std::string(s) + "' (expected ce, closs or poly1)");
}

/// A training objective plus the hyperparameters of all three losses.
/// sigma/beta only matter for C-Loss, epsilon only for Poly-1.
struct LossSpec {
  LossKind kind = LossKind::CE;
  double sigma = 0.5;
  double beta = 1.0;
  double epsilon = 1.0;

  void validate() const {
    if (!(sigma > 0.0)) throw ContractError("LossSpec: sigma must be > 0");
    if (!(beta > 0.0)) throw ContractError("LossSpec: beta must be > 0");
    if (!(epsilon >= 0.0)) throw ContractError("LossSpec: epsilon must be >= 0");
  }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

/// Mean losses and accuracy of one model on one data split.
struct MetricVector {
  double ce = 0.0;
  double closs = 0.0;
  double poly1 = 0.0;
  double acc = 0.0;

  friend bool operator==(const MetricVector&, const MetricVector&) = default;
};

struct LossValueGrad {
  double value = 0.0;
  Matrix grad;  // d(mean loss)/d(logits), N x K
};

/// Lower bound applied to the true-class probability inside logarithms.
inline constexpr double kProbFloor = 1e-12;

namespace detail {

inline void check_labels(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() != labels.size()) {
    throw ContractError("loss: probs has " + std::to_string(probs.rows()) + " rows but " +
                        std::to_string(labels.size()) + " labels given");
  }
  if (probs.rows() == 0) throw ContractError("loss: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols())
      throw ContractError("loss: label out of range");
  }
}

}  // namespace detail

/// Row-wise softmax with max subtraction.
inline Matrix softmax(const Matrix& logits) {
  if (!logits.all_finite()) throw ContractError("softmax: non-finite logits");
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    auto out = p.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      out[k] = std::exp(z[k] - zmax);
      sum += out[k];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

/// Poly-1: mean of -log m_y + eps (1 - m_y). With eps = 0 this is exactly
/// cross-entropy, and ce_value_grad is implemented through it.
inline LossValueGrad poly1_value_grad(const Matrix& probs, std::span<const int> labels,
                                      double epsilon) {
  detail::check_labels(probs, labels);
  if (!(epsilon >= 0.0)) throw ContractError("poly1: epsilon must be >= 0");
  const std::size_t n = probs.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValueGrad out{0.0, Matrix(n, probs.cols())};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const double my = probs(i, y);
    total += -std::log(std::max(my, kProbFloor)) + epsilon * (1.0 - my);
    // d/dz_j [-log m_y] = p_j - [j=y];  d/dz_j [eps (1 - m_y)] = eps m_y (p_j - [j=y])
    const double scale = (1.0 + epsilon * my) * inv_n;
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      const double delta = (j == y) ? 1.0 : 0.0;
      out.grad(i, j) = scale * (probs(i, j) - delta);
    }
  }
  out.value = total * inv_n;
  return out;
}

inline LossValueGrad ce_value_grad(const Matrix& probs, std::span<const int> labels) {
  return poly1_value_grad(probs, labels, 0.0);
}

/// Gaussian correntropy kernel k_sigma(u) = exp(-u^2 / (2 sigma^2)).
inline double correntropy_kernel(double u, double sigma) {
  return std::exp(-(u * u) / (2.0 * sigma * sigma));
}

/// C-Loss applied one-vs-rest: per sample beta * sum_k (1 - k_sigma(t_k - m_k))
/// with t the one-hot target, averaged over samples. The gradient goes through
/// the full softmax Jacobian.
inline LossValueGrad closs_value_grad(const Matrix& probs, std::span<const int> labels,
                                      double sigma, double beta) {
  detail::check_labels(probs, labels);
  if (!(sigma > 0.0) || !(beta > 0.0)) throw ContractError("closs: sigma and beta must be > 0");
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_s2 = 1.0 / (sigma * sigma);
  LossValueGrad out{0.0, Matrix(n, k)};
  std::vector<double> dm(k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double u = ((c == y) ? 1.0 : 0.0) - probs(i, c);
      const double ker = correntropy_kernel(u, sigma);
      total += beta * (1.0 - ker);
      dm[c] = -beta * ker * u * inv_s2;  // dL/dm_c
      dot += dm[c] * probs(i, c);
    }
    for (std::size_t c = 0; c < k; ++c) out.grad(i, c) = probs(i, c) * (dm[c] - dot) * inv_n;
  }
  out.value = total * inv_n;
  return out;
}

inline LossValueGrad loss_value_grad(const LossSpec& spec, const Matrix& probs,
                                     std::span<const int> labels) {
  switch (spec.kind) {
    case LossKind::CE: return ce_value_grad(probs, labels);
    case LossKind::Poly1: return poly1_value_grad(probs, labels, spec.epsilon);
    case LossKind::CLoss: return closs_value_grad(probs, labels, spec.sigma, spec.beta);
  }
  throw ContractError("loss_value_grad: unknown loss kind");
}

/// Index of the row maximum; ties go to the lowest index.
inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

inline double accuracy(const Matrix& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    if (argmax_row(probs.row(i)) == static_cast<std::size_t>(labels[i])) ++correct;
  return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

/// All four validation criteria in one pass. Only the hyperparameters of
/// `hyper` are used; its kind is ignored.
inline MetricVector evaluate_all(const Matrix& probs, std::span<const int> labels,
                                 const LossSpec& hyper = {}) {
  detail::check_labels(probs, labels);
  hyper.validate();
  const std::size_t n = probs.rows();
  double ce = 0.0, poly = 0.0, cl = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    const auto y = static_cast<std::size_t>(labels[i]);
    const double my = row[y];
    const double nll = -std::log(std::max(my, kProbFloor));
    ce += nll;
    poly += nll + hyper.epsilon * (1.0 - my);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double u = ((c == y) ? 1.0 : 0.0) - row[c];
      cl += hyper.beta * (1.0 - correntropy_kernel(u, hyper.sigma));
    }
    if (argmax_row(row) == y) ++correct;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return MetricVector{ce * inv_n, cl * inv_n, poly * inv_n,
                      static_cast<double>(correct) / static_cast<double>(n)};
}

}  // namespace valsel
