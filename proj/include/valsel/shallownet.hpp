// Single-hidden-layer ReLU classifier trained with plain minibatch SGD,
// emitting one trajectory record per epoch.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "valsel/criteria.hpp"
#include "valsel/datapipe.hpp"
#include "valsel/numkernel.hpp"
#include "valsel/selector.hpp"

namespace valsel {

struct ModelConfig {
  std::size_t input_dim = 1;  // d
  std::size_t hidden = 1;     // H
  std::size_t classes = 2;    // K

  std::size_t param_count() const noexcept {
    return (input_dim + 1) * hidden + (hidden + 1) * classes;
  }

  void validate() const {
    if (input_dim < 1 || hidden < 1 || classes < 2)
      throw ContractError("ModelConfig: need d >= 1, H >= 1, K >= 2");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weights and biases. Gradients use the same layout.
struct Params {
  Matrix W1;               // d x H
  std::vector<double> b1;  // H
  Matrix W2;               // H x K
  std::vector<double> b2;  // K

  static Params zeros(const ModelConfig& mc) {
    return {Matrix(mc.input_dim, mc.hidden), std::vector<double>(mc.hidden, 0.0),
            Matrix(mc.hidden, mc.classes), std::vector<double>(mc.classes, 0.0)};
  }

  bool all_finite() const noexcept {
    auto finite = [](std::span<const double> v) {
      for (double x : v)
        if (!std::isfinite(x)) return false;
      return true;
    };
    return finite(W1.data()) && finite(b1) && finite(W2.data()) && finite(b2);
  }

  friend bool operator==(const Params&, const Params&) = default;
};

struct TrainConfig {
  double lr = 0.01;
  std::size_t batch = 64;
  int max_epochs = 20000;
  std::uint64_t seed = 0;
  /// Stop once train accuracy has been 1.0 for `perfect_fit_epochs`
  /// consecutive epochs. Meant for runs without early stopping.
  bool perfect_fit_stop = false;
  int perfect_fit_epochs = 10;

  void validate() const {
    if (!(lr > 0.0)) throw ContractError("TrainConfig: lr must be > 0");
    if (batch < 1) throw ContractError("TrainConfig: batch must be >= 1");
    if (max_epochs < 1) throw ContractError("TrainConfig: max_epochs must be >= 1");
    if (perfect_fit_stop && perfect_fit_epochs < 1)
      throw ContractError("TrainConfig: perfect_fit_epochs must be >= 1");
  }
};

/// Parameters or activations went non-finite. Carries the epoch and the
/// trajectory recorded before the failure.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, Trajectory partial)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch)),
        epoch_(epoch),
        partial_(std::move(partial)) {}

  int epoch() const noexcept { return epoch_; }
  const Trajectory& partial() const noexcept { return partial_; }

 private:
  int epoch_;
  Trajectory partial_;
};

/// Smallest-gap hidden width: argmin over H >= 1 of |param_count(H) - r * n_train|,
/// ties to the smaller H.
inline std::size_t hidden_size_for_ratio(double ratio, std::size_t d, std::size_t k,
                                         std::size_t n_train) {
  if (!(ratio > 0.0)) throw ContractError("hidden_size_for_ratio: r must be > 0");
  if (d < 1 || k < 1 || n_train < 1)
    throw ContractError("hidden_size_for_ratio: d, K, n_train must be >= 1");
  const double target = ratio * static_cast<double>(n_train);
  const double per_unit = static_cast<double>(d + 1 + k);
  const double kd = static_cast<double>(k);
  // param_count(H) = H (d + 1 + K) + K is linear in H; check the two
  // integers around the real-valued solution.
  const double h_real = (target - kd) / per_unit;
  std::size_t lo = h_real < 1.0 ? 1 : static_cast<std::size_t>(std::floor(h_real));
  std::size_t best = lo;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t h = lo; h <= lo + 1; ++h) {
    const double gap = std::fabs(static_cast<double>(h) * per_unit + kd - target);
    if (gap < best_gap) {
      best = h;
      best_gap = gap;
    }
  }
  return best;
}

/// He-normal weights (variance 2/fan_in), zero biases.
inline Params init_params(const ModelConfig& mc, Rng& rng) {
  mc.validate();
  Params p = Params::zeros(mc);
  const double s1 = std::sqrt(2.0 / static_cast<double>(mc.input_dim));
  const double s2 = std::sqrt(2.0 / static_cast<double>(mc.hidden));
  for (double& w : p.W1.data()) w = s1 * rng.normal();
  for (double& w : p.W2.data()) w = s2 * rng.normal();
  return p;
}

struct ForwardPass {
  Matrix pre;     // X W1 + b1
  Matrix hidden;  // relu(pre)
  Matrix logits;
  Matrix probs;
};

/// Thrown by forward() on non-finite activations; run_training turns it
/// into a DivergenceError carrying the epoch.
class NonFiniteActivation : public std::runtime_error {
 public:
  NonFiniteActivation() : std::runtime_error("non-finite activations") {}
};

inline ForwardPass forward(const Params& p, const Matrix& X) {
  if (X.cols() != p.W1.rows())
    throw ContractError("forward: input has " + std::to_string(X.cols()) + " features, model expects " +
                        std::to_string(p.W1.rows()));
  ForwardPass f;
  f.pre = matmul(X, p.W1);
  f.hidden = Matrix(f.pre.rows(), f.pre.cols());
  for (std::size_t i = 0; i < f.pre.rows(); ++i) {
    auto z = f.pre.row(i);
    auto a = f.hidden.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] += p.b1[j];
      a[j] = z[j] > 0.0 ? z[j] : 0.0;
    }
  }
  f.logits = matmul(f.hidden, p.W2);
  for (std::size_t i = 0; i < f.logits.rows(); ++i) {
    auto z = f.logits.row(i);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += p.b2[k];
  }
  if (!f.logits.all_finite()) throw NonFiniteActivation();
  f.probs = softmax(f.logits);
  return f;
}

/// Mean loss over the batch and its gradient with respect to every
/// parameter. ReLU uses subgradient 0 at 0.
inline std::pair<double, Params> loss_and_gradient(const Params& p, const Matrix& X,
                                                   std::span<const int> y, const LossSpec& loss) {
  const ForwardPass f = forward(p, X);
  const LossValueGrad lg = loss_value_grad(loss, f.probs, y);
  const Matrix& dlogits = lg.grad;

  Params g;
  g.W2 = matmul_tn(f.hidden, dlogits);
  g.b2.assign(dlogits.cols(), 0.0);
  for (std::size_t i = 0; i < dlogits.rows(); ++i)
    for (std::size_t k = 0; k < dlogits.cols(); ++k) g.b2[k] += dlogits(i, k);

  Matrix dpre = matmul_nt(dlogits, p.W2);
  for (std::size_t i = 0; i < dpre.rows(); ++i) {
    auto z = f.pre.row(i);
    auto dz = dpre.row(i);
    for (std::size_t j = 0; j < dz.size(); ++j)
      if (!(z[j] > 0.0)) dz[j] = 0.0;
  }
  g.W1 = matmul_tn(X, dpre);
  g.b1.assign(dpre.cols(), 0.0);
  for (std::size_t i = 0; i < dpre.rows(); ++i)
    for (std::size_t j = 0; j < dpre.cols(); ++j) g.b1[j] += dpre(i, j);
  return {lg.value, std::move(g)};
}

inline void sgd_step(Params& p, const Params& g, double lr) {
  auto step = [lr](std::span<double> w, std::span<const double> dw) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * dw[i];
  };
  step(p.W1.data(), g.W1.data());
  step(p.b1, g.b1);
  step(p.W2.data(), g.W2.data());
  step(p.b2, g.b2);
}

/// One pass over a fresh shuffle of the training rows in minibatches of
/// `tc.batch`; the final partial batch is included.
inline Params train_epoch(Params p, const Matrix& X, std::span<const int> y, const LossSpec& loss,
                          const TrainConfig& tc, Rng& rng) {
  if (X.rows() != y.size()) throw ContractError("train_epoch: X rows != label count");
  const auto order = shuffled_indices(rng, X.rows());
  std::vector<int> yb;
  for (std::size_t start = 0; start < order.size(); start += tc.batch) {
    const std::size_t end = std::min(order.size(), start + tc.batch);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    const Matrix Xb = X.select_rows(idx);
    yb.clear();
    for (auto i : idx) yb.push_back(y[i]);
    const auto [value, grad] = loss_and_gradient(p, Xb, yb, loss);
    sgd_step(p, grad, tc.lr);
  }
  if (!p.all_finite()) throw NonFiniteActivation();
  return p;
}

inline MetricVector evaluate(const Params& p, const Dataset& ds, const LossSpec& hyper) {
  return evaluate_all(forward(p, ds.X).probs, ds.y, hyper);
}

/// Read-only view used to score the test split each epoch. It only ever
/// sees a const reference to the parameters, so nothing it computes can
/// reach the optimizer or the stopping logic.
using EvalProbe = std::function<MetricVector(const Params&)>;

inline EvalProbe make_probe(const Dataset& ds, const LossSpec& hyper) {
  return [&ds, hyper](const Params& p) { return evaluate(p, ds, hyper); };
}

/// Trains for up to tc.max_epochs, recording validation metrics, test
/// metrics (through `test_probe`) and train accuracy at the end of every
/// epoch. Only train accuracy feeds the optional perfect-fit stop.
inline Trajectory run_training(const Dataset& train, const Dataset& val, const EvalProbe& test_probe,
                               const LossSpec& loss, const ModelConfig& mc, const TrainConfig& tc,
                               RunMeta meta = {}) {
  tc.validate();
  loss.validate();
  mc.validate();
  if (train.X.cols() != mc.input_dim || val.X.cols() != mc.input_dim)
    throw ContractError("run_training: feature count does not match ModelConfig");
  if (train.size() == 0 || val.size() == 0) throw ContractError("run_training: empty split");

  const Rng root(tc.seed);
  Rng init_rng = root.derive("init");
  Rng shuffle_rng = root.derive("shuffle");
  Params p = init_params(mc, init_rng);

  Trajectory traj;
  meta.loss = loss;
  meta.seed = tc.seed;
  traj.meta = std::move(meta);
  traj.epochs.reserve(static_cast<std::size_t>(tc.max_epochs));

  int perfect_run = 0;
  for (int e = 1; e <= tc.max_epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    try {
      p = train_epoch(std::move(p), train.X, train.y, loss, tc, shuffle_rng);
      rec.train_acc = accuracy(forward(p, train.X).probs, train.y);
      rec.val = evaluate(p, val, loss);
      rec.test = test_probe(p);
    } catch (const NonFiniteActivation&) {
      throw DivergenceError(e, traj);
    }
    traj.epochs.push_back(rec);
    if (tc.perfect_fit_stop) {
      perfect_run = rec.train_acc >= 1.0 ? perfect_run + 1 : 0;
      if (perfect_run >= tc.perfect_fit_epochs) break;
    }
  }
  return traj;
}

inline Trajectory run_training(const PreparedSplit& split, const LossSpec& loss,
                               const ModelConfig& mc, const TrainConfig& tc, RunMeta meta = {}) {
  return run_training(split.train, split.val, make_probe(split.test, loss), loss, mc, tc,
                      std::move(meta));
}

}  // namespace valsel
