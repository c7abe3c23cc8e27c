// Trains one small network on synthetic blobs and prints the validation
// curve every few epochs, plus where early stopping with T=10 would halt.

#include <cstdio>

#include "valsel/harness.hpp"

int main() {
  using namespace valsel;
  BlobSpec spec;
  spec.per_class = 150;
  spec.classes = 3;
  spec.separation = 2.5;
  const Dataset ds = make_blobs(spec, Rng(7), "toy");
  const FoldPlan plan = stratified_kfold(ds, 10, Rng(1));
  const SplitIndices idx = fold_split(plan, 0, ds.y, 0.15, Rng(2));
  const PreparedSplit split = prepare_split(ds, idx);

  const std::size_t h = hidden_size_for_ratio(1.0, ds.X.cols(), 3, idx.train.size());
  const ModelConfig mc{ds.X.cols(), h, 3};
  TrainConfig tc;
  tc.max_epochs = 400;
  tc.seed = 42;
  const LossSpec loss{LossKind::CE};
  std::printf("train %zu, val %zu, test %zu, H=%zu (%zu params)\n", idx.train.size(), idx.val.size(),
              idx.test.size(), h, mc.param_count());

  const Trajectory t = run_training(split, loss, mc, tc);
  std::printf("%6s %9s %8s %9s %9s\n", "epoch", "val_ce", "val_acc", "test_acc", "train_acc");
  for (const auto& e : t.epochs)
    if (e.epoch == 1 || e.epoch % 40 == 0)
      std::printf("%6d %9.4f %8.4f %9.4f %9.4f\n", e.epoch, e.val.ce, e.val.acc, e.test.acc, e.train_acc);

  const auto es = early_stop_select(t, Criterion::ValCe, 10);
  const auto ph = post_hoc_select(t, Criterion::ValCe);
  std::printf("\nval_ce@T=10:      epoch %d (halted %s), test acc %.4f, regret %.4f\n", es.selected_epoch,
              es.halt_epoch ? std::to_string(*es.halt_epoch).c_str() : "never", es.selected_test_acc, es.regret);
  std::printf("val_ce@disabled:  epoch %d, test acc %.4f, regret %.4f\n", ph.selected_epoch, ph.selected_test_acc,
              ph.regret);
  return 0;
}
