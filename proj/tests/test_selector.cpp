#include <gtest/gtest.h>

#include <vector>

#include "oracles.hpp"
#include "suites.hpp"
#include "valsel/selector.hpp"

namespace valsel {
namespace {

Trajectory make_traj(const std::vector<double>& val_ce, std::vector<double> test_acc = {},
                     std::vector<double> train_acc = {}) {
  Trajectory t;
  for (std::size_t i = 0; i < val_ce.size(); ++i) {
    EpochRecord r;
    r.epoch = static_cast<int>(i) + 1;
    r.val.ce = val_ce[i];
    r.val.acc = 1.0 - val_ce[i] / 10.0;
    r.test.acc = i < test_acc.size() ? test_acc[i] : 0.5;
    r.train_acc = i < train_acc.size() ? train_acc[i] : 0.5;
    t.epochs.push_back(r);
  }
  return t;
}

TEST(PostHoc, PicksMinimumAndEarliestTie) {
  EXPECT_EQ(post_hoc_select(make_traj({3, 1, 2, 1}), Criterion::ValCe).selected_epoch, 2);
  EXPECT_EQ(post_hoc_select(make_traj({5, 4, 3, 2, 1}), Criterion::ValCe).selected_epoch, 5);
  EXPECT_EQ(post_hoc_select(make_traj({2, 2, 2}), Criterion::ValCe).selected_epoch, 1);
}

TEST(PostHoc, AccuracyIsMaximized) {
  // val.acc = 1 - ce/10, so the max accuracy epoch is the min-ce epoch
  EXPECT_EQ(post_hoc_select(make_traj({3, 1, 2, 1}), Criterion::ValAcc).selected_epoch, 2);
}

TEST(EarlyStop, PlateauHaltsAtBestPlusPatience) {
  const auto r = early_stop_select(make_traj({5, 4, 3, 3, 3}), Criterion::ValCe, 2);
  EXPECT_TRUE(r.halted);
  ASSERT_TRUE(r.halt_epoch.has_value());
  EXPECT_EQ(*r.halt_epoch, 5);
  EXPECT_EQ(r.selected_epoch, 3);
}

TEST(EarlyStop, NeverFiresFallsBackToPostHoc) {
  const auto t = make_traj({5, 4, 3, 2, 1});
  const auto r = early_stop_select(t, Criterion::ValCe, 2);
  EXPECT_FALSE(r.halted);
  EXPECT_FALSE(r.halt_epoch.has_value());
  EXPECT_TRUE(r.same_selection(post_hoc_select(t, Criterion::ValCe)));
}

TEST(EarlyStop, LaterImprovementIsIgnoredAfterHalt) {
  const auto r = early_stop_select(make_traj({2, 3, 4, 0.1}), Criterion::ValCe, 2);
  EXPECT_EQ(r.selected_epoch, 1);
  EXPECT_EQ(*r.halt_epoch, 3);
}

TEST(EarlyStop, InvalidPatienceRejected) {
  EXPECT_THROW(early_stop_select(make_traj({1, 2}), Criterion::ValCe, 0), ContractError);
  EXPECT_THROW(Regime::early_stop(0), ContractError);
}

TEST(TestOptimal, HighestAndEarliest) {
  const auto o = test_optimal(make_traj({1, 1, 1}, {0.5, 0.9, 0.7}));
  EXPECT_EQ(o.epoch, 2);
  EXPECT_DOUBLE_EQ(o.accuracy, 0.9);
  EXPECT_EQ(test_optimal(make_traj({1, 1, 1}, {0.6, 0.6, 0.6})).epoch, 1);
}

TEST(Regret, DifferenceToTestOptimum) {
  const auto r = post_hoc_select(make_traj({3, 1, 2}, {0.9, 0.7, 0.8}), Criterion::ValCe);
  EXPECT_EQ(r.selected_epoch, 2);
  EXPECT_EQ(r.optimal_test_epoch, 1);
  EXPECT_DOUBLE_EQ(r.regret, 0.9 - 0.7);
}

TEST(Crossed, TwelveResultsSharingOneOptimum) {
  Rng rng(8);
  const Trajectory t = oracle::random_trajectory(rng, 200);
  const auto rules = default_rules();
  ASSERT_EQ(rules.size(), 12u);
  const auto res = crossed_selection(t, rules);
  ASSERT_EQ(res.size(), 12u);
  for (std::size_t i = 0; i < res.size(); ++i) {
    EXPECT_EQ(res[i].rule, rules[i]);
    EXPECT_EQ(res[i].optimal_test_epoch, res[0].optimal_test_epoch);
    EXPECT_GE(res[i].regret, 0.0);
    EXPECT_TRUE(res[i].same_selection(select(t, rules[i])));
  }
}

TEST(Crossed, SingleEpochTrajectory) {
  const auto res = crossed_selection(make_traj({1.0}, {0.4}), default_rules());
  for (const auto& r : res) {
    EXPECT_EQ(r.selected_epoch, 1);
    EXPECT_EQ(r.regret, 0.0);
    EXPECT_FALSE(r.halted);
  }
}

TEST(Crossed, PerfectFitTruncatesOnlyPostHoc) {
  // train accuracy hits 1.0 at epoch 2 and stays; window 3 -> limit epoch 4
  const auto t = make_traj({5, 4, 3, 2, 1, 0.5}, {}, {0.9, 1, 1, 1, 1, 1});
  CrossedOptions opts;
  opts.post_hoc_perfect_fit_window = 3;
  ASSERT_EQ(perfect_fit_epoch(t, 3), 4);
  const SelectionRule rules[] = {{Criterion::ValCe, Regime::post_hoc()}, {Criterion::ValCe, Regime::early_stop(2)}};
  const auto res = crossed_selection(t, rules, opts);
  EXPECT_EQ(res[0].selected_epoch, 4);
  EXPECT_EQ(res[1].selected_epoch, 6);
  EXPECT_EQ(crossed_selection(t, rules)[0].selected_epoch, 6);
}

TEST(Crossed, EmptyTrajectoryRejected) {
  EXPECT_THROW(crossed_selection(Trajectory{}, default_rules()), ContractError);
}

TEST(Regime, StringRoundTrip) {
  for (const Regime& g : {Regime::early_stop(10), Regime::early_stop(50), Regime::post_hoc()})
    EXPECT_EQ(regime_from_string(g.label()), g);
  EXPECT_THROW(regime_from_string("T=x"), ContractError);
  EXPECT_THROW(criterion_from_string("val_f1"), ContractError);
}

TEST(Property, LargerPatienceNeverHaltsEarlier) {
  Rng rng(31);
  for (int n = 0; n < 2000; ++n) {
    const std::size_t len = 1 + rng.below(300);
    const Trajectory t = oracle::random_trajectory(rng, len);
    for (Criterion c : kAllCriteria) {
      const int t1 = 1 + static_cast<int>(rng.below(60));
      const int t2 = t1 + 1 + static_cast<int>(rng.below(60));
      const auto a = early_stop_select(t, c, t1);
      const auto b = early_stop_select(t, c, t2);
      const int ha = a.halt_epoch.value_or(static_cast<int>(len) + 1);
      const int hb = b.halt_epoch.value_or(static_cast<int>(len) + 1);
      EXPECT_LE(ha, hb);
      EXPECT_LE(a.selected_epoch, b.selected_epoch);
      // the larger patience sees a superset of epochs, so its pick is at least as good
      const double va = a.selected_val_value, vb = b.selected_val_value;
      EXPECT_FALSE(improves(c, va, vb));
    }
  }
}

TEST(Property, SelectedEpochWithinHaltWindow) {
  Rng rng(32);
  for (int n = 0; n < 2000; ++n) {
    const Trajectory t = oracle::random_trajectory(rng, 1 + rng.below(300));
    const int T = 1 + static_cast<int>(rng.below(50));
    for (Criterion c : kAllCriteria) {
      const auto r = early_stop_select(t, c, T);
      if (r.halted) {
        EXPECT_EQ(*r.halt_epoch - r.selected_epoch, T);
      }
      EXPECT_GE(r.regret, 0.0);
      EXPECT_LE(r.regret, 1.0);
    }
  }
}

TEST(Oracle, SelectorAgainstBruteForce) {
  const auto r = suite::selector_suite(10000);
  EXPECT_TRUE(r.passed()) << (r.notes.empty() ? "" : r.notes[0]);
}

TEST(Oracle, PatienceEqualToLengthIsPostHoc) {
  const auto r = suite::t_equals_e_suite(10000);
  EXPECT_TRUE(r.passed()) << (r.notes.empty() ? "" : r.notes[0]);
}

}  // namespace
}  // namespace valsel
