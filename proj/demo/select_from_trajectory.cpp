// Applies all 12 selection rules to one trajectory file and prints what each
// would have picked.
//
//   demo_select_from_trajectory runs/smoke/trajectories/iris__fold00__ce__r1.jsonl

#include <cstdio>

#include "valsel/harness.hpp"

int main(int argc, char** argv) {
  using namespace valsel;
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <trajectory.jsonl>\n", argv[0]);
    return 1;
  }
  try {
    const RunRecord r = read_trajectory(argv[1]);
    std::printf("%s: %zu epochs, H=%zu, status %s\n", r.key.label().c_str(), r.trajectory.length(), r.model.hidden,
                std::string(to_string(r.status)).c_str());
    if (r.trajectory.length() == 0) return 2;
    const auto opt = test_optimal(r.trajectory);
    std::printf("test-optimal: epoch %d, accuracy %.4f\n\n", opt.epoch, opt.accuracy);
    std::printf("%-22s %8s %8s %10s %8s\n", "rule", "epoch", "halt", "test_acc", "regret");
    for (const auto& s : crossed_selection(r.trajectory, default_rules(), CrossedOptions{10})) {
      std::printf("%-22s %8d %8s %10.4f %8.4f\n", s.rule.label().c_str(), s.selected_epoch,
                  s.halt_epoch ? std::to_string(*s.halt_epoch).c_str() : "-", s.selected_test_acc, s.regret);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
