#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>

#include "criteria.hpp"
#include "stmotion/runtime.hpp"

int main() {
  stmotion::tune_allocator();
  struct Criterion {
    const char* name;
    std::function<acceptance::Outcome()> run;
  };
  const Criterion criteria[] = {
      {"gradient correctness", acceptance::gradient_correctness},
      {"causality", acceptance::causality},
      {"attention validity", acceptance::attention_validity},
      {"attention complexity", acceptance::complexity},
      {"residual identity", acceptance::residual_identity},
      {"learning-rate schedule", acceptance::learning_rate_schedule},
      {"rotation suite", acceptance::so3_suite},
      {"desk-scale learning", acceptance::desk_learning},
      {"architecture ordering", acceptance::architecture_ordering},
      {"long-horizon non-collapse", acceptance::long_horizon},
      {"metric suite", acceptance::metric_suite},
      {"determinism", acceptance::determinism},
  };
  int failures = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    acceptance::Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!outcome.pass) ++failures;
    std::printf("%s %2d %s (%.1f s): %s\n", outcome.pass ? "PASS" : "FAIL", index, c.name, seconds,
                outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
