#include <benchmark/benchmark.h>

#include "stmotion/runtime.hpp"

int main(int argc, char** argv) {
  stmotion::tune_allocator();
  ::benchmark::Initialize(&argc, argv);
  if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  ::benchmark::RunSpecifiedBenchmarks();
  ::benchmark::Shutdown();
  return 0;
}
