#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stmotion/model.hpp"

STMOTION_BEGIN_NAMESPACE
namespace bench {

/// One (layers, window, batch) configuration.
struct GridPoint {
  std::size_t layers = 0;
  std::size_t window = 0;
  std::size_t batch = 0;
  bool operator==(const GridPoint&) const = default;
};

/// L4-W80-B32, L8-W120-B5, L8-W60-B16, L4-W100-B16, L8-W40-B32, L8-W120-B32.
std::vector<GridPoint> default_grid();

/// Parses "L4-W80-B32;L8-W120-B5" or "4,80,32;8,120,5". Throws ConfigError.
std::vector<GridPoint> parse_grid(const std::string& text);

struct BenchRow {
  model::Variant variant = model::Variant::st;
  GridPoint point;
  bool oom = false;
  std::uint64_t scores_per_layer = 0;  // one sample, one head
  double scores_per_token = 0;
  std::size_t estimated_workspace = 0;  // elements
  std::size_t peak_workspace = 0;       // elements, measured over one step
  double seconds_per_step = 0;
};

/// Runs `steps` forward/backward passes of `base` reshaped to the grid point
/// on random poses and measures score counts, peak workspace and time. A
/// configuration whose estimated workspace exceeds `budget_bytes` is not run
/// and comes back with oom set.
BenchRow run_point(const model::ModelConfig& base, const GridPoint& point, std::size_t budget_bytes,
                   std::size_t steps, std::uint64_t seed);

inline constexpr const char* kBenchCsvHeader =
    "variant,layers,window,batch,status,scores_per_layer,scores_per_token,estimated_workspace,peak_workspace,"
    "seconds_per_step";
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace bench
STMOTION_END_NAMESPACE
