#include "stmotion/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <regex>
#include <sstream>

#include "stmotion/errors.hpp"
#include "stmotion/so3.hpp"
#include "stmotion/tape.hpp"
#include "stmotion/training.hpp"

STMOTION_BEGIN_NAMESPACE
namespace bench {

std::vector<GridPoint> default_grid() {
  return {{4, 80, 32}, {8, 120, 5}, {8, 60, 16}, {4, 100, 16}, {8, 40, 32}, {8, 120, 32}};
}

std::vector<GridPoint> parse_grid(const std::string& text) {
  static const std::regex named(R"(\s*L(\d+)-W(\d+)-B(\d+)\s*)", std::regex::icase);
  static const std::regex plain(R"(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*)");
  std::vector<GridPoint> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::smatch m;
    if (!std::regex_match(item, m, named) && !std::regex_match(item, m, plain))
      throw ConfigError("bad grid entry '" + item + "' (expected L4-W80-B32 or 4,80,32)");
    GridPoint p{std::stoul(m[1]), std::stoul(m[2]), std::stoul(m[3])};
    if (p.layers == 0 || p.window == 0 || p.batch == 0) throw ConfigError("grid values must be positive");
    grid.push_back(p);
  }
  if (grid.empty()) throw ConfigError("empty benchmark grid");
  return grid;
}

BenchRow run_point(const model::ModelConfig& base, const GridPoint& point, std::size_t budget_bytes,
                   std::size_t steps, std::uint64_t seed) {
  model::ModelConfig cfg = base;
  cfg.layers = point.layers;
  cfg.window = point.window;
  cfg.validate();
  BenchRow row;
  row.variant = cfg.variant;
  row.point = point;
  row.estimated_workspace = model::estimate_workspace_elements(cfg, point.batch);
  if (row.estimated_workspace > budget_bytes / sizeof(float)) {
    row.oom = true;
    return row;
  }

  std::mt19937_64 rng(seed);
  const std::size_t frames = cfg.window + 1;
  const std::size_t frame = cfg.joints * cfg.joint_dim;
  std::vector<Real> poses(point.batch * frames * frame);
  for (std::size_t b = 0; b < point.batch; ++b)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j < cfg.joints; ++j) {
        const so3::Mat3 r = so3::random_rotation(rng);
        Real* dst = poses.data() + ((b * frames + t) * cfg.joints + j) * cfg.joint_dim;
        for (std::size_t i = 0; i < 9; ++i) dst[i] = static_cast<Real>(r[i]);
      }
  auto slice = [&](std::size_t first) {
    std::vector<Real> v(point.batch * cfg.window * frame);
    for (std::size_t b = 0; b < point.batch; ++b)
      std::copy_n(poses.begin() + static_cast<std::ptrdiff_t>((b * frames + first) * frame), cfg.window * frame,
                  v.begin() + static_cast<std::ptrdiff_t>(b * cfg.window * frame));
    return nd::Tensor({point.batch, cfg.window, cfg.joints, cfg.joint_dim}, std::move(v));
  };
  const nd::Tensor inputs = slice(0), targets = slice(1);

  model::Model net(cfg, seed);
  net.set_trainable(true);
  nd::Rng dropout_rng(seed);
  const std::size_t before = nd::workspace_stats().live;
  nd::reset_workspace_peak();
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < std::max<std::size_t>(steps, 1); ++s) {
    model::AttentionCounters counters;
    model::ForwardOptions opts;
    opts.training = true;
    opts.rng = &dropout_rng;
    opts.counters = &counters;
    nd::Tape tape;
    nd::TapeScope scope(tape);
    net.zero_grad();
    const nd::Tensor loss = training::loss_per_joint_l2(net.forward(inputs, opts).prediction, targets);
    nd::backward(loss, tape);
    row.scores_per_layer = counters.scores_per_layer.front();
  }
  const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  row.peak_workspace = nd::workspace_stats().peak - before;
  row.seconds_per_step = elapsed / static_cast<double>(std::max<std::size_t>(steps, 1));
  const std::size_t tokens = cfg.variant == model::Variant::vanilla_1d ? cfg.window : cfg.joints * cfg.window;
  row.scores_per_token = static_cast<double>(row.scores_per_layer) / static_cast<double>(tokens);
  return row;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  const auto precision = out.precision();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << kBenchCsvHeader << '\n';
  for (const auto& r : rows) {
    out << model::to_string(r.variant) << ',' << r.point.layers << ',' << r.point.window << ',' << r.point.batch
        << ',' << (r.oom ? "OOM" : "ok") << ',';
    if (r.oom) {
      out << ",," << r.estimated_workspace << ",,\n";
    } else {
      out << r.scores_per_layer << ',' << r.scores_per_token << ',' << r.estimated_workspace << ','
          << r.peak_workspace << ',' << r.seconds_per_step << '\n';
    }
  }
  out.precision(precision);
}

}  // namespace bench
STMOTION_END_NAMESPACE
