#include "gradient_check.hpp"

#include <random>

#include "stmotion/model.hpp"
#include "stmotion/ops.hpp"
#include "stmotion/so3.hpp"
#include "stmotion/training.hpp"

namespace acceptance {

using namespace stmotion;

GradientReport full_model_gradient_check(double step) {
  model::ModelConfig cfg;
  cfg.joints = 3;
  cfg.window = 8;
  cfg.embed = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ff_size = 16;
  cfg.dropout = 0;

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  nd::NamedTensors params;
  for (const auto& [name, t] : model::parameter_layout(cfg)) {
    std::vector<Real> v(t.numel());
    for (auto& x : v) x = u(rng);
    params.emplace_back(name, nd::Tensor(t.shape(), std::move(v)));
  }
  model::Model m(cfg, std::move(params));

  auto poses = [&](std::size_t b) {
    std::vector<Real> v;
    for (std::size_t i = 0; i < b * cfg.window * cfg.joints; ++i)
      for (double x : so3::random_rotation(rng)) v.push_back(x);
    return nd::Tensor({b, cfg.window, cfg.joints, 9}, std::move(v));
  };
  const nd::Tensor x = poses(2);
  const nd::Tensor target = poses(2);

  GradientReport report;
  std::vector<std::string> names;
  for (const auto& entry : m.parameters()) names.push_back(entry.first);
  for (const auto& name : names) {
    nd::Tensor handle = m.parameter(name);
    handle.set_requires_grad(true);
    auto loss = [&](const nd::Tensor&) { return training::loss_per_joint_l2(m.forward(x).prediction, target); };
    const double err = nd::finite_diff_check(loss, handle, step);
    handle.set_requires_grad(false);
    ++report.parameters;
    report.entries += handle.numel();
    if (err >= report.worst) {
      report.worst = err;
      report.worst_parameter = name;
    }
  }
  return report;
}

}  // namespace acceptance
