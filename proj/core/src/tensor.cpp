#include "stmotion/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>

STMOTION_BEGIN_NAMESPACE
namespace nd {

namespace {

struct WorkspaceCounter {
  std::int64_t live = 0;
  std::int64_t peak = 0;
};

thread_local WorkspaceCounter g_workspace;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Storage::Storage(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  if (std::find(shape.begin(), shape.end(), 0u) != shape.end())
    throw ShapeError("tensor dimensions must be positive: " + to_string(shape));
  if (numel(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  g_workspace.live += static_cast<std::int64_t>(data.size());
  g_workspace.peak = std::max(g_workspace.peak, g_workspace.live);
}

Storage::~Storage() { g_workspace.live -= static_cast<std::int64_t>(data.size()); }

void Storage::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
}

Tensor::Tensor(Shape shape, Real fill, bool requires_grad) {
  const std::size_t n = nd::numel(shape);
  storage_ = std::make_shared<Storage>(std::move(shape), std::vector<Real>(n, fill));
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : storage_(std::make_shared<Storage>(std::move(shape), std::move(values))) {
  set_requires_grad(requires_grad);
}

void Tensor::set_requires_grad(bool flag) {
  storage_->requires_grad = flag;
  if (flag) {
    storage_->ensure_grad();
  } else {
    storage_->grad.clear();
  }
}

void Tensor::zero_grad() { std::fill(storage_->grad.begin(), storage_->grad.end(), Real(0)); }

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return storage_->data[0];
}

Tensor Tensor::clone() const {
  Tensor copy(shape(), std::vector<Real>(storage_->data));
  if (requires_grad()) copy.set_requires_grad(true);
  return copy;
}

WorkspaceStats workspace_stats() {
  return {static_cast<std::size_t>(std::max<std::int64_t>(0, g_workspace.live)),
          static_cast<std::size_t>(std::max<std::int64_t>(0, g_workspace.peak))};
}

void reset_workspace_peak() { g_workspace.peak = g_workspace.live; }

}  // namespace nd
STMOTION_END_NAMESPACE
