#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stmotion/errors.hpp"
#include "stmotion/precision.hpp"

STMOTION_BEGIN_NAMESPACE
namespace nd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Backing store of a tensor. Gradients of leaves are allocated when
// requires_grad is set; intermediates get theirs lazily during backward.
struct Storage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;

  Storage(Shape s, std::vector<Real> values);
  ~Storage();
  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;

  void ensure_grad();
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(Real value) { return Tensor(Shape{1}, value); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t numel() const { return storage_->data.size(); }

  std::span<Real> data() { return storage_->data; }
  std::span<const Real> data() const { return storage_->data; }
  std::span<Real> grad() { return storage_->grad; }
  std::span<const Real> grad() const { return storage_->grad; }

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  void set_requires_grad(bool flag);
  void zero_grad();

  /// Value of a single-element tensor.
  Real item() const;

  Tensor clone() const;

  const std::shared_ptr<Storage>& storage() const { return storage_; }
  explicit Tensor(std::shared_ptr<Storage> storage) : storage_(std::move(storage)) {}

 private:
  std::shared_ptr<Storage> storage_;
};

/// Live/peak count of tensor data elements on the calling thread.
struct WorkspaceStats {
  std::size_t live = 0;
  std::size_t peak = 0;
};

WorkspaceStats workspace_stats();
/// Resets the peak to the current live count.
void reset_workspace_peak();

}  // namespace nd
STMOTION_END_NAMESPACE
