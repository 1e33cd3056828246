#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "stmotion/tensor.hpp"

STMOTION_BEGIN_NAMESPACE
namespace nd {

/// Ordered record of differentiable operations executed while the tape was
/// active. Operations are appended in execution order, so the record list is
/// always topologically sorted.
class Tape {
 public:
  struct Record {
    std::string_view op;
    std::vector<std::shared_ptr<Storage>> inputs;
    std::shared_ptr<Storage> output;
    // Reads output->grad and accumulates into the grads of inputs that
    // require them.
    std::function<void()> backward;
  };

  void push(Record record) { records_.push_back(std::move(record)); }
  std::span<const Record> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Makes `tape` the recording target on this thread for the scope's
/// lifetime. Without an active tape, operations do not track gradients.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Populates .grad of every requires_grad tensor reachable from `loss` with
/// d(loss)/d(tensor). Gradients accumulate into existing leaf grads.
void backward(const Tensor& loss, const Tape& tape);

}  // namespace nd
STMOTION_END_NAMESPACE
