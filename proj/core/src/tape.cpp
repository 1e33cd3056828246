#include "stmotion/tape.hpp"

#include <algorithm>

STMOTION_BEGIN_NAMESPACE
namespace nd {

namespace {
thread_local Tape* g_active = nullptr;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

Tape* active_tape() { return g_active; }

void backward(const Tensor& loss, const Tape& tape) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss");
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any tensor requiring grad");

  auto records = tape.records();
  const auto& root = loss.storage();
  const bool on_tape = std::any_of(records.begin(), records.end(),
                                   [&](const Tape::Record& r) { return r.output == root; });
  if (!on_tape) throw ContractError("loss was not produced on this tape");

  // Intermediate gradients start from zero on every pass; leaves accumulate.
  for (const auto& record : records) {
    record.output->ensure_grad();
    std::fill(record.output->grad.begin(), record.output->grad.end(), Real(0));
  }
  root->grad[0] = Real(1);

  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    it->backward();
  }
}

}  // namespace nd
STMOTION_END_NAMESPACE
