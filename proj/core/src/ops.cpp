#include "stmotion/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

STMOTION_BEGIN_NAMESPACE
namespace nd {

namespace {

using StoragePtr = std::shared_ptr<Storage>;

bool needs_tape(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<Real> values, bool tracked) {
  Tensor out(std::move(shape), std::move(values));
  out.storage()->requires_grad = tracked;
  return out;
}

template <class Fn>
void record(std::string_view name, const Tensor& out, std::initializer_list<const Tensor*> inputs,
            Fn&& fn) {
  Tape::Record rec;
  rec.op = name;
  for (const Tensor* t : inputs) rec.inputs.push_back(t->storage());
  rec.output = out.storage();
  rec.backward = std::forward<Fn>(fn);
  active_tape()->push(std::move(rec));
}

// Gradient buffer of an input, or nullptr if the input does not take one.
Real* grad_of(const StoragePtr& s) {
  if (!s->requires_grad) return nullptr;
  s->ensure_grad();
  return s->grad.data();
}

void require_rank(const Tensor& t, std::size_t min_rank, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.rank() < min_rank)
    throw ShapeError(std::string(op) + ": rank " + std::to_string(t.rank()) + " < " +
                     std::to_string(min_rank));
}

// ---- broadcasting ---------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& shape, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    const std::size_t axis = shape.size() - 1 - k;
    const std::size_t out_axis = rank - 1 - k;
    strides[out_axis] = shape[axis] == 1 ? 0 : stride;
    stride *= shape[axis];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[rank - 1 - k] = std::max(da, db);
  }
  return out;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  bc.out = broadcast_shape(a, b, op);
  bc.same = (a == b);
  bc.stride_a = aligned_strides(a, bc.out);
  bc.stride_b = aligned_strides(b, bc.out);
  return bc;
}

// Calls fn(out_offset, a_offset, b_offset) for every output element.
template <class Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const std::size_t total = numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = bc.out.size();
  const std::size_t inner = bc.out[rank - 1];
  const std::size_t sa = bc.stride_a[rank - 1];
  const std::size_t sb = bc.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t i = 0; i < inner; ++i) fn(base + i, oa + i * sa, ob + i * sb);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += bc.stride_a[ax];
      ob += bc.stride_b[ax];
      if (idx[ax] < bc.out[ax]) break;
      oa -= bc.stride_a[ax] * bc.out[ax];
      ob -= bc.stride_b[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  require_rank(a, 1, name);
  require_rank(b, 1, name);
  Broadcast bc = make_broadcast(a.shape(), b.shape(), name);
  std::vector<Real> out(numel(bc.out));
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  switch (kind) {
    case Binary::add:
      for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] + pb[j]; });
      break;
    case Binary::sub:
      for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] - pb[j]; });
      break;
    case Binary::mul:
      for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] * pb[j]; });
      break;
  }
  const bool tracked = needs_tape({&a, &b});
  Tensor result = make_result(bc.out, std::move(out), tracked);
  if (tracked) {
    StoragePtr sa = a.storage(), sb = b.storage(), so = result.storage();
    record(name, result, {&a, &b}, [sa, sb, so, bc = std::move(bc), kind]() {
      const Real* g = so->grad.data();
      Real* ga = grad_of(sa);
      Real* gb = grad_of(sb);
      const Real* va = sa->data.data();
      const Real* vb = sb->data.data();
      const Real sign = kind == Binary::sub ? Real(-1) : Real(1);
      if (kind == Binary::mul) {
        if (ga) for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * vb[j]; });
        if (gb) for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * va[i]; });
      } else {
        if (ga) for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
        if (gb) for_each_broadcast(bc, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += sign * g[o]; });
      }
    });
  }
  return result;
}

// ---- matmul kernels (row-major, accumulate into C) -------------------------

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C[P,R] += alpha * A[P,Q] * B[Q,R]
void gemm_nn(const Real* A, const Real* B, Real* C, std::size_t P, std::size_t Q, std::size_t R, Real alpha) {
  const auto p = static_cast<Eigen::Index>(P), q = static_cast<Eigen::Index>(Q), r = static_cast<Eigen::Index>(R);
  MutMap(C, p, r).noalias() += alpha * (ConstMap(A, p, q) * ConstMap(B, q, r));
}

// C[P,R] += alpha * A[P,Q] * B[R,Q]^T
void gemm_nt(const Real* A, const Real* B, Real* C, std::size_t P, std::size_t Q, std::size_t R, Real alpha) {
  const auto p = static_cast<Eigen::Index>(P), q = static_cast<Eigen::Index>(Q), r = static_cast<Eigen::Index>(R);
  MutMap(C, p, r).noalias() += alpha * (ConstMap(A, p, q) * ConstMap(B, r, q).transpose());
}

// C[Q,R] += alpha * A[P,Q]^T * B[P,R]
void gemm_tn(const Real* A, const Real* B, Real* C, std::size_t P, std::size_t Q, std::size_t R, Real alpha) {
  const auto p = static_cast<Eigen::Index>(P), q = static_cast<Eigen::Index>(Q), r = static_cast<Eigen::Index>(R);
  MutMap(C, q, r).noalias() += alpha * (ConstMap(A, p, q).transpose() * ConstMap(B, p, r));
}

struct BatchPlan {
  Shape out_batch;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (a matrix, b matrix) per output matrix
};

BatchPlan plan_batches(const Shape& a_batch, const Shape& b_batch) {
  BatchPlan plan;
  Shape a = a_batch.empty() ? Shape{1} : a_batch;
  Shape b = b_batch.empty() ? Shape{1} : b_batch;
  Broadcast bc = make_broadcast(a, b, "matmul");
  plan.out_batch = a_batch.empty() && b_batch.empty() ? Shape{} : bc.out;
  plan.pairs.reserve(numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t, std::size_t i, std::size_t j) { plan.pairs.emplace_back(i, j); });
  return plan;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& x, Real factor) {
  require_rank(x, 1, "scale");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v *= factor;
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("scale", result, {&x}, [sx, so, factor]() {
      Real* gx = grad_of(sx);
      const std::size_t n = so->grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += factor * so->grad[i];
    });
  }
  return result;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b, Real alpha) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t P = a.dim(a.rank() - 2);
  const std::size_t Q = a.dim(a.rank() - 1);
  const std::size_t bq = transpose_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  const std::size_t R = transpose_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (bq != Q)
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()) + (transpose_b ? "^T" : ""));
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  BatchPlan plan = plan_batches(a_batch, b_batch);

  Shape out_shape = plan.out_batch;
  out_shape.push_back(P);
  out_shape.push_back(R);
  std::vector<Real> out(numel(out_shape), Real(0));
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  const std::size_t sa = P * Q, sb = Q * R, sc = P * R;
  for (std::size_t m = 0; m < plan.pairs.size(); ++m) {
    const auto [ia, ib] = plan.pairs[m];
    if (transpose_b) {
      gemm_nt(pa + ia * sa, pb + ib * sb, out.data() + m * sc, P, Q, R, alpha);
    } else {
      gemm_nn(pa + ia * sa, pb + ib * sb, out.data() + m * sc, P, Q, R, alpha);
    }
  }

  const bool tracked = needs_tape({&a, &b});
  Tensor result = make_result(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    StoragePtr s_a = a.storage(), s_b = b.storage(), so = result.storage();
    record("matmul", result, {&a, &b},
           [s_a, s_b, so, plan = std::move(plan), P, Q, R, transpose_b, alpha]() {
             Real* ga = grad_of(s_a);
             Real* gb = grad_of(s_b);
             const Real* va = s_a->data.data();
             const Real* vb = s_b->data.data();
             const Real* g = so->grad.data();
             const std::size_t sa = P * Q, sb = Q * R, sc = P * R;
             for (std::size_t m = 0; m < plan.pairs.size(); ++m) {
               const auto [ia, ib] = plan.pairs[m];
               const Real* gm = g + m * sc;
               if (transpose_b) {
                 // C = A B^T with B stored [R,Q]: dA = dC B, dB = dC^T A
                 if (ga) gemm_nn(gm, vb + ib * sb, ga + ia * sa, P, R, Q, alpha);
                 if (gb) gemm_tn(gm, va + ia * sa, gb + ib * sb, P, R, Q, alpha);
               } else {
                 // dA = dC B^T, dB = A^T dC
                 if (ga) gemm_nt(gm, vb + ib * sb, ga + ia * sa, P, R, Q, alpha);
                 if (gb) gemm_tn(va + ia * sa, gm, gb + ib * sb, P, Q, R, alpha);
               }
             }
           });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_rank(x, 1, "reshape");
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  std::vector<Real> out(x.data().begin(), x.data().end());
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("reshape", result, {&x}, [sx, so]() {
      Real* gx = grad_of(sx);
      const std::size_t n = so->grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += so->grad[i];
    });
  }
  return result;
}

namespace {

// Calls fn(out_offset, in_offset) for a permutation with the given output
// shape and input strides already reordered to output axis order.
template <class Fn>
void for_each_permuted(const Shape& out_shape, const std::vector<std::size_t>& in_strides, Fn&& fn) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = numel(out_shape);
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t s_inner = in_strides[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t i = 0; i < inner; ++i) fn(base + i, off + i * s_inner);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      off += in_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= in_strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_rank(x, 1, "permute");
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t ax : axes) {
    if (ax >= rank || seen[ax]) throw ShapeError("permute: axes are not a permutation");
    seen[ax] = true;
  }
  std::vector<std::size_t> strides(rank);
  std::size_t s = 1;
  for (std::size_t k = rank; k-- > 0;) {
    strides[k] = s;
    s *= x.dim(k);
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = x.dim(axes[k]);
    in_strides[k] = strides[axes[k]];
  }
  std::vector<Real> out(x.numel());
  const Real* px = x.data().data();
  for_each_permuted(out_shape, in_strides, [&](std::size_t o, std::size_t i) { out[o] = px[i]; });

  const bool tracked = needs_tape({&x});
  Tensor result = make_result(out_shape, std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("permute", result, {&x}, [sx, so, out_shape, in_strides]() {
      Real* gx = grad_of(sx);
      const Real* g = so->grad.data();
      for_each_permuted(out_shape, in_strides, [&](std::size_t o, std::size_t i) { gx[i] += g[o]; });
    });
  }
  return result;
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_rank(x, 2, "sum_axis");
  if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= x.dim(k);
  for (std::size_t k = axis + 1; k < x.rank(); ++k) inner *= x.dim(k);
  const std::size_t n = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<Real> out(outer * inner, Real(0));
  const Real* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k) {
      const Real* src = px + (o * n + k) * inner;
      Real* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("sum_axis", result, {&x}, [sx, so, outer, inner, n]() {
      Real* gx = grad_of(sx);
      const Real* g = so->grad.data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k) {
          Real* dst = gx + (o * n + k) * inner;
          const Real* src = g + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  require_rank(x, 1, "sum");
  Real total = 0;
  for (Real v : x.data()) total += v;
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(Shape{1}, {total}, tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("sum", result, {&x}, [sx, so]() {
      Real* gx = grad_of(sx);
      const Real g = so->grad[0];
      for (std::size_t i = 0; i < sx->data.size(); ++i) gx[i] += g;
    });
  }
  return result;
}

Tensor relu(const Tensor& x) {
  require_rank(x, 1, "relu");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v = v > Real(0) ? v : Real(0);
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("relu", result, {&x}, [sx, so]() {
      Real* gx = grad_of(sx);
      for (std::size_t i = 0; i < sx->data.size(); ++i)
        if (sx->data[i] > Real(0)) gx[i] += so->grad[i];
    });
  }
  return result;
}

namespace {

void check_mask(const Tensor& x, const Tensor& mask, const char* op) {
  if (!mask.defined()) return;
  if (x.rank() < 2 || mask.rank() != 2 || mask.dim(0) != x.dim(x.rank() - 2) ||
      mask.dim(1) != x.dim(x.rank() - 1))
    throw ShapeError(std::string(op) + ": mask " + to_string(mask.shape()) +
                     " must match the last two axes of " + to_string(x.shape()));
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x, const Tensor& additive_mask) {
  require_rank(x, 1, "softmax_lastdim");
  check_mask(x, additive_mask, "softmax_lastdim");
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / cols;
  const std::size_t mask_rows = additive_mask.defined() ? additive_mask.dim(0) : 1;
  const Real* px = x.data().data();
  const Real* pm = additive_mask.defined() ? additive_mask.data().data() : nullptr;
  std::vector<Real> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = px + r * cols;
    const Real* m = pm ? pm + (r % mask_rows) * cols : nullptr;
    Real* y = out.data() + r * cols;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = m ? in[c] + m[c] : in[c];
      mx = std::max(mx, y[c]);
    }
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      // exp underflows to exactly zero far below -104; masked entries land here.
      const Real z = y[c] - mx;
      y[c] = z < Real(-110) ? Real(0) : std::exp(z);
      total += y[c];
    }
    const Real inv = Real(1) / total;
    for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
  }
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("softmax", result, {&x}, [sx, so, rows, cols]() {
      Real* gx = grad_of(sx);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* y = so->data.data() + r * cols;
        const Real* g = so->grad.data() + r * cols;
        Real dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
        Real* d = gx + r * cols;
        for (std::size_t c = 0; c < cols; ++c) d[c] += y[c] * (g[c] - dot);
      }
    });
  }
  return result;
}

Tensor sum_normalize_lastdim(const Tensor& x, const Tensor& keep_mask) {
  require_rank(x, 1, "sum_normalize_lastdim");
  check_mask(x, keep_mask, "sum_normalize_lastdim");
  constexpr Real kFloor = Real(1e-8);
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / cols;
  const std::size_t mask_rows = keep_mask.defined() ? keep_mask.dim(0) : 1;
  const Real* px = x.data().data();
  const Real* pm = keep_mask.defined() ? keep_mask.data().data() : nullptr;
  std::vector<Real> out(x.numel());
  std::vector<Real> row_sum(rows);  // 0 marks a fallback row
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = px + r * cols;
    const Real* m = pm ? pm + (r % mask_rows) * cols : nullptr;
    Real* y = out.data() + r * cols;
    Real total = 0;
    std::size_t kept = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const bool keep = m == nullptr || m[c] != Real(0);
      kept += keep ? 1 : 0;
      y[c] = keep && in[c] > Real(0) ? in[c] : Real(0);
      total += y[c];
    }
    if (total >= kFloor) {
      for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
      row_sum[r] = total;
    } else {
      const Real u = kept ? Real(1) / static_cast<Real>(kept) : Real(0);
      for (std::size_t c = 0; c < cols; ++c) y[c] = (m == nullptr || m[c] != Real(0)) ? u : Real(0);
      row_sum[r] = 0;
    }
  }
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("sum_normalize", result, {&x}, [sx, so, rows, cols, row_sum = std::move(row_sum)]() {
      Real* gx = grad_of(sx);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real total = row_sum[r];
        if (total == Real(0)) continue;
        const Real* y = so->data.data() + r * cols;
        const Real* g = so->grad.data() + r * cols;
        const Real* in = sx->data.data() + r * cols;
        Real dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
        Real* d = gx + r * cols;
        // y_c = relu(x_c) m_c / S; entries with y_c > 0 are exactly the
        // active ones (masked entries have y == 0).
        for (std::size_t c = 0; c < cols; ++c)
          if (y[c] > Real(0) && in[c] > Real(0)) d[c] += (g[c] - dot) / total;
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_rank(x, 1, "layer_norm");
  const std::size_t cols = x.dim(x.rank() - 1);
  if (gain.numel() != cols || bias.numel() != cols)
    throw ShapeError("layer_norm: gain/bias must match last axis " + std::to_string(cols));
  const std::size_t rows = x.numel() / cols;
  std::vector<Real> out(x.numel());
  std::vector<Real> xhat(x.numel());
  std::vector<Real> rstd(rows);
  const Real* px = x.data().data();
  const Real* pg = gain.data().data();
  const Real* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = px + r * cols;
    Real mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<Real>(cols);
    const Real inv = Real(1) / std::sqrt(var + kLayerNormEpsilon);
    rstd[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real h = (in[c] - mean) * inv;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * pg[c] + pb[c];
    }
  }
  const bool tracked = needs_tape({&x, &gain, &bias});
  Tensor result = make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), sg = gain.storage(), sb = bias.storage(), so = result.storage();
    record("layer_norm", result, {&x, &gain, &bias},
           [sx, sg, sb, so, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)]() {
             Real* gx = grad_of(sx);
             Real* gg = grad_of(sg);
             Real* gb = grad_of(sb);
             const Real* gain_v = sg->data.data();
             const Real inv_n = Real(1) / static_cast<Real>(cols);
             for (std::size_t r = 0; r < rows; ++r) {
               const Real* g = so->grad.data() + r * cols;
               const Real* h = xhat.data() + r * cols;
               if (gg)
                 for (std::size_t c = 0; c < cols; ++c) gg[c] += g[c] * h[c];
               if (gb)
                 for (std::size_t c = 0; c < cols; ++c) gb[c] += g[c];
               if (gx) {
                 Real mean_d = 0, mean_dh = 0;
                 for (std::size_t c = 0; c < cols; ++c) {
                   const Real d = g[c] * gain_v[c];
                   mean_d += d;
                   mean_dh += d * h[c];
                 }
                 mean_d *= inv_n;
                 mean_dh *= inv_n;
                 Real* dx = gx + r * cols;
                 for (std::size_t c = 0; c < cols; ++c)
                   dx[c] += rstd[r] * (g[c] * gain_v[c] - mean_d - h[c] * mean_dh);
               }
             }
           });
  }
  return result;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  require_rank(x, 1, "dropout");
  if (!(rate >= 0.0) || rate >= 1.0)
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  std::bernoulli_distribution drop(rate);
  std::vector<Real> factor(x.numel());
  for (Real& f : factor) f = drop(rng) ? Real(0) : keep_scale;
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor[i];
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("dropout", result, {&x}, [sx, so, factor = std::move(factor)]() {
      Real* gx = grad_of(sx);
      for (std::size_t i = 0; i < factor.size(); ++i) gx[i] += so->grad[i] * factor[i];
    });
  }
  return result;
}

Tensor norm_lastdim(const Tensor& x) {
  require_rank(x, 1, "norm_lastdim");
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / cols;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<Real> out(rows);
  const Real* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += px[r * cols + c] * px[r * cols + c];
    out[r] = std::sqrt(acc);
  }
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    StoragePtr sx = x.storage(), so = result.storage();
    record("norm_lastdim", result, {&x}, [sx, so, rows, cols]() {
      Real* gx = grad_of(sx);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real n = so->data[r];
        if (n == Real(0)) continue;
        const Real g = so->grad[r] / n;
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g * sx->data[r * cols + c];
      }
    });
  }
  return result;
}

}  // namespace nd
STMOTION_END_NAMESPACE
