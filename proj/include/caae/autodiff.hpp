#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "caae/tensor.hpp"

namespace caae {

// Trainable tensor with a persistent gradient buffer. Lives outside any tape.
template <typename T>
struct Param {
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), T(0)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  std::string name;
  Tensor<T> value;
  std::vector<T> grad;
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  std::size_t rows() const { return tape->node(id).rows; }
  std::size_t cols() const { return tape->node(id).cols; }
  std::size_t size() const { return rows() * cols(); }
  bool requires_grad() const { return tape->node(id).requires_grad; }
  std::span<const T> value() const {
    return {tape->value_ptr(id), size()};
  }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar " + dims());
    return value()[0];
  }
  T at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }
  Tensor<T> to_tensor() const {
    return Tensor<T>({rows(), cols()},
                     std::vector<T>(value().begin(), value().end()));
  }
  std::string dims() const {
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
  }
};

// Every differentiable operation the tape can record. The gradient-check
// suite registers exactly one check per entry.
inline constexpr std::array<std::string_view, 27> kDifferentiableOps = {
    "matmul",      "add",        "sub",        "mul",
    "scale",       "tanh",       "sigmoid",    "abs",
    "relu",        "softmax",    "reduce_sum", "reduce_mean",
    "reduce_max",  "sum_all",    "mean_all",   "concat",
    "slice_rows",  "slice_cols", "add_rowvec", "mul_colvec",
    "tile_rows",   "embedding",  "xent",       "bce_logits",
    "mix",         "pool_mean",  "pool_max"};

// Reverse-mode tape. Nodes are appended in execution order, so the node
// vector is a topological order. A tape is confined to one thread.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    const char* op = "leaf";
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> value;
    const T* ext_value = nullptr;
    std::vector<T> grad;
    T* ext_grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Parameters in a frozen set enter the tape as constants.
  void freeze(const std::vector<Param<T>*>& params) {
    for (auto* p : params) frozen_.insert(p);
  }

  // Test hook: multiplies the upstream gradient of every node recorded by
  // `op` before its backward rule runs.
  void inject_fault(std::string op, T factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

  Var<T> leaf(const Tensor<T>& t, bool requires_grad) {
    Node n;
    n.rows = t.rows();
    n.cols = t.cols();
    n.value = t.values();
    n.requires_grad = requires_grad && grad_enabled_;
    return push(std::move(n));
  }
  Var<T> constant(const Tensor<T>& t) { return leaf(t, false); }
  Var<T> scalar(T v) { return leaf(Tensor<T>({1, 1}, v), false); }

  Var<T> param(Param<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<T>{this, it->second};
    Node n;
    n.op = "param";
    n.rows = p.value.rows();
    n.cols = p.value.cols();
    n.ext_value = p.value.data();
    n.requires_grad = grad_enabled_ && !frozen_.contains(&p);
    if (n.requires_grad) {
      if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), T(0));
      n.ext_grad = p.grad.data();
    }
    Var<T> v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var<T> record(const char* op, std::size_t rows, std::size_t cols,
                std::vector<T> value, bool requires_grad, Backward bw) {
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) n.backward = std::move(bw);
    return push(std::move(n));
  }

  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  const T* value_ptr(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext_value ? n.ext_value : n.value.data();
  }

  // Gradient buffer of a node during/after backward; nullptr when the node
  // does not require gradients.
  T* grad_ptr(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.ext_grad) return n.ext_grad;
    if (n.grad.size() != n.rows * n.cols) n.grad.assign(n.rows * n.cols, T(0));
    return n.grad.data();
  }

  std::span<const T> grad(Var<T> v) {
    const T* g = grad_ptr(v.id);
    if (!g) throw std::logic_error("grad() on a tensor without gradient");
    return {g, v.size()};
  }

  // Seeds d(loss) = 1 and runs every recorded backward rule once, in reverse
  // order. Closures are released afterwards; values stay readable.
  void backward(Var<T> loss) {
    if (loss.size() != 1)
      throw ShapeError("backward() needs a scalar loss, got " + loss.dims());
    if (!nodes_[loss.id].requires_grad) return;
    for (std::size_t i = 0; i <= loss.id; ++i) {
      Node& n = nodes_[i];
      if (n.requires_grad && !n.ext_grad) n.grad.assign(n.rows * n.cols, T(0));
    }
    grad_ptr(loss.id)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward) continue;
      if (!fault_op_.empty() && fault_op_ == n.op) {
        T* g = grad_ptr(i);
        for (std::size_t k = 0; k < n.rows * n.cols; ++k) g[k] *= fault_factor_;
      }
      n.backward(*this, i);
    }
    for (auto& n : nodes_) n.backward = nullptr;
  }

 private:
  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, std::size_t> param_nodes_;
  std::unordered_set<const Param<T>*> frozen_;
  std::string fault_op_;
  T fault_factor_ = T(1);
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::logic_error("tensors from different tapes");
}

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// log(1 + exp(x)) without overflow.
template <typename T>
T softplus(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

enum class Broadcast { Equal, LeftScalar, RightScalar };

template <typename T>
Broadcast broadcast_kind(Var<T> a, Var<T> b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Equal;
  if (b.size() == 1) return Broadcast::RightScalar;
  if (a.size() == 1) return Broadcast::LeftScalar;
  throw ShapeError(std::string(op) + ": cannot broadcast " + a.dims() +
                   " with " + b.dims());
}

template <typename T, typename Fwd, typename DA, typename DB>
Var<T> binary(const char* op, Var<T> a, Var<T> b, Fwd fwd, DA da, DB db) {
  same_tape(a, b);
  const Broadcast kind = broadcast_kind(a, b, op);
  const std::size_t rows = kind == Broadcast::LeftScalar ? b.rows() : a.rows();
  const std::size_t cols = kind == Broadcast::LeftScalar ? b.cols() : a.cols();
  const std::size_t n = rows * cols;
  const std::size_t sa = kind == Broadcast::LeftScalar ? 0 : 1;
  const std::size_t sb = kind == Broadcast::RightScalar ? 0 : 1;
  std::vector<T> out(n);
  const T* av = a.tape->value_ptr(a.id);
  const T* bv = b.tape->value_ptr(b.id);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i * sa], bv[i * sb]);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(
      op, rows, cols, std::move(out), any_grad({a, b}),
      [ia, ib, n, sa, sb, da, db](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_ptr(self);
        const T* x = t.value_ptr(ia);
        const T* y = t.value_ptr(ib);
        if (T* ga = t.grad_ptr(ia))
          for (std::size_t i = 0; i < n; ++i)
            ga[i * sa] += g[i] * da(x[i * sa], y[i * sb]);
        if (T* gb = t.grad_ptr(ib))
          for (std::size_t i = 0; i < n; ++i)
            gb[i * sb] += g[i] * db(x[i * sa], y[i * sb]);
      });
}

// f'(x) expressed through the output y = f(x) and x.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const char* op, Var<T> a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.size();
  std::vector<T> out(n);
  const T* av = a.tape->value_ptr(a.id);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id;
  return a.tape->record(
      op, a.rows(), a.cols(), std::move(out), a.requires_grad(),
      [ia, n, deriv](Tape<T>& t, std::size_t self) {
        T* ga = t.grad_ptr(ia);
        if (!ga) return;
        const T* g = t.grad_ptr(self);
        const T* x = t.value_ptr(ia);
        const T* y = t.value_ptr(self);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(x[i], y[i]);
      });
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ, " + a.dims() + " x " +
                     b.dims());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n);
  {
    detail::MapM<T> c(out.data(), m, n);
    c.noalias() = detail::MapC<T>(a.tape->value_ptr(a.id), m, k) *
                  detail::MapC<T>(b.tape->value_ptr(b.id), k, n);
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(
      "matmul", m, n, std::move(out), detail::any_grad({a, b}),
      [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        detail::MapC<T> g(t.grad_ptr(self), m, n);
        if (T* ga = t.grad_ptr(ia))
          detail::MapM<T>(ga, m, k).noalias() +=
              g * detail::MapC<T>(t.value_ptr(ib), k, n).transpose();
        if (T* gb = t.grad_ptr(ib))
          detail::MapM<T>(gb, k, n).noalias() +=
              detail::MapC<T>(t.value_ptr(ia), m, k).transpose() * g;
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return detail::unary<T>(
      "scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a, [](T x) { return detail::sigmoid(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return detail::unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

// Row-wise softmax; a 1 x n input is a single distribution.
template <typename T>
Var<T> softmax(Var<T> a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (cols == 0) throw ShapeError("softmax of an empty row");
  std::vector<T> out(rows * cols);
  const T* x = a.tape->value_ptr(a.id);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = out.data() + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= sum;
  }
  const std::size_t ia = a.id;
  return a.tape->record(
      "softmax", rows, cols, std::move(out), a.requires_grad(),
      [ia, rows, cols](Tape<T>& t, std::size_t self) {
        T* ga = t.grad_ptr(ia);
        const T* g = t.grad_ptr(self);
        const T* y = t.value_ptr(self);
        for (std::size_t r = 0; r < rows; ++r) {
          T dot = 0;
          for (std::size_t c = 0; c < cols; ++c)
            dot += g[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      });
}

enum class Reduce { Sum, Mean, Max };

// axis 1 reduces each row to one value ([m x n] -> [m x 1]); axis 0 reduces
// each column ([m x n] -> [1 x n]). Max routes its gradient to the first
// maximal entry.
template <typename T>
Var<T> reduce(Reduce kind, Var<T> a, int axis) {
  if (axis != 0 && axis != 1)
    throw ShapeError("reduce: axis must be 0 or 1, got " + std::to_string(axis));
  const std::size_t rows = a.rows(), cols = a.cols();
  const std::size_t outer = axis == 1 ? rows : cols;
  const std::size_t inner = axis == 1 ? cols : rows;
  if (inner == 0) throw ShapeError("reduce over an empty axis");
  const std::size_t so = axis == 1 ? cols : 1;  // stride between outputs
  const std::size_t si = axis == 1 ? 1 : cols;  // stride along the axis
  std::vector<T> out(outer);
  std::vector<std::size_t> arg(kind == Reduce::Max ? outer : 0);
  const T* x = a.tape->value_ptr(a.id);
  for (std::size_t o = 0; o < outer; ++o) {
    if (kind == Reduce::Max) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < inner; ++i)
        if (x[o * so + i * si] > x[o * so + best * si]) best = i;
      arg[o] = best;
      out[o] = x[o * so + best * si];
    } else {
      T s = 0;
      for (std::size_t i = 0; i < inner; ++i) s += x[o * so + i * si];
      out[o] = kind == Reduce::Mean ? s / static_cast<T>(inner) : s;
    }
  }
  const char* op = kind == Reduce::Sum    ? "reduce_sum"
                   : kind == Reduce::Mean ? "reduce_mean"
                                          : "reduce_max";
  const std::size_t ia = a.id;
  return a.tape->record(
      op, axis == 1 ? outer : 1, axis == 1 ? 1 : outer, std::move(out),
      a.requires_grad(),
      [ia, kind, outer, inner, so, si, arg = std::move(arg)](Tape<T>& t,
                                                             std::size_t self) {
        T* ga = t.grad_ptr(ia);
        const T* g = t.grad_ptr(self);
        for (std::size_t o = 0; o < outer; ++o) {
          if (kind == Reduce::Max) {
            ga[o * so + arg[o] * si] += g[o];
            continue;
          }
          const T w = kind == Reduce::Mean ? g[o] / static_cast<T>(inner) : g[o];
          for (std::size_t i = 0; i < inner; ++i) ga[o * so + i * si] += w;
        }
      });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  const std::size_t n = a.size();
  const T* x = a.tape->value_ptr(a.id);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  const std::size_t ia = a.id;
  return a.tape->record("sum_all", 1, 1, {s}, a.requires_grad(),
                        [ia, n](Tape<T>& t, std::size_t self) {
                          T* ga = t.grad_ptr(ia);
                          const T g = t.grad_ptr(self)[0];
                          for (std::size_t i = 0; i < n; ++i) ga[i] += g;
                        });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  const T* x = a.tape->value_ptr(a.id);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  const std::size_t ia = a.id;
  return a.tape->record("mean_all", 1, 1, {s / static_cast<T>(n)},
                        a.requires_grad(),
                        [ia, n](Tape<T>& t, std::size_t self) {
                          T* ga = t.grad_ptr(ia);
                          const T g = t.grad_ptr(self)[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i) ga[i] += g;
                        });
}

// axis 0 stacks rows, axis 1 joins columns. Empty parts are skipped.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis != 0 && axis != 1)
    throw ShapeError("concat: axis must be 0 or 1");
  std::vector<Var<T>> kept;
  for (const auto& p : parts)
    if (p.size() > 0) kept.push_back(p);
  if (kept.empty()) return parts.front();
  if (kept.size() == 1) return kept.front();
  Tape<T>* tape = kept.front().tape;
  const std::size_t fixed = axis == 0 ? kept.front().cols() : kept.front().rows();
  std::size_t total = 0;
  for (const auto& p : kept) {
    detail::same_tape(p, kept.front());
    const std::size_t other = axis == 0 ? p.cols() : p.rows();
    if (other != fixed)
      throw ShapeError("concat: mismatched non-axis dimension, " +
                       kept.front().dims() + " vs " + p.dims());
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  std::vector<T> out(rows * cols);
  std::vector<std::size_t> ids, offsets, extents;
  bool rg = false;
  std::size_t off = 0;
  for (const auto& p : kept) {
    const T* x = tape->value_ptr(p.id);
    const std::size_t ext = axis == 0 ? p.rows() : p.cols();
    if (axis == 0) {
      std::copy(x, x + p.size(), out.begin() + off * cols);
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(x + r * ext, x + (r + 1) * ext, out.begin() + r * cols + off);
    }
    ids.push_back(p.id);
    offsets.push_back(off);
    extents.push_back(ext);
    rg = rg || p.requires_grad();
    off += ext;
  }
  return tape->record(
      "concat", rows, cols, std::move(out), rg,
      [ids, offsets, extents, axis, rows, cols](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_ptr(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          T* gp = t.grad_ptr(ids[k]);
          if (!gp) continue;
          const std::size_t ext = extents[k], off = offsets[k];
          if (axis == 0) {
            const T* src = g + off * cols;
            for (std::size_t i = 0; i < ext * cols; ++i) gp[i] += src[i];
          } else {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < ext; ++c)
                gp[r * ext + c] += g[r * cols + off + c];
          }
        }
      });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count) {
  if (start + count > a.rows())
    throw ShapeError("slice_rows out of range on " + a.dims());
  const std::size_t cols = a.cols();
  const T* x = a.tape->value_ptr(a.id) + start * cols;
  std::vector<T> out(x, x + count * cols);
  const std::size_t ia = a.id;
  return a.tape->record("slice_rows", count, cols, std::move(out),
                        a.requires_grad(),
                        [ia, start, count, cols](Tape<T>& t, std::size_t self) {
                          T* ga = t.grad_ptr(ia) + start * cols;
                          const T* g = t.grad_ptr(self);
                          for (std::size_t i = 0; i < count * cols; ++i)
                            ga[i] += g[i];
                        });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count) {
  if (start + count > a.cols())
    throw ShapeError("slice_cols out of range on " + a.dims());
  const std::size_t rows = a.rows(), cols = a.cols();
  const T* x = a.tape->value_ptr(a.id);
  std::vector<T> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(x + r * cols + start, x + r * cols + start + count,
              out.begin() + r * count);
  const std::size_t ia = a.id;
  return a.tape->record(
      "slice_cols", rows, count, std::move(out), a.requires_grad(),
      [ia, start, count, rows, cols](Tape<T>& t, std::size_t self) {
        T* ga = t.grad_ptr(ia);
        const T* g = t.grad_ptr(self);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < count; ++c)
            ga[r * cols + start + c] += g[r * count + c];
      });
}

// x [m x n] + b [1 x n], b added to every row.
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
  detail::same_tape(x, b);
  if (b.rows() != 1 || b.cols() != x.cols())
    throw ShapeError("add_rowvec: " + x.dims() + " + " + b.dims());
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<T> out(rows * cols);
  const T* xv = x.tape->value_ptr(x.id);
  const T* bv = x.tape->value_ptr(b.id);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = xv[r * cols + c] + bv[c];
  const std::size_t ix = x.id, ib = b.id;
  return x.tape->record(
      "add_rowvec", rows, cols, std::move(out), detail::any_grad({x, b}),
      [ix, ib, rows, cols](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_ptr(self);
        if (T* gx = t.grad_ptr(ix))
          for (std::size_t i = 0; i < rows * cols; ++i) gx[i] += g[i];
        if (T* gb = t.grad_ptr(ib))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      });
}

// x [m x n] with row r scaled by s[r] (s is [m x 1]).
template <typename T>
Var<T> mul_colvec(Var<T> x, Var<T> s) {
  detail::same_tape(x, s);
  if (s.cols() != 1 || s.rows() != x.rows())
    throw ShapeError("mul_colvec: " + x.dims() + " * " + s.dims());
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<T> out(rows * cols);
  const T* xv = x.tape->value_ptr(x.id);
  const T* sv = x.tape->value_ptr(s.id);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = xv[r * cols + c] * sv[r];
  const std::size_t ix = x.id, is = s.id;
  return x.tape->record(
      "mul_colvec", rows, cols, std::move(out), detail::any_grad({x, s}),
      [ix, is, rows, cols](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_ptr(self);
        const T* xv = t.value_ptr(ix);
        const T* sv = t.value_ptr(is);
        if (T* gx = t.grad_ptr(ix))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
              gx[r * cols + c] += g[r * cols + c] * sv[r];
        if (T* gs = t.grad_ptr(is))
          for (std::size_t r = 0; r < rows; ++r) {
            T d = 0;
            for (std::size_t c = 0; c < cols; ++c)
              d += g[r * cols + c] * xv[r * cols + c];
            gs[r] += d;
          }
      });
}

// Repeats the whole block [m x n] `reps` times along rows -> [reps*m x n].
// Matches the time-major layout of stacked sequences (row t*m + b).
template <typename T>
Var<T> tile_rows(Var<T> a, std::size_t reps) {
  const std::size_t n = a.size();
  const T* x = a.tape->value_ptr(a.id);
  std::vector<T> out(reps * n);
  for (std::size_t k = 0; k < reps; ++k) std::copy(x, x + n, out.begin() + k * n);
  const std::size_t ia = a.id;
  return a.tape->record("tile_rows", reps * a.rows(), a.cols(), std::move(out),
                        a.requires_grad(),
                        [ia, reps, n](Tape<T>& t, std::size_t self) {
                          T* ga = t.grad_ptr(ia);
                          const T* g = t.grad_ptr(self);
                          for (std::size_t k = 0; k < reps; ++k)
                            for (std::size_t i = 0; i < n; ++i)
                              ga[i] += g[k * n + i];
                        });
}

// Row lookup into a [V x d] table. Rows for `padding_id` are zero and never
// receive gradient.
template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids, int padding_id = -1) {
  const std::size_t vocab = table.rows(), dim = table.cols();
  std::vector<T> out(ids.size() * dim, T(0));
  const T* w = table.tape->value_ptr(table.id);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw ShapeError("embedding: id " + std::to_string(id) +
                       " outside table of " + std::to_string(vocab) + " rows");
    if (id == padding_id) continue;
    std::copy(w + id * dim, w + (id + 1) * dim, out.begin() + r * dim);
  }
  const std::size_t it = table.id;
  return table.tape->record(
      "embedding", ids.size(), dim, std::move(out), table.requires_grad(),
      [it, dim, padding_id, idv = std::vector<int>(ids.begin(), ids.end())](
          Tape<T>& t, std::size_t self) {
        T* gw = t.grad_ptr(it);
        const T* g = t.grad_ptr(self);
        for (std::size_t r = 0; r < idv.size(); ++r) {
          if (idv[r] == padding_id) continue;
          T* dst = gw + static_cast<std::size_t>(idv[r]) * dim;
          for (std::size_t c = 0; c < dim; ++c) dst[c] += g[r * dim + c];
        }
      });
}

// Softmax cross-entropy per row: [m x V] logits, m target ids -> [m x 1].
// A negative target marks a padded row: loss 0, no gradient.
template <typename T>
Var<T> xent(Var<T> logits, std::span<const int> targets) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows)
    throw ShapeError("xent: " + std::to_string(targets.size()) +
                     " targets for logits " + logits.dims());
  const T* x = logits.tape->value_ptr(logits.id);
  std::vector<T> out(rows, T(0));
  std::vector<T> probs(rows * cols, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= cols)
      throw ShapeError("xent: target id outside logit width");
    const T* xr = x + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c)
      sum += (probs[r * cols + c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= sum;
    out[r] = std::log(sum) + mx - xr[targets[r]];
  }
  const std::size_t il = logits.id;
  return logits.tape->record(
      "xent", rows, 1, std::move(out), logits.requires_grad(),
      [il, rows, cols, probs = std::move(probs),
       tg = std::vector<int>(targets.begin(), targets.end())](Tape<T>& t,
                                                              std::size_t self) {
        T* gl = t.grad_ptr(il);
        const T* g = t.grad_ptr(self);
        for (std::size_t r = 0; r < rows; ++r) {
          if (tg[r] < 0) continue;
          for (std::size_t c = 0; c < cols; ++c)
            gl[r * cols + c] += g[r] * probs[r * cols + c];
          gl[r * cols + static_cast<std::size_t>(tg[r])] -= g[r];
        }
      });
}

// Binary cross-entropy on logits, per row: [m x 1] logits and targets in
// {0, 1} -> [m x 1] losses softplus(x) - y*x.
template <typename T>
Var<T> bce_logits(Var<T> logits, std::span<const T> targets) {
  const std::size_t n = logits.size();
  if (logits.cols() != 1 || targets.size() != n)
    throw ShapeError("bce_logits: logits " + logits.dims() + " with " +
                     std::to_string(targets.size()) + " targets");
  const T* x = logits.tape->value_ptr(logits.id);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = detail::softplus(x[i]) - targets[i] * x[i];
  const std::size_t il = logits.id;
  return logits.tape->record(
      "bce_logits", n, 1, std::move(out), logits.requires_grad(),
      [il, n, tg = std::vector<T>(targets.begin(), targets.end())](
          Tape<T>& t, std::size_t self) {
        T* gl = t.grad_ptr(il);
        const T* g = t.grad_ptr(self);
        const T* x = t.value_ptr(il);
        for (std::size_t i = 0; i < n; ++i)
          gl[i] += g[i] * (detail::sigmoid(x[i]) - tg[i]);
      });
}

// Per-row convex mixing of candidate outputs: gamma [m x N] and
// y [m x N*d] holding N column blocks -> out[r] = sum_i gamma[r,i] * y_i[r].
template <typename T>
Var<T> mix(Var<T> gamma, Var<T> y) {
  detail::same_tape(gamma, y);
  const std::size_t rows = gamma.rows(), count = gamma.cols();
  if (y.rows() != rows || count == 0 || y.cols() % count != 0)
    throw ShapeError("mix: weights " + gamma.dims() + " with candidates " +
                     y.dims());
  const std::size_t d = y.cols() / count;
  const T* gv = gamma.tape->value_ptr(gamma.id);
  const T* yv = gamma.tape->value_ptr(y.id);
  std::vector<T> out(rows * d, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < count; ++i) {
      const T w = gv[r * count + i];
      const T* yr = yv + r * count * d + i * d;
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] += w * yr[c];
    }
  const std::size_t ig = gamma.id, iy = y.id;
  return gamma.tape->record(
      "mix", rows, d, std::move(out), detail::any_grad({gamma, y}),
      [ig, iy, rows, count, d](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_ptr(self);
        const T* gv = t.value_ptr(ig);
        const T* yv = t.value_ptr(iy);
        T* gg = t.grad_ptr(ig);
        T* gy = t.grad_ptr(iy);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t base = r * count * d + i * d;
            if (gg) {
              T s = 0;
              for (std::size_t c = 0; c < d; ++c) s += g[r * d + c] * yv[base + c];
              gg[r * count + i] += s;
            }
            if (gy) {
              const T w = gv[r * count + i];
              for (std::size_t c = 0; c < d; ++c) gy[base + c] += w * g[r * d + c];
            }
          }
      });
}

// Masked pooling over time. `x` stacks T steps of a batch of B rows in
// time-major order (row t*B + b); row b uses its first lengths[b] steps.
template <typename T>
Var<T> pool_time(Reduce kind, Var<T> x, std::span<const std::size_t> lengths) {
  if (kind == Reduce::Sum) throw std::invalid_argument("pool_time: sum unsupported");
  const std::size_t batch = lengths.size();
  if (batch == 0 || x.rows() % batch != 0)
    throw ShapeError("pool_time: " + x.dims() + " is not a stack of " +
                     std::to_string(batch) + "-row steps");
  const std::size_t steps = x.rows() / batch, d = x.cols();
  for (auto len : lengths) {
    if (len == 0) throw ShapeError("pool_time: sequence fully masked");
    if (len > steps) throw ShapeError("pool_time: length exceeds steps");
  }
  const T* xv = x.tape->value_ptr(x.id);
  std::vector<T> out(batch * d, T(0));
  std::vector<std::size_t> arg(kind == Reduce::Max ? batch * d : 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < d; ++c) {
      if (kind == Reduce::Max) {
        std::size_t best = 0;
        for (std::size_t t = 1; t < lengths[b]; ++t)
          if (xv[(t * batch + b) * d + c] > xv[(best * batch + b) * d + c]) best = t;
        arg[b * d + c] = best;
        out[b * d + c] = xv[(best * batch + b) * d + c];
      } else {
        T s = 0;
        for (std::size_t t = 0; t < lengths[b]; ++t) s += xv[(t * batch + b) * d + c];
        out[b * d + c] = s / static_cast<T>(lengths[b]);
      }
    }
  }
  const std::size_t ix = x.id;
  return x.tape->record(
      kind == Reduce::Max ? "pool_max" : "pool_mean", batch, d, std::move(out),
      x.requires_grad(),
      [ix, kind, batch, d, arg = std::move(arg),
       lens = std::vector<std::size_t>(lengths.begin(), lengths.end())](
          Tape<T>& t, std::size_t self) {
        T* gx = t.grad_ptr(ix);
        const T* g = t.grad_ptr(self);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < d; ++c) {
            if (kind == Reduce::Max) {
              gx[(arg[b * d + c] * batch + b) * d + c] += g[b * d + c];
              continue;
            }
            const T w = g[b * d + c] / static_cast<T>(lens[b]);
            for (std::size_t s = 0; s < lens[b]; ++s) gx[(s * batch + b) * d + c] += w;
          }
      });
}

template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace caae
