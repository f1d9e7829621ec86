//
// Project MolText - Copyright 2026 MolText Developers.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "moltext/error.hpp"

namespace moltext {

struct ShapeMismatch: Error {
  using Error::Error;
};
struct NotScalar: Error {
  using Error::Error;
};
struct NoRecord: Error {
  using Error::Error;
};

using Shape = std::vector<int>;

namespace detail {

inline int shape_size(const Shape &s) {
  int n = 1;
  for (int d: s)
    n *= d;
  return n;
}

inline std::string shape_str(const Shape &s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0)
      out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // materialized lazily, same length as value
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or depends on something that does
  bool backward_done = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backfn;  // captures raw pointers only; parents vector
                                 // keeps the operands alive

  void ensure_grad() {
    if (grad.size() != value.size())
      grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense 64-bit float tensor with reverse-mode gradients. Values are stored
/// row-major. Copying a Tensor copies a handle to the same node; training
/// code treats finished parameters as shared immutable state.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return constant(std::move(shape), 0.0); }

  static Tensor constant(Shape shape, double fill) {
    Tensor t = make(std::move(shape));
    std::fill(t.n_->value.begin(), t.n_->value.end(), fill);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    Tensor t = make(std::move(shape));
    if (static_cast<int>(data.size()) != t.size())
      throw ShapeMismatch("data length does not match shape " +
                          detail::shape_str(t.shape()));
    t.n_->value = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  /// A leaf tensor that participates in gradient computation.
  static Tensor param(Shape shape, std::vector<double> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.n_->requires_grad = true;
    t.n_->needs_grad = true;
    return t;
  }

  const Shape &shape() const { return n_->shape; }
  int size() const { return static_cast<int>(n_->value.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }

  std::vector<double> &data() { return n_->value; }
  const std::vector<double> &value() const { return n_->value; }

  std::vector<double> &grad() {
    n_->ensure_grad();
    return n_->grad;
  }

  bool defined() const { return static_cast<bool>(n_); }
  bool requires_grad() const { return n_->requires_grad; }
  bool needs_grad() const { return n_->needs_grad; }

  double item() const {
    if (size() != 1)
      throw NotScalar("item() on tensor of shape " +
                      detail::shape_str(shape()));
    return n_->value[0];
  }

  void zero_grad() {
    if (!n_->grad.empty())
      std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }

  std::shared_ptr<detail::TensorNode> node() const { return n_; }

private:
  static Tensor make(Shape shape) {
    Tensor t;
    t.n_ = std::make_shared<detail::TensorNode>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(static_cast<std::size_t>(detail::shape_size(t.n_->shape)),
                       0.0);
    return t;
  }

  std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

inline Tensor make_result(Shape shape,
                          std::initializer_list<Tensor> operands) {
  const std::size_t n = static_cast<std::size_t>(shape_size(shape));
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(n, 0.0));
  bool needs = false;
  for (const Tensor &op: operands)
    needs = needs || op.needs_grad();
  if (needs) {
    out.node()->needs_grad = true;
    for (const Tensor &op: operands)
      out.node()->parents.push_back(op.node());
  }
  return out;
}

inline void require(bool cond, const std::string &msg) {
  if (!cond)
    throw ShapeMismatch(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor &a, const Tensor &b) {
  detail::require(a.shape() == b.shape(),
                  "add: shapes differ " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
  Tensor out = detail::make_result(a.shape(), {a, b});
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    out.data()[i] = a.value()[i] + b.value()[i];
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    auto *bn = b.node().get();
    out.node()->backfn = [on, an, bn, n] {
      an->ensure_grad();
      bn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        an->grad[i] += on->grad[i];
        bn->grad[i] += on->grad[i];
      }
    };
  }
  return out;
}

inline Tensor sub(const Tensor &a, const Tensor &b) {
  detail::require(a.shape() == b.shape(), "sub: shapes differ");
  Tensor out = detail::make_result(a.shape(), {a, b});
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    out.data()[i] = a.value()[i] - b.value()[i];
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    auto *bn = b.node().get();
    out.node()->backfn = [on, an, bn, n] {
      an->ensure_grad();
      bn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        an->grad[i] += on->grad[i];
        bn->grad[i] -= on->grad[i];
      }
    };
  }
  return out;
}

inline Tensor mul(const Tensor &a, const Tensor &b) {
  detail::require(a.shape() == b.shape(), "mul: shapes differ");
  Tensor out = detail::make_result(a.shape(), {a, b});
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    out.data()[i] = a.value()[i] * b.value()[i];
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    auto *bn = b.node().get();
    out.node()->backfn = [on, an, bn, n] {
      an->ensure_grad();
      bn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        an->grad[i] += on->grad[i] * bn->value[i];
        bn->grad[i] += on->grad[i] * an->value[i];
      }
    };
  }
  return out;
}

inline Tensor scale(const Tensor &a, double c) {
  Tensor out = detail::make_result(a.shape(), {a});
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    out.data()[i] = a.value()[i] * c;
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, c] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        an->grad[i] += on->grad[i] * c;
    };
  }
  return out;
}

inline Tensor neg(const Tensor &a) { return scale(a, -1.0); }

inline Tensor add_scalar(const Tensor &a, double c) {
  Tensor out = detail::make_result(a.shape(), {a});
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    out.data()[i] = a.value()[i] + c;
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        an->grad[i] += on->grad[i];
    };
  }
  return out;
}

/// Broadcast-adds a length-m vector to every row of an n x m matrix.
inline Tensor add_rowwise(const Tensor &mat, const Tensor &vec) {
  detail::require(mat.ndim() == 2 && vec.ndim() == 1 &&
                      mat.dim(1) == vec.dim(0),
                  "add_rowwise: want (n,m) + (m)");
  Tensor out = detail::make_result(mat.shape(), {mat, vec});
  const int n = mat.dim(0), m = mat.dim(1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out.data()[i * m + j] = mat.value()[i * m + j] + vec.value()[j];
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *mn = mat.node().get();
    auto *vn = vec.node().get();
    out.node()->backfn = [on, mn, vn, n, m] {
      mn->ensure_grad();
      vn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          mn->grad[i * m + j] += on->grad[i * m + j];
          vn->grad[j] += on->grad[i * m + j];
        }
    };
  }
  return out;
}

namespace detail {

template <class Fwd, class Dfn>
Tensor unary_op(const Tensor &a, Fwd f, Dfn dfdx, const char * /*name*/) {
  Tensor out = make_result(a.shape(), {a});
  const int n = a.size();
  for (int i = 0; i < n; ++i)
    out.data()[i] = f(a.value()[i]);
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, dfdx] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        an->grad[i] += on->grad[i] * dfdx(an->value[i], on->value[i]);
    };
  }
  return out;
}

}  // namespace detail

inline Tensor exp_(const Tensor &a) {
  return detail::unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; }, "exp");
}

inline Tensor log_(const Tensor &a) {
  return detail::unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; }, "log");
}

inline Tensor sqrt_(const Tensor &a) {
  return detail::unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; }, "sqrt");
}

inline Tensor tanh_(const Tensor &a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; }, "tanh");
}

inline Tensor relu(const Tensor &a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// C (n x m) += A (n x k) * B (k x m); ikj order keeps the inner loop streaming
inline void matmul_acc(const double *a, const double *b, double *c, int n,
                       int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double *arow = a + static_cast<std::ptrdiff_t>(i) * k;
    double *crow = c + static_cast<std::ptrdiff_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0)
        continue;
      const double *brow = b + static_cast<std::ptrdiff_t>(p) * m;
      for (int j = 0; j < m; ++j)
        crow[j] += av * brow[j];
    }
  }
}

// C (n x m) += A^T with A (k x n), times B (k x m)
inline void matmul_at_acc(const double *a, const double *b, double *c, int n,
                          int k, int m) {
  for (int p = 0; p < k; ++p) {
    const double *arow = a + static_cast<std::ptrdiff_t>(p) * n;
    const double *brow = b + static_cast<std::ptrdiff_t>(p) * m;
    for (int i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0)
        continue;
      double *crow = c + static_cast<std::ptrdiff_t>(i) * m;
      for (int j = 0; j < m; ++j)
        crow[j] += av * brow[j];
    }
  }
}

// C (n x m) += A (n x k) * B^T with B (m x k)
inline void matmul_bt_acc(const double *a, const double *b, double *c, int n,
                          int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double *arow = a + static_cast<std::ptrdiff_t>(i) * k;
    double *crow = c + static_cast<std::ptrdiff_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double *brow = b + static_cast<std::ptrdiff_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor &a, const Tensor &b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                  "matmul: want (n,k)x(k,m), got " +
                      detail::shape_str(a.shape()) + " x " +
                      detail::shape_str(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = detail::make_result({n, m}, {a, b});
  detail::matmul_acc(a.value().data(), b.value().data(), out.data().data(), n,
                     k, m);
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    auto *bn = b.node().get();
    out.node()->backfn = [on, an, bn, n, k, m] {
      an->ensure_grad();
      bn->ensure_grad();
      // dA += dC * B^T ; dB += A^T * dC
      detail::matmul_bt_acc(on->grad.data(), bn->value.data(), an->grad.data(),
                            n, m, k);
      detail::matmul_at_acc(an->value.data(), on->grad.data(), bn->grad.data(),
                            k, n, m);
    };
  }
  return out;
}

inline Tensor transpose(const Tensor &a) {
  detail::require(a.ndim() == 2, "transpose: want 2-d");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = detail::make_result({m, n}, {a});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out.data()[j * n + i] = a.value()[i * m + j];
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, m] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          an->grad[i * m + j] += on->grad[j * n + i];
    };
  }
  return out;
}

inline Tensor reshape(const Tensor &a, Shape shape) {
  detail::require(detail::shape_size(shape) == a.size(),
                  "reshape: size mismatch");
  Tensor out = detail::make_result(std::move(shape), {a});
  out.data() = a.value();
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    const int n = a.size();
    out.node()->backfn = [on, an, n] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        an->grad[i] += on->grad[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor &a) {
  Tensor out = detail::make_result({1}, {a});
  out.data()[0] = std::accumulate(a.value().begin(), a.value().end(), 0.0);
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    const int n = a.size();
    out.node()->backfn = [on, an, n] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        an->grad[i] += on->grad[0];
    };
  }
  return out;
}

inline Tensor mean_all(const Tensor &a) {
  return scale(sum_all(a), 1.0 / a.size());
}

/// Mean of a 2-d tensor along the given axis: axis 0 collapses rows (result
/// length = columns), axis 1 collapses columns.
inline Tensor mean_axis(const Tensor &a, int axis) {
  detail::require(a.ndim() == 2 && (axis == 0 || axis == 1),
                  "mean_axis: want 2-d, axis 0 or 1");
  const int n = a.dim(0), m = a.dim(1);
  const int out_len = axis == 0 ? m : n;
  const double inv = axis == 0 ? 1.0 / n : 1.0 / m;
  Tensor out = detail::make_result({out_len}, {a});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out.data()[axis == 0 ? j : i] += a.value()[i * m + j] * inv;
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, m, axis, inv] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          an->grad[i * m + j] += on->grad[axis == 0 ? j : i] * inv;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// Row-wise softmax of a 2-d tensor.
inline Tensor softmax_rows(const Tensor &a) {
  detail::require(a.ndim() == 2, "softmax_rows: want 2-d");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = detail::make_result(a.shape(), {a});
  for (int i = 0; i < n; ++i) {
    const double *row = a.value().data() + static_cast<std::ptrdiff_t>(i) * m;
    double *orow = out.data().data() + static_cast<std::ptrdiff_t>(i) * m;
    const double mx = *std::max_element(row, row + m);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (int j = 0; j < m; ++j)
      orow[j] /= total;
  }
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, m] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double *y = on->value.data() + static_cast<std::ptrdiff_t>(i) * m;
        const double *dy = on->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        double dot = 0.0;
        for (int j = 0; j < m; ++j)
          dot += dy[j] * y[j];
        double *dx = an->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        for (int j = 0; j < m; ++j)
          dx[j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

/// Row-wise softmax with a shared column mask; masked columns get exactly
/// zero probability. Used for attention over padded key positions.
inline Tensor masked_softmax_rows(const Tensor &a,
                                  const std::vector<std::uint8_t> &keep) {
  detail::require(a.ndim() == 2 && static_cast<int>(keep.size()) == a.dim(1),
                  "masked_softmax_rows: mask length must equal columns");
  const int n = a.dim(0), m = a.dim(1);
  bool any = false;
  for (std::uint8_t k: keep)
    any = any || k != 0;
  detail::require(any, "masked_softmax_rows: all columns masked");
  Tensor out = detail::make_result(a.shape(), {a});
  for (int i = 0; i < n; ++i) {
    const double *row = a.value().data() + static_cast<std::ptrdiff_t>(i) * m;
    double *orow = out.data().data() + static_cast<std::ptrdiff_t>(i) * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j)
      if (keep[j] && row[j] > mx)
        mx = row[j];
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      orow[j] = keep[j] ? std::exp(row[j] - mx) : 0.0;
      total += orow[j];
    }
    for (int j = 0; j < m; ++j)
      orow[j] /= total;
  }
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, m] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double *y = on->value.data() + static_cast<std::ptrdiff_t>(i) * m;
        const double *dy = on->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        double dot = 0.0;
        for (int j = 0; j < m; ++j)
          dot += dy[j] * y[j];
        double *dx = an->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        for (int j = 0; j < m; ++j)
          dx[j] += y[j] * (dy[j] - dot);  // zero rows of y contribute nothing
      }
    };
  }
  return out;
}

/// Stable log(sum(exp(row))) per row of a 2-d tensor.
inline Tensor logsumexp_rows(const Tensor &a) {
  detail::require(a.ndim() == 2, "logsumexp_rows: want 2-d");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = detail::make_result({n}, {a});
  for (int i = 0; i < n; ++i) {
    const double *row = a.value().data() + static_cast<std::ptrdiff_t>(i) * m;
    const double mx = *std::max_element(row, row + m);
    double total = 0.0;
    for (int j = 0; j < m; ++j)
      total += std::exp(row[j] - mx);
    out.data()[i] = mx + std::log(total);
  }
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, m] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double l = on->value[i];
        const double dl = on->grad[i];
        const double *x = an->value.data() + static_cast<std::ptrdiff_t>(i) * m;
        double *dx = an->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        for (int j = 0; j < m; ++j)
          dx[j] += dl * std::exp(x[j] - l);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Indexing and assembly
// ---------------------------------------------------------------------------

/// Looks rows of an embedding table up by integer id.
inline Tensor gather_rows(const Tensor &table, const std::vector<int> &ids) {
  detail::require(table.ndim() == 2, "gather_rows: table must be 2-d");
  const int v = table.dim(0), d = table.dim(1);
  for (int id: ids)
    detail::require(id >= 0 && id < v, "gather_rows: id out of range");
  const int n = static_cast<int>(ids.size());
  Tensor out = detail::make_result({n, d}, {table});
  for (int i = 0; i < n; ++i)
    std::copy_n(table.value().data() + static_cast<std::ptrdiff_t>(ids[i]) * d,
                d, out.data().data() + static_cast<std::ptrdiff_t>(i) * d);
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *tn = table.node().get();
    auto ids_copy = ids;
    out.node()->backfn = [on, tn, ids_copy, d] {
      tn->ensure_grad();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        const double *src = on->grad.data() + static_cast<std::ptrdiff_t>(i) * d;
        double *dst =
            tn->grad.data() + static_cast<std::ptrdiff_t>(ids_copy[i]) * d;
        for (int j = 0; j < d; ++j)
          dst[j] += src[j];
      }
    };
  }
  return out;
}

inline Tensor slice_cols(const Tensor &a, int start, int len) {
  detail::require(a.ndim() == 2 && start >= 0 && len > 0 &&
                      start + len <= a.dim(1),
                  "slice_cols: range out of bounds");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = detail::make_result({n, len}, {a});
  for (int i = 0; i < n; ++i)
    std::copy_n(a.value().data() + static_cast<std::ptrdiff_t>(i) * m + start,
                len, out.data().data() + static_cast<std::ptrdiff_t>(i) * len);
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n, m, start, len] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j)
          an->grad[i * m + start + j] += on->grad[i * len + j];
    };
  }
  return out;
}

inline Tensor slice_1d(const Tensor &a, int start, int len) {
  detail::require(a.ndim() == 1 && start >= 0 && len > 0 &&
                      start + len <= a.dim(0),
                  "slice_1d: range out of bounds");
  Tensor out = detail::make_result({len}, {a});
  std::copy_n(a.value().data() + start, len, out.data().data());
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, start, len] {
      an->ensure_grad();
      for (int j = 0; j < len; ++j)
        an->grad[start + j] += on->grad[j];
    };
  }
  return out;
}

inline Tensor row(const Tensor &a, int i) {
  detail::require(a.ndim() == 2 && i >= 0 && i < a.dim(0),
                  "row: index out of bounds");
  const int m = a.dim(1);
  Tensor out = detail::make_result({m}, {a});
  std::copy_n(a.value().data() + static_cast<std::ptrdiff_t>(i) * m, m,
              out.data().data());
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, i, m] {
      an->ensure_grad();
      for (int j = 0; j < m; ++j)
        an->grad[i * m + j] += on->grad[j];
    };
  }
  return out;
}

/// Concatenates 1-d tensors into one 1-d tensor, or equal-width 2-d tensors
/// along rows (axis 0) / equal-height ones along columns (axis 1).
inline Tensor concat(const std::vector<Tensor> &parts, int axis = 0) {
  detail::require(!parts.empty(), "concat: no operands");
  const int nd = parts[0].ndim();
  if (nd == 1) {
    int total = 0;
    for (const Tensor &p: parts) {
      detail::require(p.ndim() == 1, "concat: mixed ranks");
      total += p.dim(0);
    }
    Tensor out = Tensor::zeros({total});
    bool needs = false;
    for (const Tensor &p: parts)
      needs = needs || p.needs_grad();
    if (needs) {
      out.node()->needs_grad = true;
      for (const Tensor &p: parts)
        out.node()->parents.push_back(p.node());
    }
    int off = 0;
    std::vector<std::pair<detail::TensorNode *, int>> spans;
    for (const Tensor &p: parts) {
      std::copy_n(p.value().data(), p.dim(0), out.data().data() + off);
      spans.emplace_back(p.node().get(), off);
      off += p.dim(0);
    }
    if (needs) {
      auto *on = out.node().get();
      out.node()->backfn = [on, spans] {
        for (const auto &[pn, start]: spans) {
          pn->ensure_grad();
          for (std::size_t j = 0; j < pn->value.size(); ++j)
            pn->grad[j] += on->grad[start + static_cast<int>(j)];
        }
      };
    }
    return out;
  }
  detail::require(nd == 2 && (axis == 0 || axis == 1),
                  "concat: want rank 1 or rank 2 with axis 0/1");
  if (axis == 0) {
    const int m = parts[0].dim(1);
    int rows = 0;
    for (const Tensor &p: parts) {
      detail::require(p.ndim() == 2 && p.dim(1) == m, "concat: width mismatch");
      rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, m});
    bool needs = false;
    for (const Tensor &p: parts)
      needs = needs || p.needs_grad();
    if (needs) {
      out.node()->needs_grad = true;
      for (const Tensor &p: parts)
        out.node()->parents.push_back(p.node());
    }
    int off = 0;
    std::vector<std::pair<detail::TensorNode *, int>> spans;
    for (const Tensor &p: parts) {
      std::copy_n(p.value().data(), p.size(), out.data().data() + off);
      spans.emplace_back(p.node().get(), off);
      off += p.size();
    }
    if (needs) {
      auto *on = out.node().get();
      out.node()->backfn = [on, spans] {
        for (const auto &[pn, start]: spans) {
          pn->ensure_grad();
          for (std::size_t j = 0; j < pn->value.size(); ++j)
            pn->grad[j] += on->grad[start + static_cast<int>(j)];
        }
      };
    }
    return out;
  }
  // axis == 1: column-wise concatenation
  const int n = parts[0].dim(0);
  int width = 0;
  for (const Tensor &p: parts) {
    detail::require(p.ndim() == 2 && p.dim(0) == n, "concat: height mismatch");
    width += p.dim(1);
  }
  Tensor out = Tensor::zeros({n, width});
  bool needs = false;
  for (const Tensor &p: parts)
    needs = needs || p.needs_grad();
  if (needs) {
    out.node()->needs_grad = true;
    for (const Tensor &p: parts)
      out.node()->parents.push_back(p.node());
  }
  int col = 0;
  std::vector<std::tuple<detail::TensorNode *, int, int>> spans;
  for (const Tensor &p: parts) {
    const int pm = p.dim(1);
    for (int i = 0; i < n; ++i)
      std::copy_n(p.value().data() + static_cast<std::ptrdiff_t>(i) * pm, pm,
                  out.data().data() + static_cast<std::ptrdiff_t>(i) * width +
                      col);
    spans.emplace_back(p.node().get(), col, pm);
    col += pm;
  }
  if (needs) {
    auto *on = out.node().get();
    out.node()->backfn = [on, spans, n, width] {
      for (const auto &[pn, start, pm]: spans) {
        pn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < pm; ++j)
            pn->grad[i * pm + j] += on->grad[i * width + start + j];
      }
    };
  }
  return out;
}

/// Stacks equal-length 1-d tensors as the rows of a matrix.
inline Tensor stack_rows(const std::vector<Tensor> &rows_in) {
  detail::require(!rows_in.empty(), "stack_rows: no rows");
  const int m = rows_in[0].dim(0);
  std::vector<Tensor> mats;
  mats.reserve(rows_in.size());
  for (const Tensor &r: rows_in) {
    detail::require(r.ndim() == 1 && r.dim(0) == m, "stack_rows: ragged rows");
    mats.push_back(reshape(r, {1, m}));
  }
  return concat(mats, 0);
}

inline Tensor take_diag(const Tensor &a) {
  detail::require(a.ndim() == 2 && a.dim(0) == a.dim(1),
                  "take_diag: want square 2-d");
  const int n = a.dim(0);
  Tensor out = detail::make_result({n}, {a});
  for (int i = 0; i < n; ++i)
    out.data()[i] = a.value()[i * n + i];
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    out.node()->backfn = [on, an, n] {
      an->ensure_grad();
      for (int i = 0; i < n; ++i)
        an->grad[i * n + i] += on->grad[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and similarity
// ---------------------------------------------------------------------------

/// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm_rows(const Tensor &x, const Tensor &gain,
                              const Tensor &bias, double eps = 1e-5) {
  detail::require(x.ndim() == 2 && gain.ndim() == 1 && bias.ndim() == 1 &&
                      gain.dim(0) == x.dim(1) && bias.dim(0) == x.dim(1),
                  "layer_norm_rows: want (n,m), gain/bias (m)");
  const int n = x.dim(0), m = x.dim(1);
  Tensor out = detail::make_result(x.shape(), {x, gain, bias});
  std::vector<double> inv_sd(static_cast<std::size_t>(n));
  std::vector<double> xhat(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    const double *xr = x.value().data() + static_cast<std::ptrdiff_t>(i) * m;
    double mean = 0.0;
    for (int j = 0; j < m; ++j)
      mean += xr[j];
    mean /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j)
      var += (xr[j] - mean) * (xr[j] - mean);
    var /= m;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sd[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < m; ++j) {
      const double h = (xr[j] - mean) * is;
      xhat[static_cast<std::size_t>(i) * m + j] = h;
      out.data()[i * m + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *xn = x.node().get();
    auto *gn = gain.node().get();
    auto *bn = bias.node().get();
    out.node()->backfn = [on, xn, gn, bn, n, m, inv_sd, xhat] {
      xn->ensure_grad();
      gn->ensure_grad();
      bn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double *dy = on->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        const double *h = xhat.data() + static_cast<std::ptrdiff_t>(i) * m;
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (int j = 0; j < m; ++j) {
          const double dh = dy[j] * gn->value[j];
          sum_dh += dh;
          sum_dh_h += dh * h[j];
          gn->grad[j] += dy[j] * h[j];
          bn->grad[j] += dy[j];
        }
        const double is = inv_sd[static_cast<std::size_t>(i)];
        double *dx = xn->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        for (int j = 0; j < m; ++j) {
          const double dh = dy[j] * gn->value[j];
          dx[j] += is * (dh - sum_dh / m - h[j] * sum_dh_h / m);
        }
      }
    };
  }
  return out;
}

/// Normalizes every row to unit L2 length. All-zero rows stay zero.
inline Tensor l2_normalize_rows(const Tensor &x) {
  detail::require(x.ndim() == 2, "l2_normalize_rows: want 2-d");
  const int n = x.dim(0), m = x.dim(1);
  Tensor out = detail::make_result(x.shape(), {x});
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double *xr = x.value().data() + static_cast<std::ptrdiff_t>(i) * m;
    double nn = 0.0;
    for (int j = 0; j < m; ++j)
      nn += xr[j] * xr[j];
    const double norm = std::sqrt(nn);
    norms[static_cast<std::size_t>(i)] = norm;
    const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
    for (int j = 0; j < m; ++j)
      out.data()[i * m + j] = xr[j] * inv;
  }
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *xn = x.node().get();
    out.node()->backfn = [on, xn, n, m, norms] {
      xn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double norm = norms[static_cast<std::size_t>(i)];
        if (norm == 0.0)
          continue;
        const double *y = on->value.data() + static_cast<std::ptrdiff_t>(i) * m;
        const double *dy = on->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        double dot = 0.0;
        for (int j = 0; j < m; ++j)
          dot += dy[j] * y[j];
        double *dx = xn->grad.data() + static_cast<std::ptrdiff_t>(i) * m;
        for (int j = 0; j < m; ++j)
          dx[j] += (dy[j] - dot * y[j]) / norm;
      }
    };
  }
  return out;
}

/// Cosine similarity of two 1-d vectors as a scalar tensor. Returns 0 when
/// either vector is all-zero.
inline Tensor cosine(const Tensor &a, const Tensor &b) {
  detail::require(a.ndim() == 1 && b.ndim() == 1 && a.dim(0) == b.dim(0),
                  "cosine: want equal-length vectors");
  const int m = a.dim(0);
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (int j = 0; j < m; ++j) {
    dot += a.value()[j] * b.value()[j];
    na2 += a.value()[j] * a.value()[j];
    nb2 += b.value()[j] * b.value()[j];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const bool degenerate = na == 0.0 || nb == 0.0;
  const double s = degenerate ? 0.0 : dot / (na * nb);
  Tensor out = detail::make_result({1}, {a, b});
  out.data()[0] = s;
  if (out.needs_grad()) {
    auto *on = out.node().get();
    auto *an = a.node().get();
    auto *bn = b.node().get();
    out.node()->backfn = [on, an, bn, m, na, nb, s, degenerate] {
      if (degenerate)
        return;
      an->ensure_grad();
      bn->ensure_grad();
      const double g = on->grad[0];
      for (int j = 0; j < m; ++j) {
        an->grad[j] +=
            g * (bn->value[j] / (na * nb) - s * an->value[j] / (na * na));
        bn->grad[j] +=
            g * (an->value[j] / (na * nb) - s * bn->value[j] / (nb * nb));
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

/// Runs reverse-mode differentiation from a scalar loss. Gradients accumulate
/// into every reachable tensor that participates in the record; parameters
/// keep theirs until zero_grad. Calling backward twice on the same loss
/// raises NoRecord.
inline void backward(const Tensor &loss) {
  if (loss.size() != 1)
    throw NotScalar("backward: loss must be scalar, got " +
                    detail::shape_str(loss.shape()));
  auto *root = loss.node().get();
  if (root->backward_done)
    throw NoRecord("backward: record already consumed for this loss");
  if (!root->backfn && !root->requires_grad)
    throw NoRecord("backward: no computation was recorded for this loss");
  root->backward_done = true;

  // Deterministic post-order over the record; parents are visited in the
  // order the ops captured them.
  std::vector<detail::TensorNode *> order;
  std::vector<std::pair<detail::TensorNode *, std::size_t>> stack;
  std::unordered_set<detail::TensorNode *> visited;

  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode *p = node->parents[next++].get();
      if (visited.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode *node = *it;
    if (node->backfn)
      node->backfn();
  }
}

/// Max relative error between analytic and central finite-difference
/// gradients of a scalar-valued tensor function at a point.
inline double grad_check(const std::function<Tensor(const Tensor &)> &f,
                         const Tensor &point, double h = 1e-5) {
  Tensor x = Tensor::param(point.shape(), point.value());
  Tensor loss = f(x);
  backward(loss);
  const std::vector<double> analytic = x.grad();

  Tensor probe = Tensor::from(point.shape(), point.value());
  double worst = 0.0;
  for (int i = 0; i < probe.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const double up = f(probe).item();
    probe.data()[i] = saved - h;
    const double down = f(probe).item();
    probe.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[static_cast<std::size_t>(i)] - numeric) /
        std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace moltext
