#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation, plus
// the RMSProp optimizer used to train every model in the library.
//
// A DiffTensor is a cheap handle: copies share the same storage, so a model
// and its optimizer can refer to the same parameter. Operations that touch at
// least one tensor with requires_grad() are appended to the calling thread's
// Tape; backward() replays that tape in reverse exactly once and clears it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "regraph/errors.hpp"

namespace regraph {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool has_grad = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    if (!has_grad) {
      std::fill(grad.begin(), grad.end(), 0.0);
      has_grad = true;
    }
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

class DiffTensor {
 public:
  DiffTensor() : node_(std::make_shared<detail::TensorNode>()) { node_->values.assign(1, 0.0); }

  DiffTensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (values.size() != shape_size(shape)) {
      throw ShapeError("tensor of shape " + shape_string(shape) + " needs " +
                       std::to_string(shape_size(shape)) + " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static DiffTensor zeros(Shape shape, bool requires_grad = false) {
    auto count = shape_size(shape);
    return DiffTensor(std::move(shape), std::vector<double>(count, 0.0), requires_grad);
  }

  static DiffTensor scalar(double value, bool requires_grad = false) {
    return DiffTensor(Shape{}, std::vector<double>{value}, requires_grad);
  }

  static DiffTensor vector(std::vector<double> values, bool requires_grad = false) {
    Shape shape{values.size()};
    return DiffTensor(std::move(shape), std::move(values), requires_grad);
  }

  static DiffTensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                           bool requires_grad = false) {
    return DiffTensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  static DiffTensor matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad = false) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return DiffTensor(Shape{r, c}, std::move(values), requires_grad);
  }

  static DiffTensor from_matrix(const Matrix& m, bool requires_grad = false) {
    std::vector<double> values(m.data(), m.data() + m.size());
    return DiffTensor(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                      std::move(values), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rows() const { return rank() >= 1 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? node_->shape[1] : 1; }
  bool is_scalar() const { return node_->shape.empty(); }

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
    return node_->values[0];
  }
  double at(std::size_t i, std::size_t j) const { return node_->values[i * cols() + j]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return node_->has_grad; }
  std::span<const double> grad() const { return node_->grad; }
  void set_grad(std::vector<double> grad) {
    if (grad.size() != size()) throw ShapeError("gradient size does not match tensor " + shape_string(shape()));
    node_->grad = std::move(grad);
    node_->has_grad = true;
  }
  // Fills the gradient with zeros and marks it as not populated.
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    node_->has_grad = false;
  }

  Matrix to_matrix() const {
    Matrix m(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    std::copy(node_->values.begin(), node_->values.end(), m.data());
    return m;
  }

  // Independent deep copy; the copy does not require grad.
  DiffTensor detach() const { return DiffTensor(shape(), node_->values, false); }

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

// Ordered record of differentiable operations for one thread.
class Tape {
 public:
  struct Record {
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void()> backward;
  };

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  bool enabled() const { return enabled_; }
  void set_enabled(bool flag) { enabled_ = flag; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }

  void push(Record record) { records_.push_back(std::move(record)); }

  // Replays the tape in reverse. Each record runs at most once; records whose
  // output never received a gradient are skipped.
  void backward(const DiffTensor& loss) {
    if (!loss.is_scalar() && loss.size() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (records_.empty()) throw UsageError("backward() called with an empty tape");
    auto& root = *loss.node();
    root.ensure_grad();
    root.grad[0] += 1.0;
    visited_ = 0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!it->output->has_grad) continue;
      it->backward();
      ++visited_;
    }
    records_.clear();
  }

  // Number of records replayed by the last backward().
  std::size_t last_visited() const { return visited_; }

 private:
  std::vector<Record> records_;
  std::size_t visited_ = 0;
  bool enabled_ = true;
};

// Disables recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape::current().enabled()) { Tape::current().set_enabled(false); }
  ~NoGradGuard() { Tape::current().set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline void backward(const DiffTensor& loss) { Tape::current().backward(loss); }

namespace detail {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

inline ConstMap as_matrix(const TensorNode& n, std::size_t rows, std::size_t cols) {
  return ConstMap(n.values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline bool any_requires_grad(std::initializer_list<const DiffTensor*> tensors) {
  if (!Tape::current().enabled()) return false;
  for (const auto* t : tensors) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline DiffTensor make_output(Shape shape, std::vector<double> values, bool track) {
  return DiffTensor(std::move(shape), std::move(values), track);
}

inline void record(std::vector<NodePtr> inputs, const DiffTensor& out, std::function<void()> fn) {
  Tape::current().push(Tape::Record{std::move(inputs), out.node(), std::move(fn)});
}

inline void require_rank(const DiffTensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  detail::MutMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      detail::as_matrix(*a.node(), m, k) * detail::as_matrix(*b.node(), k, n);
  bool track = detail::any_requires_grad({&a, &b});
  auto result = detail::make_output({m, n}, std::move(out), track);
  if (track) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    auto* pc = result.node().get();
    detail::record({a.node(), b.node()}, result, [pa, pb, pc, m, k, n] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        detail::MutMap(pa->grad.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)).noalias() +=
            detail::ConstMap(pc->grad.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) *
            detail::as_matrix(*pb, k, n).transpose();
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        detail::MutMap(pb->grad.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).noalias() +=
            detail::as_matrix(*pa, m, k).transpose() *
            detail::ConstMap(pc->grad.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Broadcasting is limited to scalar-vs-tensor.

enum class ElementwiseOp { Add, Sub, Mul, Sigmoid, Tanh, Relu };

namespace detail {

inline Shape broadcast_shape(const DiffTensor& a, const DiffTensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.is_scalar()) return b.shape();
  if (b.is_scalar()) return a.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

template <typename Forward, typename GradA, typename GradB>
DiffTensor binary(const DiffTensor& a, const DiffTensor& b, const char* name, Forward f, GradA ga, GradB gb) {
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t count = shape_size(shape);
  const bool a_scalar = a.size() == 1 && a.shape() != shape;
  const bool b_scalar = b.size() == 1 && b.shape() != shape;
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  bool track = any_requires_grad({&a, &b});
  auto result = make_output(std::move(shape), std::move(out), track);
  if (track) {
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    auto* pc = result.node().get();
    record({a.node(), b.node()}, result, [=] {
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      for (std::size_t i = 0; i < count; ++i) {
        const double x = pa->values[a_scalar ? 0 : i];
        const double y = pb->values[b_scalar ? 0 : i];
        const double g = pc->grad[i];
        if (pa->requires_grad) pa->grad[a_scalar ? 0 : i] += g * ga(x, y);
        if (pb->requires_grad) pb->grad[b_scalar ? 0 : i] += g * gb(x, y);
      }
    });
  }
  return result;
}

// `deriv` receives (input, output) so that sigmoid/tanh can reuse the output.
template <typename Forward, typename Deriv>
DiffTensor unary(const DiffTensor& a, Forward f, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  bool track = any_requires_grad({&a});
  auto result = make_output(a.shape(), std::move(out), track);
  if (track) {
    auto* pa = a.node().get();
    auto* pc = result.node().get();
    record({a.node()}, result, [=] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < pa->values.size(); ++i) pa->grad[i] += pc->grad[i] * deriv(pa->values[i], pc->values[i]);
    });
  }
  return result;
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline DiffTensor sigmoid(const DiffTensor& a) {
  return detail::unary(a, detail::sigmoid_value, [](double, double s) { return s * (1.0 - s); });
}

inline DiffTensor tanh(const DiffTensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double t) { return 1.0 - t * t; });
}

inline DiffTensor relu(const DiffTensor& a) {
  return detail::unary(
      a, [](double x) { return x <= 0.0 ? 0.0 : x; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline DiffTensor scale(const DiffTensor& a, double factor) { return mul(a, DiffTensor::scalar(factor)); }

inline DiffTensor one_minus(const DiffTensor& a) { return sub(DiffTensor::scalar(1.0), a); }

inline DiffTensor elementwise(ElementwiseOp op, const DiffTensor& a) {
  switch (op) {
    case ElementwiseOp::Sigmoid: return sigmoid(a);
    case ElementwiseOp::Tanh: return tanh(a);
    case ElementwiseOp::Relu: return relu(a);
    default: throw UsageError("elementwise: binary op called with one argument");
  }
}

inline DiffTensor elementwise(ElementwiseOp op, const DiffTensor& a, const DiffTensor& b) {
  switch (op) {
    case ElementwiseOp::Add: return add(a, b);
    case ElementwiseOp::Sub: return sub(a, b);
    case ElementwiseOp::Mul: return mul(a, b);
    default: throw UsageError("elementwise: unary op called with two arguments");
  }
}

// ---------------------------------------------------------------------------
// Structural ops

// Adds a bias vector [m] to every row of an [n x m] matrix.
inline DiffTensor add_bias(const DiffTensor& x, const DiffTensor& bias) {
  detail::require_rank(x, 2, "add_bias");
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t n = x.rows(), m = x.cols();
  if (bias.size() != m) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " + shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
  bool track = detail::any_requires_grad({&x, &bias});
  auto result = detail::make_output(x.shape(), std::move(out), track);
  if (track) {
    auto* px = x.node().get();
    auto* pb = bias.node().get();
    auto* pc = result.node().get();
    detail::record({x.node(), bias.node()}, result, [=] {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < n * m; ++i) px->grad[i] += pc->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) pb->grad[j] += pc->grad[i * m + j];
      }
    });
  }
  return result;
}

// Concatenates rank-1 tensors (axis 0) or rank-2 tensors along rows (axis 0)
// or columns (axis 1).
inline DiffTensor concat(const std::vector<DiffTensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: empty tensor list");
  if (parts.size() == 1) return parts.front();
  const std::size_t rank = parts.front().rank();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw ShapeError("concat: unsupported axis " + std::to_string(axis) + " for shape " +
                     shape_string(parts.front().shape()));
  }
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (std::size_t d = 0; ok && d < rank; ++d) ok = d == axis || p.shape()[d] == parts.front().shape()[d];
    if (!ok) {
      throw ShapeError("concat: shape " + shape_string(p.shape()) + " does not match " +
                       shape_string(parts.front().shape()) + " outside axis " + std::to_string(axis));
    }
  }

  // Treat every tensor as [outer x inner] where inner is the contiguous extent.
  const std::size_t outer = (rank == 2 && axis == 1) ? parts.front().rows() : 1;
  std::vector<std::size_t> inner;
  std::size_t total_inner = 0;
  for (const auto& p : parts) {
    inner.push_back(p.size() / outer);
    total_inner += inner.back();
  }
  std::vector<double> out(outer * total_inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < outer; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * inner[k]), inner[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total_inner + offset));
    offset += inner[k];
  }
  Shape shape = parts.front().shape();
  shape[axis] = 0;
  for (const auto& p : parts) shape[axis] += p.shape()[axis];

  bool track = false;
  if (Tape::current().enabled())
    for (const auto& p : parts) track = track || p.requires_grad();
  auto result = detail::make_output(std::move(shape), std::move(out), track);
  if (track) {
    std::vector<detail::NodePtr> inputs;
    std::vector<detail::TensorNode*> raw;
    for (const auto& p : parts) {
      inputs.push_back(p.node());
      raw.push_back(p.node().get());
    }
    auto* pc = result.node().get();
    detail::record(std::move(inputs), result, [raw, inner, outer, total_inner, pc] {
      std::size_t off = 0;
      for (std::size_t k = 0; k < raw.size(); ++k) {
        if (raw[k]->requires_grad) {
          raw[k]->ensure_grad();
          for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t c = 0; c < inner[k]; ++c) raw[k]->grad[r * inner[k] + c] += pc->grad[r * total_inner + off + c];
        }
        off += inner[k];
      }
    });
  }
  return result;
}

// Gathers rows of a rank-2 tensor: out[i] = x[indices[i]].
inline DiffTensor index_rows(const DiffTensor& x, std::span<const std::size_t> indices) {
  detail::require_rank(x, 2, "index_rows");
  const std::size_t m = x.cols();
  std::vector<double> out(indices.size() * m);
  const auto xv = x.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      throw ShapeError("index_rows: row " + std::to_string(indices[i]) + " out of range for " + shape_string(x.shape()));
    }
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[i] * m), m,
                out.begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  bool track = detail::any_requires_grad({&x});
  auto result = detail::make_output({indices.size(), m}, std::move(out), track);
  if (track) {
    auto* px = x.node().get();
    auto* pc = result.node().get();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    detail::record({x.node()}, result, [px, pc, idx = std::move(idx), m] {
      px->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) px->grad[idx[i] * m + j] += pc->grad[i * m + j];
    });
  }
  return result;
}

// Extracts element `index` of the flattened tensor as a scalar.
inline DiffTensor element(const DiffTensor& x, std::size_t index) {
  if (index >= x.size()) throw ShapeError("element: index out of range for " + shape_string(x.shape()));
  bool track = detail::any_requires_grad({&x});
  auto result = detail::make_output({}, {x.values()[index]}, track);
  if (track) {
    auto* px = x.node().get();
    auto* pc = result.node().get();
    detail::record({x.node()}, result, [=] {
      px->ensure_grad();
      px->grad[index] += pc->grad[0];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

inline DiffTensor sum(const DiffTensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  bool track = detail::any_requires_grad({&x});
  auto result = detail::make_output({}, {total}, track);
  if (track) {
    auto* px = x.node().get();
    auto* pc = result.node().get();
    detail::record({x.node()}, result, [=] {
      px->ensure_grad();
      for (auto& g : px->grad) g += pc->grad[0];
    });
  }
  return result;
}

inline DiffTensor mean(const DiffTensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Numerically stable softmax over a rank-1 tensor.
inline DiffTensor softmax(const DiffTensor& v) {
  detail::require_rank(v, 1, "softmax");
  if (v.size() == 0) throw ShapeError("softmax: empty input");
  const auto xv = v.values();
  for (double x : xv) {
    if (!std::isfinite(x)) throw NumericError("softmax: non-finite logit");
  }
  const double peak = *std::max_element(xv.begin(), xv.end());
  std::vector<double> out(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(xv[i] - peak);
    total += out[i];
  }
  for (auto& o : out) o /= total;
  bool track = detail::any_requires_grad({&v});
  auto result = detail::make_output(v.shape(), std::move(out), track);
  if (track) {
    auto* px = v.node().get();
    auto* pc = result.node().get();
    detail::record({v.node()}, result, [=] {
      px->ensure_grad();
      double dot = 0.0;
      for (std::size_t i = 0; i < pc->values.size(); ++i) dot += pc->grad[i] * pc->values[i];
      for (std::size_t i = 0; i < pc->values.size(); ++i) px->grad[i] += pc->values[i] * (pc->grad[i] - dot);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Random initialization

// SplitMix64; fixed algorithm so seeded initializations are identical on
// every platform (std:: distributions are implementation-defined).
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) { return bound ? next() % bound : 0; }

  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

 private:
  std::uint64_t state_;
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameter with the given shape.
inline DiffTensor init_uniform(Shape shape, std::size_t fan_in, SplitMix64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return DiffTensor(std::move(shape), std::move(values), true);
}

// ---------------------------------------------------------------------------
// Optimizer

struct RmsPropOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double smoothing = 1e-8;
  double decay_rate = 0.99;
};

class RmsProp {
 public:
  RmsProp(RmsPropOptions options, std::vector<DiffTensor> params)
      : options_(options), params_(std::move(params)) {
    if (!(options_.learning_rate >= 0.0)) throw UsageError("rmsprop: learning rate must be non-negative");
    if (!(options_.decay_rate >= 0.0 && options_.decay_rate < 1.0)) {
      throw UsageError("rmsprop: decay_rate must lie in [0, 1)");
    }
    accumulators_.reserve(params_.size());
    for (const auto& p : params_) accumulators_.emplace_back(p.size(), 0.0);
  }

  // g <- g + wd*param
  // accumulator <- rho*accumulator + (1-rho)*g^2
  // param <- param - lr*g/(sqrt(accumulator) + eps)
  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!params_[k].has_grad()) {
        throw UsageError("rmsprop: parameter " + std::to_string(k) + " has no gradient");
      }
    }
    const double rho = options_.decay_rate;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      auto values = p.mutable_values();
      const auto grad = p.grad();
      auto& acc = accumulators_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i] + options_.weight_decay * values[i];
        acc[i] = rho * acc[i] + (1.0 - rho) * g * g;
        values[i] -= options_.learning_rate * g / (std::sqrt(acc[i]) + options_.smoothing);
      }
      p.zero_grad();
    }
  }

  const std::vector<std::vector<double>>& accumulators() const { return accumulators_; }
  const RmsPropOptions& options() const { return options_; }

 private:
  RmsPropOptions options_;
  std::vector<DiffTensor> params_;
  std::vector<std::vector<double>> accumulators_;
};

// Scales all gradients so that their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::span<DiffTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      auto node = p.node();
      for (auto& g : node->grad) g *= factor;
    }
  }
  return norm;
}

}  // namespace regraph
