#pragma once

#include <spun/common.hpp>

#include <Eigen/Dense>

#include <memory>
#include <unordered_set>
#include <vector>

namespace spun::nn {

// Everything is a row-major matrix; sequences are rows, features are columns.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool on = true;
  return on;
}
}  // namespace detail

// Disables graph recording on this thread (inference, optimizer updates).
class NoGrad {
 public:
  NoGrad() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGrad() { detail::grad_enabled() = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  static Tensor zeros(Index r, Index c, bool requires_grad = false) { return Tensor(Mat::Zero(r, c), requires_grad); }
  static Tensor scalar(double v) { return Tensor(Mat::Constant(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& value() { return node_->value; }
  // Zero-sized until something flows into it.
  const Mat& grad() const { return node_->grad; }
  Mat& grad() { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Reverse pass from a 1x1 tensor. Gradients accumulate into leaves.
  void backward() const {
    if (rows() != 1 || cols() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->accumulate(Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward && (*it)->grad.size() > 0) (*it)->backward(**it);
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_finite(const Mat& m, const char* op) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFinite, std::string(op) + " produced a non-finite value");
}

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Result node; the backward closure is attached only when some input needs it.
inline Tensor make_result(Mat value, std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward, const char* op) {
  check_finite(value, op);
  Tensor out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

inline Tensor make_result(Mat value, const std::vector<Tensor>& inputs, std::function<void(Node&)> backward, const char* op) {
  check_finite(value, op);
  Tensor out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw Error(ErrorCode::ShapeMismatch, "matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  return detail::make_result(a.value() * b.value(), {a, b}, [](Node& n) {
    auto& x = *n.parents[0];
    auto& y = *n.parents[1];
    if (x.requires_grad) x.accumulate(n.grad * y.value.transpose());
    if (y.requires_grad) y.accumulate(x.value.transpose() * n.grad);
  }, "matmul");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "add");
  return detail::make_result(a.value() + b.value(), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad);
  }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "sub");
  return detail::make_result(a.value() - b.value(), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(-n.grad);
  }, "sub");
}

// x (S x n) plus a 1 x n row added to every row.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw Error(ErrorCode::ShapeMismatch, "add_row: row must be 1 x cols(x)");
  Mat v = x.value().rowwise() + row.value().row(0);
  return detail::make_result(std::move(v), {x, row}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad.colwise().sum());
  }, "add_row");
}

// x (S x n) times a 1 x n row, column by column.
inline Tensor mul_row(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw Error(ErrorCode::ShapeMismatch, "mul_row: row must be 1 x cols(x)");
  Mat v = x.value().array().rowwise() * row.value().row(0).array();
  return detail::make_result(std::move(v), {x, row}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& r = *n.parents[1];
    if (a.requires_grad) a.accumulate((n.grad.array().rowwise() * r.value.row(0).array()).matrix());
    if (r.requires_grad) r.accumulate((n.grad.array() * a.value.array()).colwise().sum().matrix());
  }, "mul_row");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "mul");
  return detail::make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    auto& x = *n.parents[0];
    auto& y = *n.parents[1];
    if (x.requires_grad) x.accumulate(n.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.accumulate(n.grad.cwiseProduct(x.value));
  }, "mul");
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::make_result(a.value() * c, {a}, [c](Node& n) { n.parents[0]->accumulate(n.grad * c); }, "scale");
}

inline Tensor relu(const Tensor& a) {
  return detail::make_result(a.value().cwiseMax(0.0), {a}, [](Node& n) {
    auto& x = *n.parents[0];
    x.accumulate((x.value.array() > 0.0).select(n.grad, 0.0));
  }, "relu");
}

inline Tensor elu(const Tensor& a, double alpha = 1.0) {
  Mat v = a.value().unaryExpr([alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); });
  return detail::make_result(std::move(v), {a}, [alpha](Node& n) {
    auto& x = *n.parents[0];
    Mat d = x.value.unaryExpr([alpha](double t) { return t > 0.0 ? 1.0 : alpha * std::exp(t); });
    x.accumulate(n.grad.cwiseProduct(d));
  }, "elu");
}

inline Tensor sigmoid(const Tensor& a) {
  Mat v = a.value().unaryExpr([](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
  return detail::make_result(std::move(v), {a}, [](Node& n) {
    Mat d = n.value.array() * (1.0 - n.value.array());
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  }, "sigmoid");
}

// Row-wise softmax. `additive_mask`, if given, is a constant added before the
// exponential (use a large negative number to block a position).
inline Tensor softmax(const Tensor& a, const Mat* additive_mask = nullptr) {
  Mat z = a.value();
  if (additive_mask) {
    if (additive_mask->rows() != z.rows() || additive_mask->cols() != z.cols()) throw Error(ErrorCode::ShapeMismatch, "softmax mask shape");
    z += *additive_mask;
  }
  for (Index r = 0; r < z.rows(); ++r) {
    z.row(r).array() -= z.row(r).maxCoeff();
    z.row(r) = z.row(r).array().exp().matrix();
    z.row(r) /= z.row(r).sum();
  }
  return detail::make_result(std::move(z), {a}, [](Node& n) {
    const Mat& y = n.value;
    Eigen::VectorXd dot = (n.grad.cwiseProduct(y)).rowwise().sum();
    Mat g = y.array() * (n.grad.colwise() - dot).array();
    n.parents[0]->accumulate(g);
  }, "softmax");
}

// Row-wise normalization to zero mean and unit variance, no affine part.
// eps is kept tiny so the normalized variance is 1 to ~1e-12.
inline Tensor layer_norm(const Tensor& a, double eps = 1e-12) {
  const Index c = a.cols();
  Mat y(a.rows(), c);
  Eigen::VectorXd inv_sigma(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().mean();
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    y.row(r) = (a.value().row(r).array() - mu) * inv_sigma[r];
  }
  return detail::make_result(std::move(y), {a}, [inv_sigma](Node& n) {
    const Mat& y = n.value;
    const auto cols = static_cast<double>(y.cols());
    Mat g(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double mg = n.grad.row(r).sum() / cols;
      const double mgy = n.grad.row(r).dot(y.row(r)) / cols;
      g.row(r) = inv_sigma[r] * (n.grad.row(r).array() - mg - y.row(r).array() * mgy);
    }
    n.parents[0]->accumulate(g);
  }, "layer_norm");
}

// Inverted dropout with a counter-based mask: entry (r, c) is dropped iff
// hash(key, r, c) falls below p, so a given key always yields the same mask.
inline Tensor dropout(const Tensor& a, double p, bool train, std::uint64_t key) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) throw Error(ErrorCode::InvalidArgument, "dropout probability must be below 1");
  Mat keep(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      const std::uint64_t h = mix64(hash_combine(key, static_cast<std::uint64_t>(r * a.cols() + c)));
      keep(r, c) = static_cast<double>(h >> 11) * 0x1.0p-53 < p ? 0.0 : s;
    }
  return detail::make_result(a.value().cwiseProduct(keep), {a}, [keep](Node& n) { n.parents[0]->accumulate(n.grad.cwiseProduct(keep)); },
                             "dropout");
}

// Running sum along each row.
inline Tensor cumsum(const Tensor& a) {
  Mat v = a.value();
  for (Index r = 0; r < v.rows(); ++r)
    for (Index c = 1; c < v.cols(); ++c) v(r, c) += v(r, c - 1);
  return detail::make_result(std::move(v), {a}, [](Node& n) {
    Mat g = n.grad;
    for (Index r = 0; r < g.rows(); ++r)
      for (Index c = g.cols() - 2; c >= 0; --c) g(r, c) += g(r, c + 1);
    n.parents[0]->accumulate(g);
  }, "cumsum");
}

// Mean squared error over all entries, as a 1x1 tensor.
inline Tensor mse(const Tensor& pred, const Tensor& target) {
  detail::same_shape(pred, target, "mse");
  const Mat diff = pred.value() - target.value();
  const double count = static_cast<double>(diff.size());
  return detail::make_result(Mat::Constant(1, 1, diff.squaredNorm() / count), {pred, target}, [diff, count](Node& n) {
    const Mat g = (2.0 * n.grad(0, 0) / count) * diff;
    n.parents[0]->accumulate(g);
    n.parents[1]->accumulate(-g);
  }, "mse");
}

inline Tensor sum(const Tensor& a) {
  return detail::make_result(Mat::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
    auto& x = *n.parents[0];
    x.accumulate(Mat::Constant(x.value.rows(), x.value.cols(), n.grad(0, 0)));
  }, "sum");
}

inline Tensor transpose(const Tensor& a) {
  return detail::make_result(a.value().transpose(), {a}, [](Node& n) { n.parents[0]->accumulate(n.grad.transpose()); }, "transpose");
}

// Side-by-side concatenation (axis 1) or stacking (axis 0).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Index r = 0, c = 0;
  for (const auto& p : parts) {
    if (axis == 1) {
      if (p.rows() != parts[0].rows()) throw Error(ErrorCode::ShapeMismatch, "concat: row counts differ");
      c += p.cols();
    } else {
      if (p.cols() != parts[0].cols()) throw Error(ErrorCode::ShapeMismatch, "concat: column counts differ");
      r += p.rows();
    }
  }
  if (axis == 1) r = parts[0].rows();
  else c = parts[0].cols();
  Mat v(r, c);
  Index off = 0;
  for (const auto& p : parts) {
    if (axis == 1) v.middleCols(off, p.cols()) = p.value();
    else v.middleRows(off, p.rows()) = p.value();
    off += axis == 1 ? p.cols() : p.rows();
  }
  return detail::make_result(std::move(v), parts, [axis](Node& n) {
    Index o = 0;
    for (auto& p : n.parents) {
      if (axis == 1) {
        if (p->requires_grad) p->accumulate(n.grad.middleCols(o, p->value.cols()));
        o += p->value.cols();
      } else {
        if (p->requires_grad) p->accumulate(n.grad.middleRows(o, p->value.rows()));
        o += p->value.rows();
      }
    }
  }, "concat");
}

// Block of `count` columns (axis 1) or rows (axis 0) starting at `start`.
inline Tensor slice(const Tensor& a, int axis, Index start, Index count) {
  const Index extent = axis == 1 ? a.cols() : a.rows();
  if (start < 0 || count < 0 || start + count > extent) throw Error(ErrorCode::ShapeMismatch, "slice out of range");
  Mat v = axis == 1 ? Mat(a.value().middleCols(start, count)) : Mat(a.value().middleRows(start, count));
  return detail::make_result(std::move(v), {a}, [axis, start, count](Node& n) {
    auto& x = *n.parents[0];
    Mat g = Mat::Zero(x.value.rows(), x.value.cols());
    if (axis == 1) g.middleCols(start, count) = n.grad;
    else g.middleRows(start, count) = n.grad;
    x.accumulate(g);
  }, "slice");
}

}  // namespace spun::nn
