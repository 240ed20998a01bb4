#pragma once

#include <spun/nn/layers.hpp>

namespace spun::nn {

// Elementwise relative error between analytic and numeric gradients. Entries
// far below the overall gradient scale are compared against 1e-3 of that scale
// instead of themselves, since central differences cannot resolve them
// relatively (a key-projection bias, for one, has an exactly zero gradient).
inline double grad_rel_error(const std::vector<Mat>& analytic, const std::vector<Mat>& numeric) {
  double scale = 1e-300;
  for (std::size_t t = 0; t < analytic.size(); ++t)
    scale = std::max({scale, analytic[t].cwiseAbs().maxCoeff(), numeric[t].cwiseAbs().maxCoeff()});
  double worst = 0.0;
  for (std::size_t t = 0; t < analytic.size(); ++t)
    for (Index i = 0; i < analytic[t].size(); ++i) {
      const double a = analytic[t].data()[i], n = numeric[t].data()[i];
      const double denom = std::max({std::abs(a), std::abs(n), 1e-3 * scale});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  return worst;
}

// Compares reverse-mode gradients of a scalar function against central
// differences with step h, for every input that requires grad. Returns the
// worst relative error over all inputs.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  Tensor out = f(inputs);
  if (out.rows() != 1 || out.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "gradcheck needs a scalar function");
  out.backward();
  std::vector<Mat> analytic, numeric;
  NoGrad guard;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    analytic.push_back(t.grad().size() ? t.grad() : Mat::Zero(t.rows(), t.cols()));
    Mat num(t.rows(), t.cols());
    for (Index i = 0; i < t.value().size(); ++i) {
      double& x = t.value().data()[i];
      const double x0 = x;
      x = x0 + h;
      const double fp = f(inputs).item();
      x = x0 - h;
      const double fm = f(inputs).item();
      x = x0;
      num.data()[i] = (fp - fm) / (2.0 * h);
    }
    numeric.push_back(std::move(num));
  }
  for (auto& t : inputs) t.zero_grad();
  return grad_rel_error(analytic, numeric);
}

struct GradcheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return error < tolerance; }
};

namespace detail {

inline Tensor random_input(Rng& rng, Index r, Index c, bool away_from_zero = false) {
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) {
    double x = rng.uniform(-1.0, 1.0);
    if (away_from_zero && std::abs(x) < 0.05) x += x < 0 ? -0.05 : 0.05;
    m.data()[i] = x;
  }
  return Tensor(m, true);
}

}  // namespace detail

// Every primitive on random 4x7 inputs (tolerance 1e-6) and the composed
// blocks (tolerance 1e-5). Each scalar objective is a random linear functional
// of the op's output so every output entry contributes.
inline std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed = 7, double h = 1e-5) {
  Rng rng(seed);
  auto in = [&](Index r, Index c, bool away = false) { return detail::random_input(rng, r, c, away); };
  auto probe = [&](Index r, Index c) {
    Mat w(r, c);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1.0, 1.0);
    return Tensor(w);
  };
  using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
  std::vector<GradcheckResult> out;
  auto run = [&](const std::string& name, const Fn& f, std::vector<Tensor> xs, double tol) {
    out.push_back({name, gradcheck(f, std::move(xs), h), tol});
  };
  const double prim = 1e-6, block = 1e-5;

  {
    Tensor w = probe(4, 5);
    run("matmul", [w](const auto& x) { return sum(mul(matmul(x[0], x[1]), w)); }, {in(4, 7), in(7, 5)}, prim);
  }
  {
    Tensor w = probe(4, 7);
    run("add", [w](const auto& x) { return sum(mul(add(x[0], x[1]), w)); }, {in(4, 7), in(4, 7)}, prim);
    run("sub", [w](const auto& x) { return sum(mul(sub(x[0], x[1]), w)); }, {in(4, 7), in(4, 7)}, prim);
    run("mul", [w](const auto& x) { return sum(mul(mul(x[0], x[1]), w)); }, {in(4, 7), in(4, 7)}, prim);
    run("add_row", [w](const auto& x) { return sum(mul(add_row(x[0], x[1]), w)); }, {in(4, 7), in(1, 7)}, prim);
    run("mul_row", [w](const auto& x) { return sum(mul(mul_row(x[0], x[1]), w)); }, {in(4, 7), in(1, 7)}, prim);
    run("scale", [w](const auto& x) { return sum(mul(scale(x[0], -1.7), w)); }, {in(4, 7)}, prim);
    run("relu", [w](const auto& x) { return sum(mul(relu(x[0]), w)); }, {in(4, 7, true)}, prim);
    run("elu", [w](const auto& x) { return sum(mul(elu(x[0]), w)); }, {in(4, 7, true)}, prim);
    run("sigmoid", [w](const auto& x) { return sum(mul(sigmoid(x[0]), w)); }, {in(4, 7)}, prim);
    run("softmax", [w](const auto& x) { return sum(mul(softmax(x[0]), w)); }, {in(4, 7)}, prim);
    run("layer_norm", [w](const auto& x) { return sum(mul(layer_norm(x[0]), w)); }, {in(4, 7)}, prim);
    run("dropout", [w](const auto& x) { return sum(mul(dropout(x[0], 0.3, true, 99), w)); }, {in(4, 7)}, prim);
    run("cumsum", [w](const auto& x) { return sum(mul(cumsum(x[0]), w)); }, {in(4, 7)}, prim);
    run("mse", [](const auto& x) { return mse(x[0], x[1]); }, {in(4, 7), in(4, 7)}, prim);
    run("sum", [](const auto& x) { return sum(x[0]); }, {in(4, 7)}, prim);
  }
  {
    Tensor w = probe(7, 4);
    run("transpose", [w](const auto& x) { return sum(mul(transpose(x[0]), w)); }, {in(4, 7)}, prim);
  }
  {
    Tensor w = probe(4, 10);
    run("concat", [w](const auto& x) { return sum(mul(concat({x[0], x[1]}, 1), w)); }, {in(4, 7), in(4, 3)}, prim);
    Tensor w2 = probe(4, 3);
    run("slice", [w2](const auto& x) { return sum(mul(slice(x[0], 1, 2, 3), w2)); }, {in(4, 7)}, prim);
  }

  // composed blocks on a small width so the finite-difference sweep stays cheap
  const BlockConfig cfg{8, 12, 2, 0.1};
  const Index seq = 5;
  auto params_of = [](const ParamStore& ps) {
    std::vector<Tensor> v;
    for (const auto& [name, e] : ps.entries()) v.push_back(e.tensor);
    return v;
  };
  {
    ParamStore ps;
    auto mha = MultiHeadAttention::make(ps, "mha", cfg.d, cfg.heads, seed);
    Tensor w = probe(seq, cfg.d);
    auto xs = params_of(ps);
    xs.push_back(in(seq, cfg.d));
    xs.push_back(in(seq + 2, cfg.d));
    run("multi_head_attention", [mha, w](const auto& x) { return sum(mul(mha(x[x.size() - 2], x.back(), x.back()), w)); }, xs, prim);
  }
  {
    ParamStore ps;
    auto enc = EncoderBlock::make(ps, "enc", cfg, seed);
    Tensor w = probe(seq, cfg.d);
    auto xs = params_of(ps);
    xs.push_back(in(seq, cfg.d));
    const Ctx ctx{true, 5};
    run("encoder_block", [enc, w, ctx](const auto& x) { return sum(mul(enc(x.back(), ctx), w)); }, xs, block);
  }
  {
    ParamStore ps;
    auto cb = CrossBlock::make(ps, "cross", cfg, seed);
    Tensor w = probe(seq, cfg.d);
    auto xs = params_of(ps);
    xs.push_back(in(seq, cfg.d));
    xs.push_back(in(seq, cfg.d));
    const Ctx ctx{true, 6};
    run("cross_block", [cb, w, ctx](const auto& x) { return sum(mul(cb(x[x.size() - 2], x.back(), ctx), w)); }, xs, block);
  }
  return out;
}

}  // namespace spun::nn
