#pragma once

#include <spun/nn/layers.hpp>

namespace spun::nn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::int64_t step = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments;
};

// Decoupled weight decay, then the bias-corrected Adam update. Gradients are
// cleared afterwards; parameters without a gradient count as zero gradient.
inline void adam_step(ParamStore& store, AdamState& st, double lr) {
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (const auto& [name, e] : store.entries()) {
    if (!e.trainable) continue;
    Tensor t = e.tensor;
    Mat& p = t.value();
    auto [it, fresh] = st.moments.try_emplace(name);
    auto& [m, v] = it->second;
    if (fresh) {
      m = Mat::Zero(p.rows(), p.cols());
      v = Mat::Zero(p.rows(), p.cols());
    }
    const Mat g = t.grad().size() ? t.grad() : Mat::Zero(p.rows(), p.cols());
    p -= lr * st.weight_decay * p;
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
    t.zero_grad();
  }
}

struct LrSchedule {
  double base_lr = 2e-4;
  double min_lr = 0.0;
  int t0 = 10;
  int t_mult = 2;
};

// Cosine annealing with warm restarts; cycle i lasts t0 * t_mult^i epochs.
inline double lr_at(const LrSchedule& s, std::int64_t epoch) {
  if (s.t0 < 1 || s.t_mult < 1) throw Error(ErrorCode::InvalidArgument, "schedule needs t0 >= 1 and t_mult >= 1");
  if (epoch < 0) throw Error(ErrorCode::InvalidArgument, "epoch must be non-negative");
  std::int64_t start = 0, len = s.t0;
  if (s.t_mult == 1) {
    start = epoch - epoch % len;
  } else {
    // closed form for the cycle index, then fix any rounding by one step
    const double ratio = static_cast<double>(epoch) / s.t0 * (s.t_mult - 1) + 1.0;
    auto i = static_cast<int>(std::floor(std::log(ratio) / std::log(static_cast<double>(s.t_mult))));
    auto cycle_start = [&](int j) {
      std::int64_t p = 1;
      for (int q = 0; q < j; ++q) p *= s.t_mult;
      return std::pair{s.t0 * (p - 1) / (s.t_mult - 1), s.t0 * p};
    };
    std::tie(start, len) = cycle_start(i);
    while (epoch < start) std::tie(start, len) = cycle_start(--i);
    while (epoch >= start + len) std::tie(start, len) = cycle_start(++i);
  }
  const double t = static_cast<double>(epoch - start) / static_cast<double>(len);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(kPi * t));
}

}  // namespace spun::nn
