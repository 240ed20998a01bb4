#pragma once

#include <spun/nn/checkpoint.hpp>
#include <spun/nn/layers.hpp>
#include <spun/spectral/spectrum.hpp>

namespace spun {

struct UnionConfig {
  Index k = kDefaultK;
  Index pos_dim = 16;  // theta_a width
  Index val_dim = 15;  // theta_b width; model width is pos_dim + val_dim + 1
  Index ta_layers = 6;
  Index tb_layers = 3;
  Index heads = 8;
  Index ta_ff = 64;
  Index tb_ff = 32;
  double dropout = 0.1;

  Index d() const { return pos_dim + val_dim + 1; }
  bool operator==(const UnionConfig&) const = default;
};

// Row i of the embedding is (theta_a[i], off_i * theta_b, off_i).
inline nn::Tensor embed(const nn::Tensor& offsets, const nn::Tensor& theta_a, const nn::Tensor& theta_b) {
  if (offsets.cols() != 1 || offsets.rows() != theta_a.rows())
    throw Error(ErrorCode::LengthMismatch, "offset sequence has length " + std::to_string(offsets.rows()) + ", model expects " +
                                               std::to_string(theta_a.rows()));
  return nn::concat({theta_a, nn::matmul(offsets, theta_b), offsets}, 1);
}

// The learned union operator. Inputs are divided by a fixed value scale (a
// buffer set from the training targets) so the network sees O(1) offsets; the
// output is scaled back.
class UnionModel {
 public:
  UnionModel() = default;

  static UnionModel create(const UnionConfig& cfg, double value_scale, std::uint64_t seed) {
    if (!(value_scale > 0.0) || !std::isfinite(value_scale)) throw Error(ErrorCode::InvalidArgument, "value scale must be positive");
    nn::ParamStore ps;
    ps.add_normal("embed.theta_a", cfg.k, cfg.pos_dim, 0.02, seed);
    ps.add_normal("embed.theta_b", 1, cfg.val_dim, 0.02, seed);
    for (Index l = 0; l < cfg.ta_layers; ++l) nn::CrossBlock::make(ps, "ta." + std::to_string(l), ta_cfg(cfg), seed);
    for (Index l = 0; l < cfg.tb_layers; ++l) nn::EncoderBlock::make(ps, "tb." + std::to_string(l), tb_cfg(cfg), seed);
    // unit bias: initial offsets sit near the value scale, clear of the relu dead zone
    nn::Linear rho = nn::Linear::make(ps, "rho", cfg.d(), 1, seed);
    rho.b.value().setOnes();
    nn::Mat c(1, 9);
    c << static_cast<double>(cfg.k), static_cast<double>(cfg.pos_dim), static_cast<double>(cfg.val_dim), static_cast<double>(cfg.ta_layers),
        static_cast<double>(cfg.tb_layers), static_cast<double>(cfg.heads), static_cast<double>(cfg.ta_ff), static_cast<double>(cfg.tb_ff),
        cfg.dropout;
    ps.add("buffer.config", c);
    ps.add("buffer.value_scale", nn::Mat::Constant(1, 1, value_scale));
    return from_store(std::move(ps));
  }

  // Rebuilds the layer views over an existing parameter set (e.g. a loaded checkpoint).
  static UnionModel from_store(nn::ParamStore ps) {
    UnionModel m;
    const nn::Mat& c = ps.get("buffer.config").value();
    if (c.cols() != 9) throw Error(ErrorCode::ShapeMismatch, "union checkpoint has an unexpected config record");
    auto i = [&](int j) { return static_cast<Index>(std::llround(c(0, j))); };
    m.cfg_ = {i(0), i(1), i(2), i(3), i(4), i(5), i(6), i(7), c(0, 8)};
    m.params_ = std::move(ps);
    m.bind();
    return m;
  }

  static UnionModel load(const std::filesystem::path& path) {
    nn::ParamStore ps;
    nn::load_ckpt(ps, path);
    if (!ps.contains("buffer.config")) throw Error(ErrorCode::ShapeMismatch, "checkpoint is not a union model");
    return from_store(std::move(ps));
  }
  void save(const std::filesystem::path& path) const { nn::save_ckpt(params_, path); }

  const UnionConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  double value_scale() const { return params_.get("buffer.value_scale").item(); }
  nn::Tensor theta_a() const { return theta_a_; }
  nn::Tensor theta_b() const { return theta_b_; }

  nn::Tensor embed_offsets(const std::vector<double>& offsets) const {
    nn::Mat o(static_cast<Index>(offsets.size()), 1);
    for (std::size_t i = 0; i < offsets.size(); ++i) o(static_cast<Index>(i), 0) = offsets[i] / value_scale();
    return embed(nn::Tensor(o), theta_a_, theta_b_);
  }

  // T_A(target, memory): a representation of one part informed by the other.
  nn::Tensor ta(const nn::Tensor& target, const nn::Tensor& memory, const nn::Ctx& ctx) const {
    nn::Tensor h = target;
    for (std::size_t l = 0; l < ta_.size(); ++l) h = ta_[l](h, memory, ctx.derive(100 + l));
    return h;
  }

  // Predicted eigenvalues as a 1 x k tensor.
  nn::Tensor forward(const Spectrum& s1, const Spectrum& s2, const nn::Ctx& ctx) const {
    if (s1.k() != cfg_.k || s2.k() != cfg_.k)
      throw Error(ErrorCode::LengthMismatch, "spectra of length " + std::to_string(s1.k()) + " and " + std::to_string(s2.k()) +
                                                 " for a model with k=" + std::to_string(cfg_.k));
    const nn::Tensor e1 = embed_offsets(offset_encode(s1).offsets);
    const nn::Tensor e2 = embed_offsets(offset_encode(s2).offsets);
    // elementwise sum of the two role-swapped passes makes the result order independent
    nn::Tensor s = nn::add(ta(e1, e2, ctx.derive(1)), ta(e2, e1, ctx.derive(2)));
    for (std::size_t l = 0; l < tb_.size(); ++l) s = tb_[l](s, ctx.derive(200 + l));
    nn::Tensor offsets = nn::relu(rho_(s));
    return nn::scale(nn::cumsum(nn::transpose(offsets)), value_scale());
  }

 private:
  static nn::BlockConfig ta_cfg(const UnionConfig& c) { return {c.d(), c.ta_ff, c.heads, c.dropout}; }
  static nn::BlockConfig tb_cfg(const UnionConfig& c) { return {c.d(), c.tb_ff, c.heads, c.dropout}; }

  void bind() {
    theta_a_ = params_.get("embed.theta_a");
    theta_b_ = params_.get("embed.theta_b");
    ta_.clear();
    tb_.clear();
    for (Index l = 0; l < cfg_.ta_layers; ++l) ta_.push_back(nn::CrossBlock::bind(params_, "ta." + std::to_string(l), ta_cfg(cfg_)));
    for (Index l = 0; l < cfg_.tb_layers; ++l) tb_.push_back(nn::EncoderBlock::bind(params_, "tb." + std::to_string(l), tb_cfg(cfg_)));
    rho_ = nn::Linear::bind(params_, "rho");
  }

  UnionConfig cfg_;
  nn::ParamStore params_;
  nn::Tensor theta_a_, theta_b_;
  std::vector<nn::CrossBlock> ta_;
  std::vector<nn::EncoderBlock> tb_;
  nn::Linear rho_;
};

enum class Mode { Train, Eval };

// U(s1, s2). Eval mode is deterministic and symmetric in its arguments.
inline Spectrum union_forward(const Spectrum& s1, const Spectrum& s2, const UnionModel& m, Mode mode = Mode::Eval, std::uint64_t key = 0) {
  nn::NoGrad guard;
  const nn::Tensor out = m.forward(s1, s2, {mode == Mode::Train, key});
  Spectrum s;
  s.bc = BoundaryCondition::Dirichlet;
  s.values.assign(out.value().data(), out.value().data() + out.cols());
  return s;
}

// Left fold U(...U(U(s1, s2), s3)..., sm).
inline Spectrum union_compose(const std::vector<Spectrum>& parts, const UnionModel& m) {
  if (parts.size() < 2) throw Error(ErrorCode::InvalidArgument, "composition needs at least two spectra");
  Spectrum acc = union_forward(parts[0], parts[1], m);
  for (std::size_t i = 2; i < parts.size(); ++i) acc = union_forward(acc, parts[i], m);
  return acc;
}

// Right fold, for the associativity diagnostic.
inline Spectrum union_compose_right(const std::vector<Spectrum>& parts, const UnionModel& m) {
  if (parts.size() < 2) throw Error(ErrorCode::InvalidArgument, "composition needs at least two spectra");
  Spectrum acc = union_forward(parts[parts.size() - 2], parts.back(), m);
  for (std::size_t i = parts.size() - 2; i-- > 0;) acc = union_forward(parts[i], acc, m);
  return acc;
}

}  // namespace spun
