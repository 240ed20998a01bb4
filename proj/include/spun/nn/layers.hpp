#pragma once

#include <spun/nn/tensor.hpp>

#include <map>

namespace spun::nn {

// Named parameters in sorted-name order. Names starting with "buffer." are
// stored and checkpointed like parameters but never touched by the optimizer.
class ParamStore {
 public:
  struct Entry {
    Tensor tensor;
    bool trainable = true;
  };

  static bool is_buffer(std::string_view name) { return name.substr(0, 7) == "buffer."; }

  Tensor add(const std::string& name, Mat value) {
    if (entries_.count(name)) throw Error(ErrorCode::InvalidArgument, "parameter '" + name + "' registered twice");
    const bool trainable = !is_buffer(name);
    Tensor t(std::move(value), trainable);
    entries_.emplace(name, Entry{t, trainable});
    return t;
  }

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); the stream depends only on (seed, name).
  Tensor add_uniform(const std::string& name, Index rows, Index cols, Index fan_in, std::uint64_t seed) {
    Rng rng(hash_combine(seed, fnv1a(name)));
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-b, b);
    return add(name, std::move(m));
  }

  Tensor add_normal(const std::string& name, Index rows, Index cols, double sigma, std::uint64_t seed) {
    Rng rng(hash_combine(seed, fnv1a(name)));
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng.normal();
    return add(name, std::move(m));
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  Tensor get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorCode::InvalidArgument, "no parameter '" + name + "'");
    return it->second.tensor;
  }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void zero_grad() {
    for (auto& [name, e] : entries_) e.tensor.zero_grad();
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, e] : entries_) n += e.tensor.value().size();
    return n;
  }

  // Deep copy of the values (gradients are not copied).
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, e] : entries_) out.add(name, e.tensor.value());
    return out;
  }

  void copy_values_from(const ParamStore& other) {
    for (auto& [name, e] : entries_) e.tensor.value() = other.get(name).value();
  }

  std::uint64_t value_hash() const {
    std::uint64_t h = fnv1a("params");
    for (const auto& [name, e] : entries_) {
      h = fnv1a(name, h);
      const Mat& v = e.tensor.value();
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), sizeof(double) * static_cast<std::size_t>(v.size())), h);
    }
    return h;
  }

 private:
  std::map<std::string, Entry> entries_;
};

// Forward-pass context: train mode enables dropout; `key` seeds the masks.
struct Ctx {
  bool train = false;
  std::uint64_t key = 0;

  Ctx derive(std::uint64_t salt) const { return {train, hash_combine(key, salt)}; }
};

struct Linear {
  Tensor w, b;

  static Linear make(ParamStore& ps, const std::string& name, Index in, Index out, std::uint64_t seed) {
    return {ps.add_uniform(name + ".w", in, out, in, seed), ps.add_uniform(name + ".b", 1, out, in, seed)};
  }
  static Linear bind(const ParamStore& ps, const std::string& name) { return {ps.get(name + ".w"), ps.get(name + ".b")}; }
  Tensor operator()(const Tensor& x) const { return add_row(matmul(x, w), b); }
  Index in() const { return w.rows(); }
  Index out() const { return w.cols(); }
};

// layer_norm followed by a learned per-feature gain and bias.
struct Norm {
  Tensor gain, bias;

  static Norm make(ParamStore& ps, const std::string& name, Index d) {
    return {ps.add(name + ".gain", Mat::Ones(1, d)), ps.add(name + ".bias", Mat::Zero(1, d))};
  }
  static Norm bind(const ParamStore& ps, const std::string& name) { return {ps.get(name + ".gain"), ps.get(name + ".bias")}; }
  Tensor operator()(const Tensor& x) const { return add_row(mul_row(layer_norm(x), gain), bias); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  Index heads = 1;

  static MultiHeadAttention make(ParamStore& ps, const std::string& name, Index d, Index heads, std::uint64_t seed) {
    if (heads < 1 || d % heads != 0) throw Error(ErrorCode::ShapeMismatch, "model width must be divisible by the head count");
    return {Linear::make(ps, name + ".q", d, d, seed), Linear::make(ps, name + ".k", d, d, seed), Linear::make(ps, name + ".v", d, d, seed),
            Linear::make(ps, name + ".o", d, d, seed), heads};
  }
  static MultiHeadAttention bind(const ParamStore& ps, const std::string& name, Index heads) {
    return {Linear::bind(ps, name + ".q"), Linear::bind(ps, name + ".k"), Linear::bind(ps, name + ".v"), Linear::bind(ps, name + ".o"), heads};
  }

  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value, const Mat* mask = nullptr) const {
    if (key.rows() != value.rows()) throw Error(ErrorCode::ShapeMismatch, "attention: key and value lengths differ");
    const Index d = q.in();
    if (query.cols() != d || key.cols() != d || value.cols() != d) throw Error(ErrorCode::ShapeMismatch, "attention: width mismatch");
    const Index dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor qq = q(query), kk = k(key), vv = v(value);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      Tensor qh = slice(qq, 1, h * dh, dh), kh = slice(kk, 1, h * dh, dh), vh = slice(vv, 1, h * dh, dh);
      Tensor att = softmax(scale(matmul(qh, transpose(kh)), s), mask);
      outs.push_back(matmul(att, vh));
    }
    return o(concat(outs, 1));
  }
};

struct BlockConfig {
  Index d = 32;
  Index ff = 64;
  Index heads = 8;
  double dropout = 0.1;
};

// Post-norm transformer encoder layer.
struct EncoderBlock {
  MultiHeadAttention attn;
  Linear ff1, ff2;
  Norm n1, n2;
  double p = 0.1;

  static EncoderBlock make(ParamStore& ps, const std::string& name, const BlockConfig& c, std::uint64_t seed) {
    return {MultiHeadAttention::make(ps, name + ".attn", c.d, c.heads, seed), Linear::make(ps, name + ".ff1", c.d, c.ff, seed),
            Linear::make(ps, name + ".ff2", c.ff, c.d, seed), Norm::make(ps, name + ".n1", c.d), Norm::make(ps, name + ".n2", c.d), c.dropout};
  }
  static EncoderBlock bind(const ParamStore& ps, const std::string& name, const BlockConfig& c) {
    return {MultiHeadAttention::bind(ps, name + ".attn", c.heads), Linear::bind(ps, name + ".ff1"), Linear::bind(ps, name + ".ff2"),
            Norm::bind(ps, name + ".n1"), Norm::bind(ps, name + ".n2"), c.dropout};
  }

  Tensor operator()(const Tensor& x, const Ctx& ctx) const {
    Tensor h = n1(add(x, dropout(attn(x, x, x), p, ctx.train, ctx.derive(1).key)));
    Tensor f = ff2(relu(ff1(h)));
    return n2(add(h, dropout(f, p, ctx.train, ctx.derive(2).key)));
  }
};

// Self-attention on the target, cross-attention from target into memory, then
// feed-forward; post-norm residuals around each.
struct CrossBlock {
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;
  Norm n1, n2, n3;
  double p = 0.1;

  static CrossBlock make(ParamStore& ps, const std::string& name, const BlockConfig& c, std::uint64_t seed) {
    return {MultiHeadAttention::make(ps, name + ".self", c.d, c.heads, seed),
            MultiHeadAttention::make(ps, name + ".cross", c.d, c.heads, seed),
            Linear::make(ps, name + ".ff1", c.d, c.ff, seed),
            Linear::make(ps, name + ".ff2", c.ff, c.d, seed),
            Norm::make(ps, name + ".n1", c.d),
            Norm::make(ps, name + ".n2", c.d),
            Norm::make(ps, name + ".n3", c.d),
            c.dropout};
  }
  static CrossBlock bind(const ParamStore& ps, const std::string& name, const BlockConfig& c) {
    return {MultiHeadAttention::bind(ps, name + ".self", c.heads),
            MultiHeadAttention::bind(ps, name + ".cross", c.heads),
            Linear::bind(ps, name + ".ff1"),
            Linear::bind(ps, name + ".ff2"),
            Norm::bind(ps, name + ".n1"),
            Norm::bind(ps, name + ".n2"),
            Norm::bind(ps, name + ".n3"),
            c.dropout};
  }

  Tensor operator()(const Tensor& target, const Tensor& memory, const Ctx& ctx) const {
    Tensor h = n1(add(target, dropout(self_attn(target, target, target), p, ctx.train, ctx.derive(1).key)));
    Tensor c = n2(add(h, dropout(cross_attn(h, memory, memory), p, ctx.train, ctx.derive(2).key)));
    Tensor f = ff2(relu(ff1(c)));
    return n3(add(c, dropout(f, p, ctx.train, ctx.derive(3).key)));
  }
};

}  // namespace spun::nn
