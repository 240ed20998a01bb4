#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

#include <spun/nn/checkpoint.hpp>
#include <spun/nn/gradcheck.hpp>
#include <spun/nn/optim.hpp>

using namespace spun;
using namespace spun::nn;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

Mat random_mat(Rng& rng, Index r, Index c) {
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("relu gradient") {
  Tensor x(Mat{{-1.0, 0.5, 2.0}}, true);
  sum(relu(x)).backward();
  CHECK(x.grad() == Mat{{0.0, 1.0, 1.0}});
}

TEST_CASE("softmax rows sum to one and respect the mask") {
  Rng rng(3);
  Tensor x(random_mat(rng, 5, 9) * 40.0);
  Mat y = softmax(x).value();
  for (Index r = 0; r < y.rows(); ++r) CHECK(std::abs(y.row(r).sum() - 1.0) < 1e-14);
  CHECK((y.array() >= 0.0).all());
  Mat mask = Mat::Zero(5, 9);
  mask.col(2).setConstant(-1e30);
  Mat ym = softmax(x, &mask).value();
  CHECK(ym.col(2).cwiseAbs().maxCoeff() < 1e-300);
}

TEST_CASE("layer_norm normalizes each row") {
  Rng rng(4);
  Tensor x(random_mat(rng, 6, 32) * 7.0 + Mat::Constant(6, 32, 3.0));
  Mat y = layer_norm(x).value();
  for (Index r = 0; r < y.rows(); ++r) {
    CHECK(std::abs(y.row(r).mean()) < 1e-12);
    CHECK(std::abs(y.row(r).array().square().mean() - 1.0) < 1e-10);
  }
}

TEST_CASE("non-finite values are rejected") {
  Tensor x(Mat{{1.0, std::numeric_limits<double>::infinity()}});
  CHECK(code_of([&] { relu(x); }) == ErrorCode::NonFinite);
  CHECK(code_of([&] { matmul(Tensor(Mat::Ones(2, 3)), Tensor(Mat::Ones(2, 3))); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("backprop matches the finite-difference oracle on a small network") {
  Rng rng(5);
  const Mat w1 = random_mat(rng, 4, 6), w2 = random_mat(rng, 6, 1);
  std::vector<double> x0(12);
  for (auto& v : x0) v = rng.uniform(-1.0, 1.0);
  auto build = [&](const Tensor& x) { return sum(sigmoid(matmul(elu(matmul(x, Tensor(w1))), Tensor(w2)))); };
  auto f = [&](const std::vector<double>& v) {
    NoGrad g;
    Mat x(3, 4);
    std::copy(v.begin(), v.end(), x.data());
    return build(Tensor(x)).item();
  };
  Mat xm(3, 4);
  std::copy(x0.begin(), x0.end(), xm.data());
  Tensor x(xm, true);
  build(x).backward();
  const auto num = oracle::fd_gradient(f, x0);
  for (std::size_t i = 0; i < num.size(); ++i) CHECK(std::abs(x.grad().data()[i] - num[i]) < 1e-8);
}

TEST_CASE("gradcheck suite") {
  for (const auto& r : gradcheck_suite()) {
    INFO(r.name << " error " << r.error);
    CHECK(r.pass());
  }
}

TEST_CASE("gradcheck at union-model width") {
  ParamStore ps;
  const BlockConfig cfg{32, 64, 8, 0.1};
  auto cb = CrossBlock::make(ps, "c", cfg, 2);
  Rng rng(6);
  Tensor w(random_mat(rng, 20, 32));
  std::vector<Tensor> xs{ps.get("c.cross.q.w"), ps.get("c.ff1.w"), Tensor(random_mat(rng, 20, 32), true), Tensor(random_mat(rng, 20, 32), true)};
  const double err = gradcheck([&](const auto& x) { return sum(mul(cb(x[2], x[3], {true, 9}), w)); }, xs);
  CHECK(err < 1e-5);
}

TEST_CASE("attention") {
  ParamStore ps;
  auto mha = MultiHeadAttention::make(ps, "a", 16, 4, 1);
  Rng rng(7);
  // identical rows in, identical rows out
  Mat same(5, 16);
  same.rowwise() = random_mat(rng, 1, 16).row(0);
  Mat out = mha(Tensor(same), Tensor(same), Tensor(same)).value();
  for (Index r = 1; r < 5; ++r) CHECK((out.row(r) - out.row(0)).norm() < 1e-12);

  // self-attention is permutation equivariant without positional input
  Mat x = random_mat(rng, 6, 16);
  std::vector<Index> perm{3, 0, 5, 1, 4, 2};
  Mat px(6, 16);
  for (Index r = 0; r < 6; ++r) px.row(r) = x.row(perm[static_cast<std::size_t>(r)]);
  Mat y = mha(Tensor(x), Tensor(x), Tensor(x)).value();
  Mat py = mha(Tensor(px), Tensor(px), Tensor(px)).value();
  for (Index r = 0; r < 6; ++r) CHECK((py.row(r) - y.row(perm[static_cast<std::size_t>(r)])).norm() < 1e-12);

  CHECK(code_of([&] { MultiHeadAttention::make(ps, "b", 10, 4, 1); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("encoder and cross blocks") {
  ParamStore ps;
  const BlockConfig cfg{16, 24, 4, 0.1};
  auto enc = EncoderBlock::make(ps, "e", cfg, 3);
  auto cb = CrossBlock::make(ps, "c", cfg, 3);
  Rng rng(8);
  Tensor x(random_mat(rng, 7, 16)), m1(random_mat(rng, 7, 16)), m2(random_mat(rng, 7, 16));

  CHECK(enc(x, {}).value() == enc(x, {}).value());
  CHECK(enc(x, {true, 1}).value() == enc(x, {true, 1}).value());
  CHECK(enc(x, {true, 1}).value() != enc(x, {true, 2}).value());

  // with zero output projections the attention sublayer vanishes
  Tensor(ps.get("e.attn.o.w")).value().setZero();
  Tensor(ps.get("e.attn.o.b")).value().setZero();
  Tensor(ps.get("e.ff2.w")).value().setZero();
  Tensor(ps.get("e.ff2.b")).value().setZero();
  CHECK((enc(x, {}).value() - layer_norm(layer_norm(x)).value()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(cb(x, m1, {}).value() != cb(x, m2, {}).value());
}

TEST_CASE("adam") {
  ParamStore ps;
  Tensor p = ps.add("p", Mat::Constant(1, 1, 0.7));
  AdamState st;
  st.weight_decay = 0.01;
  p.node()->grad = Mat::Constant(1, 1, 0.3);
  adam_step(ps, st, 1e-3);
  CHECK(std::abs(p.item() - oracle::adam_first_step(0.7, 0.3, 1e-3, 0.01)) < 1e-12);
  CHECK(p.grad().size() == 0);

  // zero gradient and no decay leaves the parameter where it is
  ParamStore q;
  Tensor z = q.add("z", Mat::Constant(2, 2, 1.5));
  AdamState sz;
  adam_step(q, sz, 0.1);
  CHECK(z.value() == Mat::Constant(2, 2, 1.5));

  // buffers are never updated
  Tensor b = q.add("buffer.scale", Mat::Constant(1, 1, 4.0));
  adam_step(q, sz, 0.1);
  CHECK(b.item() == 4.0);
}

TEST_CASE("lr_at follows the warm-restart cosine") {
  const LrSchedule s{2e-4, 0.0, 10, 2};
  for (int e = 0; e < 1300; ++e) CHECK(std::abs(lr_at(s, e) - oracle::warm_restart_lr(2e-4, 0.0, 10, 2, e)) <= 1e-12);
  CHECK(lr_at(s, 0) == 2e-4);
  CHECK(lr_at(s, 10) == 2e-4);
  CHECK(lr_at(s, 30) == 2e-4);
  const LrSchedule flat{1e-3, 1e-5, 7, 1};
  for (int e = 0; e < 50; ++e) CHECK(std::abs(lr_at(flat, e) - oracle::warm_restart_lr(1e-3, 1e-5, 7, 1, e)) <= 1e-12);
  CHECK(code_of([&] { lr_at(s, -1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("checkpoint") {
  ParamStore ps;
  EncoderBlock::make(ps, "e", {8, 12, 2, 0.1}, 4);
  ps.add("buffer.scale", Mat::Constant(1, 1, 2.5));
  const std::string bytes = ckpt_bytes(ps);

  ParamStore back;
  load_ckpt_bytes(back, bytes);
  CHECK(back.value_hash() == ps.value_hash());
  CHECK(ckpt_bytes(back) == bytes);
  CHECK(!back.entries().at("buffer.scale").trainable);

  // loading into a populated store of the same layout overwrites values
  ParamStore other;
  EncoderBlock::make(other, "e", {8, 12, 2, 0.1}, 99);
  other.add("buffer.scale", Mat::Constant(1, 1, 0.0));
  load_ckpt_bytes(other, bytes);
  CHECK(other.value_hash() == ps.value_hash());

  ParamStore wrong;
  EncoderBlock::make(wrong, "e", {8, 16, 2, 0.1}, 4);
  wrong.add("buffer.scale", Mat::Constant(1, 1, 0.0));
  CHECK(code_of([&] { load_ckpt_bytes(wrong, bytes); }) == ErrorCode::ShapeMismatch);

  ParamStore sink;
  CHECK(code_of([&] { load_ckpt_bytes(sink, bytes.substr(0, bytes.size() - 9)); }) == ErrorCode::ChecksumMismatch);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK(code_of([&] { load_ckpt_bytes(sink, flipped); }) == ErrorCode::ChecksumMismatch);
  std::string v2 = bytes;
  v2[9] = '2';
  CHECK(code_of([&] { load_ckpt_bytes(sink, v2); }) == ErrorCode::VersionMismatch);
  CHECK(code_of([&] { load_ckpt_bytes(sink, "PK\x03\x04 not a checkpoint"); }) == ErrorCode::VersionMismatch);

  // trailer is the standard CRC-32 of everything before it
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  CHECK(stored == oracle::crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4));

  ParamStore empty;
  ParamStore empty_back;
  load_ckpt_bytes(empty_back, ckpt_bytes(empty));
  CHECK(empty_back.empty());

  const auto path = std::filesystem::temp_directory_path() / "spun_test_nn.ckpt";
  save_ckpt(ps, path);
  ParamStore from_file;
  load_ckpt(from_file, path);
  CHECK(from_file.value_hash() == ps.value_hash());
}
