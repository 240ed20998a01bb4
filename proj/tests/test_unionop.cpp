#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

#include <spun/unionop/train.hpp>

using namespace spun;

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

Spectrum random_spectrum(Rng& rng, Index k, double spread = 10.0) {
  Spectrum s;
  double acc = 0.0;
  for (Index i = 0; i < k; ++i) {
    acc += rng.uniform(0.0, spread);
    s.values.push_back(acc);
  }
  return s;
}

const DatasetManifest& sixty() {
  static const DatasetManifest m = [] {
    auto fam = synth_family(21, 4, 3, 642);
    BuildConfig cfg;
    cfg.full_cover_pairs = 2;
    cfg.partial_union_pairs = 3;
    cfg.augmentations = 1;
    return build_manifest(fam, cfg, {0.15, 0.0}, 2);
  }();
  return m;
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch = 8;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("embed") {
  auto m = UnionModel::create({}, 1.0, 1);
  const Index k = m.config().k;
  nn::Tensor zero = embed(nn::Tensor(nn::Mat::Zero(k, 1)), m.theta_a(), m.theta_b());
  CHECK(zero.cols() == 32);
  CHECK(zero.value().leftCols(16) == m.theta_a().value());
  CHECK(zero.value().rightCols(16).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(2);
  nn::Mat o(k, 1);
  for (Index i = 0; i < k; ++i) o(i, 0) = rng.uniform(0.0, 3.0);
  nn::Tensor e1 = embed(nn::Tensor(o), m.theta_a(), m.theta_b());
  nn::Tensor e3 = embed(nn::Tensor(o * 3.0), m.theta_a(), m.theta_b());
  CHECK(e3.value().leftCols(16) == e1.value().leftCols(16));
  CHECK((e3.value().rightCols(16) - 3.0 * e1.value().rightCols(16)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(e1.value().col(31) == o.col(0));

  nn::Tensor flat = embed(nn::Tensor(nn::Mat::Ones(k, 1)), m.theta_a(), m.theta_b());
  CHECK(flat.value().row(0) != flat.value().row(1));

  CHECK(code_of([&] { embed(nn::Tensor(nn::Mat::Zero(k - 1, 1)), m.theta_a(), m.theta_b()); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("union_forward architecture invariants on random weights") {
  Rng rng(5);
  for (std::uint64_t seed : {1u, 2u}) {
    auto m = UnionModel::create({}, rng.uniform(0.5, 5.0), seed);
    for (int t = 0; t < 100; ++t) {
      const Spectrum a = random_spectrum(rng, 20), b = random_spectrum(rng, 20, 3.0);
      const Spectrum ab = union_forward(a, b, m), ba = union_forward(b, a, m);
      CHECK(ab.values == ba.values);
      CHECK(ab.values[0] >= 0.0);
      for (Index i = 1; i < 20; ++i) CHECK(ab.values[i] >= ab.values[i - 1]);
    }
  }
  auto m = UnionModel::create({}, 1.0, 1);
  const Spectrum a = random_spectrum(rng, 20), b = random_spectrum(rng, 20);
  CHECK(union_forward(a, b, m).values == union_forward(a, b, m).values);
  CHECK(union_forward(a, b, m, Mode::Train, 1).values != union_forward(a, b, m, Mode::Train, 2).values);
  CHECK(code_of([&] { union_forward(random_spectrum(rng, 19), b, m); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("one training step reaches every parameter group") {
  const auto& ds = sixty();
  auto m = UnionModel::create({}, target_value_scale(ds.split(Split::Train)), 4);
  const auto& s = ds.records.front().sample;
  nn::Mat target(1, 20);
  for (Index i = 0; i < 20; ++i) target(0, i) = s.union_spec.values[i];
  nn::mse(m.forward(s.spec1, s.spec2, {true, 7}), nn::Tensor(target)).backward();
  for (const auto& [name, e] : m.params().entries()) {
    if (!e.trainable) continue;
    const bool watched = name.find("embed.") == 0 || name.find("rho.") == 0 || name.find(".q.w") != std::string::npos ||
                         name.find(".k.w") != std::string::npos || name.find(".v.w") != std::string::npos ||
                         name.find(".o.w") != std::string::npos;
    if (!watched) continue;
    INFO(name);
    REQUIRE(e.tensor.grad().size() > 0);
    CHECK(e.tensor.grad().norm() > 0.0);
  }
}

TEST_CASE("train_union") {
  const auto& ds = sixty();
  REQUIRE(ds.records.size() == 60);
  const auto res = train_union(ds, quick(10));
  REQUIRE(res.history.size() == 10);
  for (const auto& e : res.history) CHECK(std::abs(e.lr - oracle::warm_restart_lr(2e-4, 0.0, 10, 2, e.epoch)) <= 1e-12);
  // loss trends down over the first restart period
  const auto& h = res.history;
  CHECK((h[7].train_loss + h[8].train_loss + h[9].train_loss) < (h[0].train_loss + h[1].train_loss + h[2].train_loss));
  CHECK(h[static_cast<std::size_t>(res.best_epoch)].best);
  double best = 1e300;
  for (const auto& e : h) best = std::min(best, e.val_loss);
  CHECK(h[static_cast<std::size_t>(res.best_epoch)].val_loss == best);

  // the returned parameters are the best-validation ones
  const auto [train, val] = train_val_split(ds, 0.1, 3);
  CHECK(eval_union(res.model, val).mse == doctest::Approx(best).epsilon(1e-12));

  const auto again = train_union(ds, quick(10));
  CHECK(history_jsonl(again.history) == history_jsonl(res.history));
  CHECK(again.model.params().value_hash() == res.model.params().value_hash());

  // fine-tuning starts from the given weights and leaves them untouched
  const auto before = res.model.params().value_hash();
  auto tuned = train_union(ds, quick(1), &res.model);
  CHECK(res.model.params().value_hash() == before);
  CHECK(tuned.model.value_scale() == res.model.value_scale());

  // positional codes matter on a trained model
  Spectrum a = ds.records[0].sample.spec1, b = ds.records[0].sample.spec2;
  Spectrum swapped = a;
  std::swap(swapped.values[3], swapped.values[11]);
  CHECK(union_forward(swapped, b, res.model).values != union_forward(a, b, res.model).values);

  TrainConfig bad = quick(1);
  bad.batch = 0;
  CHECK(code_of([&] { train_union(ds, bad); }) == ErrorCode::InvalidArgument);

  auto poisoned = ds;
  for (auto& r : poisoned.records) r.sample.union_spec.values[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([&] { train_union(poisoned, quick(1)); }) == ErrorCode::DivergenceDetected);
}

TEST_CASE("checkpointed model predicts identically") {
  auto m = UnionModel::create({}, 2.5, 9);
  const auto path = std::filesystem::temp_directory_path() / "spun_test_union.ckpt";
  m.save(path);
  auto back = UnionModel::load(path);
  CHECK(back.config() == m.config());
  CHECK(back.value_scale() == 2.5);
  Rng rng(1);
  const Spectrum a = random_spectrum(rng, 20), b = random_spectrum(rng, 20);
  CHECK(union_forward(a, b, back).values == union_forward(a, b, m).values);

  nn::ParamStore other;
  other.add("x", nn::Mat::Zero(1, 1));
  nn::save_ckpt(other, path);
  CHECK(code_of([&] { UnionModel::load(path); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("eval metrics") {
  Rng rng(3);
  std::vector<Spectrum> truth, shifted;
  for (int i = 0; i < 5; ++i) {
    truth.push_back(random_spectrum(rng, 20));
    shifted.push_back(truth.back());
    for (auto& v : shifted.back().values) v += 1.0;
  }
  const auto zero = spectrum_errors(truth, truth);
  CHECK(zero.mse == 0.0);
  CHECK(zero.mae == 0.0);
  const auto one = spectrum_errors(shifted, truth);
  CHECK(one.mse == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(one.mae == doctest::Approx(1.0).epsilon(1e-12));

  Spectrum a{{1, 5, 6}}, b{{2, 3, 7}};
  CHECK(min_baseline(a, b).values == std::vector<double>{1, 3, 6});
}

TEST_CASE("union_compose") {
  auto m = UnionModel::create({}, 3.0, 2);
  Rng rng(4);
  std::vector<Spectrum> parts;
  for (int i = 0; i < 4; ++i) parts.push_back(random_spectrum(rng, 20));
  CHECK(union_compose({parts[0], parts[1]}, m).values == union_forward(parts[0], parts[1], m).values);
  const auto left = union_compose(parts, m);
  CHECK(left.values == union_forward(union_forward(union_forward(parts[0], parts[1], m), parts[2], m), parts[3], m).values);
  const auto right = union_compose_right(parts, m);
  CHECK(right.values == union_forward(parts[0], union_forward(parts[1], union_forward(parts[2], parts[3], m), m), m).values);
  CHECK(code_of([&] { union_compose({parts[0]}, m); }) == ErrorCode::InvalidArgument);
}
