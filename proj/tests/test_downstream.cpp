#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

#include <spun/downstream/region.hpp>
#include <spun/downstream/retrieval.hpp>

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

const ShapeFamily& family() {
  static const ShapeFamily f = synth_family(21, 4, 3, 642);
  return f;
}

const DatasetManifest& sixty() {
  static const DatasetManifest m = [] {
    BuildConfig cfg;
    cfg.full_cover_pairs = 2;
    cfg.partial_union_pairs = 3;
    cfg.augmentations = 1;
    return build_manifest(family(), cfg, {0.15, 0.0}, 2);
  }();
  return m;
}

Spectrum ramp(Index k, double step) {
  Spectrum s;
  for (Index i = 0; i < k; ++i) s.values.push_back(step * static_cast<double>(i + 1));
  return s;
}

RegionMask random_mask(Rng& rng, std::size_t n) {
  RegionMask m(n);
  for (std::size_t i = 0; i < n; ++i)
    if (rng.uniform(0.0, 1.0) < 0.4) m.set(i);
  return m;
}

std::vector<double> random_probs(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  for (auto& v : p) v = rng.uniform(0.0, 1.0);
  return p;
}

}  // namespace

TEST_CASE("region width ladder") {
  CHECK(region_widths(6890) == std::vector<Index>{1300, 2600, 3900, 5200, 6890});
  const std::array<double, 5> frac{0.19, 0.38, 0.57, 0.75, 1.0};
  for (Index v : {642, 2562, 6890})
    for (std::size_t l = 0; l < 5; ++l) CHECK(std::abs(static_cast<double>(region_widths(v)[l]) / static_cast<double>(v) - frac[l]) < 0.01);
  const Index nv = family().num_vertices();
  auto m = RegionModel::create(20, nv, std::vector<double>(20, 3.0), 1);
  CHECK(m.k() == 20);
  CHECK(m.num_vertices() == nv);
  const auto w = region_widths(nv);
  for (int l = 0; l < 5; ++l) CHECK(m.params().get("fc" + std::to_string(l) + ".w").cols() == w[static_cast<std::size_t>(l)]);
  CHECK(code_of([&] { RegionModel::create(20, nv, std::vector<double>(19, 1.0), 1); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("region_forward") {
  const Index nv = family().num_vertices();
  Rng rng(3);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = RegionModel::create(20, nv, std::vector<double>(20, rng.uniform(1.0, 50.0)), seed);
    const Spectrum s = ramp(20, rng.uniform(0.5, 10.0));
    const auto p = region_forward(s, m);
    REQUIRE(static_cast<Index>(p.size()) == nv);
    for (double v : p) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    CHECK(region_forward(s, m) == p);
    CHECK(region_forward(s, m, Mode::Train, 1) != region_forward(s, m, Mode::Train, 2));
  }
  auto m = RegionModel::create(20, nv, std::vector<double>(20, 1.0), 1);
  CHECK(code_of([&] { region_forward(ramp(19, 1.0), m); }) == ErrorCode::LengthMismatch);

  const auto path = std::filesystem::temp_directory_path() / "spun_test_region.ckpt";
  m.save(path);
  CHECK(region_forward(ramp(20, 2.0), RegionModel::load(path)) == region_forward(ramp(20, 2.0), m));
}

TEST_CASE("sym_loss") {
  const auto& fam = family();
  const auto& sym = fam.symmetry_map;
  const std::size_t n = sym.size();
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const RegionMask gt = random_mask(rng, n);
    CHECK(sym_loss(mask_values(gt), gt, sym) == 0.0);
    CHECK(sym_loss(mask_values(gt.permuted(sym)), gt, sym) == 0.0);
    const auto p = random_probs(rng, n);
    std::vector<double> pp(n);
    for (std::size_t i = 0; i < n; ++i) pp[i] = p[static_cast<std::size_t>(sym[i])];
    CHECK(std::abs(sym_loss(p, gt, sym) - sym_loss(pp, gt.permuted(sym), sym)) < 1e-15);
    CHECK(sym_loss(p, gt, sym) <= plain_mse(p, mask_values(gt)));
  }
  CHECK(code_of([&] { sym_loss(std::vector<double>(n - 1, 0.5), RegionMask(n), sym); }) == ErrorCode::LengthMismatch);

  // the batched loss agrees with the scalar one
  std::vector<RegionMask> gts;
  nn::Mat pred(3, static_cast<Index>(n));
  double expect = 0.0;
  for (Index r = 0; r < 3; ++r) {
    gts.push_back(random_mask(rng, n));
    const auto p = random_probs(rng, n);
    for (std::size_t i = 0; i < n; ++i) pred(r, static_cast<Index>(i)) = p[i];
    expect += sym_loss(p, gts.back(), sym) / 3.0;
  }
  CHECK(sym_loss(nn::Tensor(pred), gts, sym).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("region scoring") {
  const auto& sym = family().symmetry_map;
  Rng rng(5);
  const RegionMask gt = random_mask(rng, sym.size());
  const auto exact = score_symmetric(threshold(mask_values(gt)), gt, sym);
  CHECK(exact.iou == 1.0);
  CHECK(exact.accuracy == 1.0);
  const auto mirrored = score_symmetric(gt.permuted(sym), gt, sym);
  CHECK(mirrored.iou == 1.0);
  CHECK(mirrored.accuracy == 1.0);

  const RegionMask full(sym.size(), true);
  const auto none = score_symmetric(~full, full, sym);
  CHECK(none.iou == 0.0);
  CHECK(none.accuracy == 0.0);
  const auto inv = score_mask(~gt, gt);
  CHECK(inv.iou == 0.0);
  CHECK(inv.accuracy == 0.0);

  for (int t = 0; t < 20; ++t) {
    const auto s = score_symmetric(random_mask(rng, sym.size()), random_mask(rng, sym.size()), sym);
    CHECK(s.iou >= 0.0);
    CHECK(s.iou <= 1.0);
    CHECK(s.accuracy >= 0.0);
    CHECK(s.accuracy <= 1.0);
  }
  CHECK(threshold({0.2, 0.5, 0.8}) == RegionMask(std::vector<std::uint8_t>{0, 1, 1}));
}

TEST_CASE("train_region") {
  const auto& ds = sixty();
  const auto& sym = family().symmetry_map;
  auto um = UnionModel::create({}, target_value_scale(ds.split(Split::Train)), 5);
  const auto before = um.params().value_hash();
  RegionTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 8;
  cfg.patience = 3;
  const auto res = train_region(ds, sym, &um, cfg);
  CHECK(um.params().value_hash() == before);
  REQUIRE(!res.history.empty());
  for (const auto& e : res.history) CHECK(std::abs(e.lr - oracle::warm_restart_lr(5e-5, 0.0, 10, 2, e.epoch)) <= 1e-12);
  const auto& best = res.history[static_cast<std::size_t>(res.best_epoch)];
  CHECK(best.best);
  CHECK(best.val_iou >= res.history.front().val_iou);
  for (const auto& e : res.history) CHECK(e.val_iou <= best.val_iou);

  // deterministic under a fixed seed
  const auto again = train_region(ds, sym, &um, cfg);
  CHECK(again.model.params().value_hash() == res.model.params().value_hash());

  const auto test = ds.split(Split::TestA);
  const auto gt = eval_region(res.model, test, sym);
  const auto pred = eval_region(res.model, test, sym, &um);
  for (const auto& s : {gt, pred}) {
    CHECK(s.iou >= 0.0);
    CHECK(s.iou <= 1.0);
    CHECK(s.accuracy >= 0.0);
    CHECK(s.accuracy <= 1.0);
  }

  // patience 1 stops as soon as validation IoU fails to improve
  RegionTrainConfig eager = cfg;
  eager.patience = 1;
  eager.epochs = 40;
  const auto stopped = train_region(ds, sym, nullptr, eager);
  CHECK(stopped.history.size() < 40);
  CHECK(!stopped.history.back().best);

  CHECK(code_of([&] { train_region(ds, std::vector<Index>(3, 0), nullptr, cfg); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("query_topk matches a linear scan") {
  Rng rng(6);
  const std::size_t n = 200, d = 20;
  std::vector<std::vector<double>> db;
  std::vector<std::size_t> ids;
  RetrievalIndex idx;
  for (std::size_t i = 0; i < n; ++i) {
    Signature s;
    for (std::size_t j = 0; j < d; ++j) s.values.push_back(rng.uniform(0.0, 10.0));
    db.push_back(s.values);
    ids.push_back(1000 - 3 * i);
    idx.add(static_cast<Index>(ids.back()), static_cast<Index>(i % 7), s);
  }
  for (int t = 0; t < 200; ++t) {
    Signature q;
    for (std::size_t j = 0; j < d; ++j) q.values.push_back(rng.uniform(0.0, 10.0));
    const auto ranked = idx.query_topk(q, n);
    const auto expect = oracle::linear_scan_rank(db, ids, q.values);
    REQUIRE(ranked.size() == n);
    for (std::size_t r = 0; r < n; ++r) CHECK(static_cast<std::size_t>(ranked[r].shape_id) == expect[r]);
    const auto top5 = idx.query_topk(q, 5);
    for (std::size_t r = 0; r < 5; ++r) CHECK(top5[r].shape_id == ranked[r].shape_id);
  }

  // self match, K beyond the index size
  const auto self = idx.query_topk(Signature{db[17]}, 1);
  CHECK(self[0].shape_id == static_cast<Index>(ids[17]));
  CHECK(self[0].distance == 0.0);
  CHECK(idx.query_topk(Signature{db[0]}, 10 * n).size() == n);

  // equal distances go to the lower id
  RetrievalIndex tie;
  tie.add(9, 0, Signature{{1.0, 0.0}});
  tie.add(4, 1, Signature{{-1.0, 0.0}});
  CHECK(tie.query_topk(Signature{{0.0, 0.0}}, 2)[0].shape_id == 4);

  CHECK(code_of([] { RetrievalIndex{}.query_topk(Signature{{1.0}}, 1); }) == ErrorCode::EmptyIndex);
  CHECK(code_of([&] { tie.add(5, 0, Signature{{1.0}}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([&] { tie.add(9, 0, Signature{{1.0, 2.0}}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("eval_retrieval") {
  const auto& fam = family();
  std::vector<IndexShape> shapes;
  for (Index i = 0; i < fam.identities; ++i)
    for (Index p = 0; p < fam.poses; ++p)
      shapes.push_back({i * fam.poses + p, i, spectrum(fam.embedding(i, p), 20, BoundaryCondition::Closed)});
  const auto idx = index_build(shapes);
  std::vector<RetrievalQuery> exact;
  for (const auto& s : shapes) exact.push_back({s.identity, shape_dna(s.spectrum)});
  const auto r = eval_retrieval(idx, exact);
  CHECK(r.at(1) == 1.0);
  CHECK(r.at(5) == 1.0);
  CHECK(r.at(10) == 1.0);

  // a query of an identity absent from the index never hits
  const auto miss = eval_retrieval(idx, {{99, exact[0].signature}});
  CHECK(miss.at(10) == 0.0);
  CHECK(eval_retrieval(idx, {}).at(1) == 0.0);

  const auto j = retrieval_json(3, idx.query_topk(exact[3].signature, 2));
  CHECK(j["query_id"] == 3);
  CHECK(j["ranked"].size() == 2);
  CHECK(j["ranked"][0]["shape_id"] == 3);
  CHECK(j["ranked"][0]["distance"] == 0.0);
}

TEST_CASE("interpolate_spectra") {
  const Spectrum a{{0, 2, 4}}, b{{2, 4, 6}};
  CHECK(interpolate_spectra(a, b, 0.0).values == a.values);
  CHECK(interpolate_spectra(a, b, 1.0).values == b.values);
  CHECK(interpolate_spectra(a, b, 0.5).values == std::vector<double>{1, 3, 5});
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    Spectrum x, y;
    double ax = 0.0, ay = 0.0;
    for (int i = 0; i < 20; ++i) {
      x.values.push_back(ax += rng.uniform(0.0, 5.0));
      y.values.push_back(ay += rng.uniform(0.0, 5.0));
    }
    const auto s = interpolate_spectra(x, y, rng.uniform(0.0, 1.0));
    for (int i = 1; i < 20; ++i) CHECK(s.values[static_cast<std::size_t>(i)] >= s.values[static_cast<std::size_t>(i - 1)]);
  }
  CHECK(code_of([&] { interpolate_spectra(a, Spectrum{{1, 2}}, 0.5); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([&] { interpolate_spectra(a, b, 1.5); }) == ErrorCode::InvalidArgument);
}
