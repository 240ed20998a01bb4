#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

#include <spun/geometry/family.hpp>
#include <spun/geometry/sampling.hpp>
#include <spun/spectral/spectrum.hpp>

using namespace spun;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

Eigen::MatrixXd dense(const SparseMatrix& s) { return Eigen::MatrixXd(s); }

}  // namespace

TEST_CASE("cotan_laplacian on a right isosceles triangle") {
  TriMesh tri;
  tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  tri.faces = {{0, 1, 2}};
  auto lp = cotan_laplacian(tri);
  // hand computation: right angle at 0 (cot 0), pi/4 at 1 and 2 (cot 1)
  Eigen::Matrix3d expected;
  expected << 1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5;
  CHECK((dense(lp.stiffness) - expected).norm() < 1e-15);
  for (int i = 0; i < 3; ++i) CHECK(lp.mass[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("cotan_laplacian invariants") {
  auto fam = synth_family(2, 2, 2, 642);
  for (const TriMesh& m : {fam.embedding(1, 1), grid_mesh(13), disk_mesh(6)}) {
    auto lp = cotan_laplacian(m);
    Eigen::MatrixXd l = dense(lp.stiffness);
    CHECK((l - l.transpose()).norm() <= 1e-12 * l.norm());
    CHECK((l * Eigen::VectorXd::Ones(l.rows())).norm() <= 1e-10 * l.norm());
    CHECK(std::abs(lp.mass.sum() - surface_area(m)) <= 1e-12 * surface_area(m));
    CHECK((lp.mass.array() > 0).all());
  }
}

TEST_CASE("cotan clamp warns on degenerate triangles") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0.5, 1e-9, 0}, {0.5, 1, 0}};
  m.faces = {{0, 1, 2}, {0, 2, 3}, {2, 1, 3}};
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  auto lp = cotan_laplacian(m);
  set_warning_sink(nullptr);
  REQUIRE_FALSE(warnings.empty());
  CHECK(warnings[0].find("DegenerateTriangle") != std::string::npos);
  Eigen::MatrixXd l = dense(lp.stiffness);
  l.diagonal().setZero();
  CHECK(l.cwiseAbs().maxCoeff() <= 1e6);
}

TEST_CASE("dirichlet_reduce") {
  TriMesh g = grid_mesh(7);
  auto lp = cotan_laplacian(g);
  auto same = dirichlet_reduce(lp, std::vector<bool>(49, false));
  CHECK(dense(same.stiffness) == dense(lp.stiffness));
  CHECK(same.mass == lp.mass);
  auto red = dirichlet_reduce(lp, detect_boundary(g));
  CHECK(red.size() == 25);
  auto one = dirichlet_reduce(cotan_laplacian(grid_mesh(3)), detect_boundary(grid_mesh(3)));
  REQUIRE(one.size() == 1);
  CHECK(one.stiffness.coeff(0, 0) > 0.0);
  CHECK(one.kept_vertices == std::vector<Index>{4});
  TriMesh tri;
  tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  tri.faces = {{0, 1, 2}};
  CHECK(code_of([&] { dirichlet_reduce(cotan_laplacian(tri), detect_boundary(tri)); }) == ErrorCode::AllBoundary);
}

TEST_CASE("unit square Dirichlet spectrum matches the analytic values") {
  auto s = spectrum(grid_mesh(41), 5);
  auto ref = oracle::square_dirichlet(5);
  for (int i = 0; i < 5; ++i) CHECK(rel(s.values[i], ref[i]) < 0.02);
}

TEST_CASE("dense and Lanczos paths agree") {
  EigOptions lanczos;
  lanczos.dense_limit = 0;
  auto g = grid_mesh(25);
  auto a = spectrum(g, 20);
  auto b = spectrum(g, 20, BoundaryCondition::Dirichlet, lanczos);
  for (int i = 0; i < 20; ++i) CHECK(rel(b.values[i], a.values[i]) < 1e-9);

  auto fam = synth_family(4, 1, 2, 642);
  TriMesh body = normalize_area(fam.embedding(0, 1), 1.0);
  auto c = spectrum(body, 20, BoundaryCondition::Closed);
  auto d = spectrum(body, 20, BoundaryCondition::Closed, lanczos);
  for (int i = 0; i < 20; ++i) CHECK(rel(d.values[i], c.values[i]) < 1e-8);
}

TEST_CASE("disjoint union spectrum is the sorted merge") {
  TriMesh a = grid_mesh(15);
  TriMesh b = transformed(disk_mesh(7, 0.6), Eigen::Matrix3d::Identity(), Vec3(3, 0, 0));
  auto sa = spectrum(a, 20), sb = spectrum(b, 20), su = spectrum(disjoint_union(a, b), 20);
  std::vector<double> merged = sa.values;
  merged.insert(merged.end(), sb.values.begin(), sb.values.end());
  std::sort(merged.begin(), merged.end());
  for (int i = 0; i < 20; ++i) CHECK(rel(su.values[i], merged[i]) < 1e-6);
}

TEST_CASE("scale law and rigid invariance") {
  auto fam = synth_family(8, 1, 2, 642);
  auto patch = submesh(fam.embedding(0, 1), geodesic_patch(fam, 10, 1.2)).mesh;
  auto base = spectrum(patch, 20);
  for (double s : {0.5, 2.0, 10.0}) {
    auto sc = spectrum(scaled(patch, s), 20);
    for (int i = 0; i < 20; ++i) CHECK(rel(sc.values[i], base.values[i] / (s * s)) < 1e-9);
  }
  Eigen::Matrix3d rot = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  auto moved = spectrum(transformed(patch, rot, Vec3(4, -2, 9)), 20);
  for (int i = 0; i < 20; ++i) CHECK(rel(moved.values[i], base.values[i]) < 1e-9);
  CHECK(spectrum(patch, 20) == base);
}

TEST_CASE("closed spectra drop the zero mode; Dirichlet on closed shapes is rejected") {
  TriMesh sphere = icosphere(3);
  auto s = spectrum(sphere, 20, BoundaryCondition::Closed);
  CHECK(s.values[0] > 0.0);
  // unit sphere: l(l+1) with multiplicity 2l+1
  CHECK(rel(s.values[0], 2.0) < 0.01);
  CHECK(rel(s.values[3], 6.0) < 0.02);
  CHECK(code_of([&] { spectrum(sphere, 20); }) == ErrorCode::NoBoundary);
  CHECK(code_of([&] { spectrum(grid_mesh(4), 20); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("eigenvalues are non-negative and sorted") {
  auto fam = synth_family(12, 1, 1, 642);
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    auto mask = geodesic_patch(fam, static_cast<Index>(rng.below(642)), rng.uniform(0.6, 2.0));
    auto s = spectrum(submesh(fam.templ, mask).mesh, 20);
    CHECK(s.values[0] > 0.0);
    for (int i = 1; i < 20; ++i) CHECK(s.values[i] >= s.values[i - 1]);
  }
}

TEST_CASE("Dirichlet domain monotonicity on nested patches") {
  auto fam = synth_family(21, 2, 2, 642);
  Rng rng(5);
  for (int t = 0; t < 8; ++t) {
    Index seed = static_cast<Index>(rng.below(642));
    double r = rng.uniform(0.7, 1.6);
    auto small = geodesic_patch(fam, seed, r), large = geodesic_patch(fam, seed, r + rng.uniform(0.1, 0.8));
    TriMesh m = fam.embedding(static_cast<Index>(rng.below(2)), static_cast<Index>(rng.below(2)));
    auto ss = spectrum(submesh(m, small).mesh, 20), sl = spectrum(submesh(m, large).mesh, 20);
    for (int i = 0; i < 20; ++i) CHECK(sl.values[i] <= ss.values[i] * (1 + 1e-6));
  }
}

TEST_CASE("Weyl slope on a unit-area flat patch") {
  // lambda_i ~ 4 pi i / A + c sqrt(i): the sqrt term absorbs the boundary correction
  auto s = spectrum(grid_mesh(61), 50);
  Eigen::MatrixXd a(50, 2);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) {
    a(i, 0) = i + 1;
    a(i, 1) = std::sqrt(i + 1.0);
    y[i] = s.values[i];
  }
  Eigen::Vector2d c = a.colPivHouseholderQr().solve(y);
  MESSAGE("Weyl slope / 4pi = " << c[0] / (4 * kPi));
  CHECK(rel(c[0], 4 * kPi) < 0.10);
}

TEST_CASE("pc_laplacian") {
  auto pc = sample_pointcloud(icosphere(3), 800, 2);
  auto base = spectrum(pc, 10, BoundaryCondition::Closed);
  PointCloud big = pc;
  for (auto& p : big.points) p *= 3.0;
  auto sb = spectrum(big, 10, BoundaryCondition::Closed);
  for (int i = 0; i < 10; ++i) CHECK(rel(sb.values[i], base.values[i] / 9.0) < 1e-9);

  PointCloud twice = pc;
  twice.points.insert(twice.points.end(), pc.points.begin(), pc.points.end());
  twice.boundary_flags.insert(twice.boundary_flags.end(), pc.boundary_flags.begin(), pc.boundary_flags.end());
  auto st = spectrum(twice, 10, BoundaryCondition::Closed);
  for (int i = 0; i < 10; ++i) CHECK(rel(st.values[i], base.values[i]) < 1e-9);

  // unit sphere, first nonzero eigenvalue 2
  CHECK(rel(base.values[0], 2.0) < 0.15);

  auto lp = pc_laplacian(pc);
  Eigen::MatrixXd l = dense(lp.stiffness);
  CHECK((l - l.transpose()).norm() <= 1e-12 * l.norm());
  CHECK((l * Eigen::VectorXd::Ones(l.rows())).norm() <= 1e-10 * l.norm());
  CHECK(code_of([&] { pc_laplacian(pc, 3); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("pc_laplacian on the unit disk approximates j01^2") {
  auto pc = sample_pointcloud(disk_mesh(30), 2000, 11);
  auto s = spectrum(pc, 3);
  const double ref = oracle::j01_squared();
  MESSAGE("disk lambda1 = " << s.values[0] << " reference " << ref);
  CHECK(rel(s.values[0], ref) < 0.15);
  CHECK(rel(ref, 5.7832) < 1e-4);
}

TEST_CASE("offset encoding") {
  CHECK(offset_encode(Spectrum{{1, 3, 6}}).offsets == std::vector<double>{1, 2, 3});
  CHECK(offset_encode(Spectrum{{2.5, 2.5, 2.5}}).offsets == std::vector<double>{2.5, 0, 0});
  CHECK(code_of([] { offset_decode(OffsetSeq{{1, -0.1, 2}}); }) == ErrorCode::NegativeOffset);

  // No double d makes prev + d land on target here: prev sits half an ulp off
  // target's grid and every candidate sum ties away to an even neighbour.
  {
    const double prev = 23.739175316612126, target = 89.369201409054469;
    double d = target - prev;
    for (int i = 0; i < 8; ++i) d = std::nextafter(d, 0.0);
    for (int i = 0; i < 16; ++i, d = std::nextafter(d, 1e9)) CHECK(prev + d != target);
  }

  Rng rng(99);
  int approx_only = 0, inexact = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(20);
    for (auto& x : v) x = rng.uniform(0.0, 500.0);
    std::sort(v.begin(), v.end());
    Spectrum s{v};
    auto o = offset_encode(s);
    auto d = offset_decode(o).values;
    for (int i = 0; i < 20; ++i) CHECK(std::abs(d[i] - v[i]) <= std::numeric_limits<double>::epsilon() * v[i]);
    inexact += !(d == v);
    // re-encoding a decoded sequence is a fixed point
    CHECK(offset_encode(offset_decode(o)).offsets == offset_encode(Spectrum{d}).offsets);
    CHECK(offset_decode(offset_encode(Spectrum{d})).values == d);
    // arbitrary offsets: the cumulative sum rounds, so only near-equality holds
    OffsetSeq r;
    for (int i = 0; i < 20; ++i) r.offsets.push_back(rng.uniform(0.0, 30.0));
    auto back = offset_encode(offset_decode(r));
    double sum = 0.0;
    for (int i = 0; i < 20; ++i) {
      sum += r.offsets[i];
      CHECK(std::abs(back.offsets[i] - r.offsets[i]) <= 4 * std::numeric_limits<double>::epsilon() * sum);
    }
    approx_only += !(back == r);
  }
  MESSAGE(inexact << " of 1000 sorted vectors hit an unrepresentable step; " << approx_only
                  << " of 1000 arbitrary offset vectors do not roundtrip bit-exactly");
}

TEST_CASE("shape_dna and JSON") {
  Spectrum s{{1.0, 2.0, 2.0, 7.5}, BoundaryCondition::Closed};
  auto sig = shape_dna(s);
  CHECK(sig.values == s.values);
  CHECK(signature_distance(sig, sig) == 0.0);
  auto j = to_json(s);
  CHECK(j["k"] == 4);
  CHECK(j["bc"] == "closed");
  CHECK(spectrum_from_json(nlohmann::json::parse(j.dump())) == s);
  CHECK(code_of([] { spectrum_from_json(nlohmann::json::parse(R"({"k":2,"bc":"dirichlet","values":[1]})")); }) ==
        ErrorCode::LengthMismatch);
  CHECK(code_of([] { spectrum_from_json(nlohmann::json::parse(R"({"k":2,"bc":"dirichlet","values":[3,1]})")); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("poses are closer than identities in signature space") {
  auto fam = synth_family(31, 3, 3, 642);
  std::vector<Signature> sig;
  for (Index i = 0; i < 3; ++i)
    for (Index p = 0; p < 3; ++p) sig.push_back(shape_dna(spectrum(normalize_area(fam.embedding(i, p), 1.0), 20, BoundaryCondition::Closed)));
  double within = 0, across = 0;
  int nw = 0, na = 0;
  for (std::size_t a = 0; a < sig.size(); ++a)
    for (std::size_t b = a + 1; b < sig.size(); ++b) {
      double d = signature_distance(sig[a], sig[b]);
      (a / 3 == b / 3 ? (++nw, within) : (++na, across)) += d;
    }
  CHECK(within / nw < across / na);
}
