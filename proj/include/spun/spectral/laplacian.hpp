#pragma once

#include <spun/geometry/mesh.hpp>
#include <spun/geometry/sampling.hpp>

#include <Eigen/Sparse>

#include <map>

namespace spun {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Stiffness L (symmetric, positive semi-definite) and lumped diagonal mass M of
// the generalized problem L v = lambda M v. Rows refer to `kept_vertices` of
// the source shape.
struct LaplacianPair {
  SparseMatrix stiffness;
  Eigen::VectorXd mass;
  std::vector<Index> kept_vertices;

  Index size() const { return static_cast<Index>(mass.size()); }
};

inline constexpr double kCotClamp = 1e6;

// cot of the angle at `o` in triangle (o, a, b)
inline double corner_cot(const Vec3& o, const Vec3& a, const Vec3& b, bool& clamped) {
  Vec3 u = a - o, v = b - o;
  double s = u.cross(v).norm();
  double c = u.dot(v);
  if (s <= std::abs(c) / kCotClamp) {
    clamped = true;
    return c >= 0 ? kCotClamp : -kCotClamp;
  }
  return c / s;
}

inline LaplacianPair cotan_laplacian(const TriMesh& mesh) {
  validate(mesh);
  const Index n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.faces.size() * 12);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);
  std::size_t clamped_faces = 0;
  for (const auto& f : mesh.faces) {
    bool clamped = false;
    for (int j = 0; j < 3; ++j) {
      Index o = f[j], a = f[(j + 1) % 3], b = f[(j + 2) % 3];
      double w = 0.5 * corner_cot(mesh.vertices[o], mesh.vertices[a], mesh.vertices[b], clamped);
      trip.emplace_back(a, b, -w);
      trip.emplace_back(b, a, -w);
      diag[a] += w;
      diag[b] += w;
    }
    if (clamped) ++clamped_faces;
    double area = face_area(mesh, f) / 3.0;
    for (Index v : f) mass[v] += area;
  }
  if (clamped_faces > 0)
    warn("DegenerateTriangle: clamped cotangents on " + std::to_string(clamped_faces) + " faces");
  for (Index i = 0; i < n; ++i) trip.emplace_back(i, i, diag[i]);
  LaplacianPair lp;
  lp.stiffness.resize(n, n);
  lp.stiffness.setFromTriplets(trip.begin(), trip.end());
  lp.stiffness.makeCompressed();
  lp.mass = mass;
  lp.kept_vertices.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) lp.kept_vertices[static_cast<std::size_t>(i)] = i;
  return lp;
}

inline std::size_t count_components(const SparseMatrix& w) {
  const Index n = w.rows();
  std::vector<Index> comp(static_cast<std::size_t>(n), -1);
  std::size_t count = 0;
  for (Index s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<Index> stack{s};
    comp[s] = static_cast<Index>(count);
    while (!stack.empty()) {
      Index u = stack.back();
      stack.pop_back();
      for (SparseMatrix::InnerIterator it(w, u); it; ++it)
        if (comp[it.row()] < 0) {
          comp[it.row()] = static_cast<Index>(count);
          stack.push_back(it.row());
        }
    }
    ++count;
  }
  return count;
}

enum class PcMethod { LocalDelaunay, GaussianKnn };

namespace detail {

inline std::pair<std::vector<Vec3>, std::vector<Index>> dedup_points(const PointCloud& pc) {
  std::vector<Vec3> pts;
  std::vector<Index> kept;
  std::map<std::tuple<double, double, double>, Index> seen;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const auto& p = pc.points[i];
    if (!p.allFinite()) throw Error(ErrorCode::NonFinite, "point cloud has non-finite coordinates");
    if (seen.emplace(std::make_tuple(p.x(), p.y(), p.z()), static_cast<Index>(i)).second) {
      pts.push_back(p);
      kept.push_back(static_cast<Index>(i));
    }
  }
  return {std::move(pts), std::move(kept)};
}

// Voronoi cell of the origin among 2D sites, by successive half-plane clipping.
// Returns the site label of each cell edge in order (-1 for the bounding box).
inline std::vector<int> voronoi_edge_labels(const std::vector<Eigen::Vector2d>& sites) {
  double r = 0.0;
  for (const auto& q : sites) r = std::max(r, q.norm());
  r *= 4.0;
  struct V {
    Eigen::Vector2d p;
    int label;  // label of the edge from this vertex to the next
  };
  std::vector<V> poly = {{{-r, -r}, -1}, {{r, -r}, -1}, {{r, r}, -1}, {{-r, r}, -1}};
  for (std::size_t j = 0; j < sites.size(); ++j) {
    const Eigen::Vector2d& a = sites[j];
    const double b = 0.5 * a.squaredNorm();
    if (b == 0.0) continue;
    std::vector<V> out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const V& p = poly[i];
      const V& q = poly[(i + 1) % poly.size()];
      double sp = a.dot(p.p) - b, sq = a.dot(q.p) - b;
      bool pin = sp <= 0.0, qin = sq <= 0.0;
      if (pin) out.push_back(p);
      if (pin != qin) {
        Eigen::Vector2d x = p.p + (sp / (sp - sq)) * (q.p - p.p);
        out.push_back({x, pin ? static_cast<int>(j) : p.label});
      }
    }
    poly = std::move(out);
    if (poly.empty()) break;
  }
  std::vector<int> labels;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i].p;
    const auto& q = poly[(i + 1) % poly.size()].p;
    if ((p - q).norm() <= 1e-12 * r) continue;
    labels.push_back(poly[i].label);
  }
  return labels;
}

struct WeightedTriangle {
  Face f;
  double weight;
};

// Triangles of each point's Delaunay one-ring in its PCA tangent plane. A
// triangle found from all three of its corners gets total weight 1.
inline std::vector<WeightedTriangle> local_delaunay_triangles(const std::vector<Vec3>& pts, int candidates) {
  auto nn = knn(pts, candidates);
  std::map<std::array<Index, 3>, int> count;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Vec3 mean = pts[i];
    for (auto [j, d] : nn[i]) mean += pts[j];
    mean /= static_cast<double>(nn[i].size() + 1);
    Eigen::Matrix3d cov = (pts[i] - mean) * (pts[i] - mean).transpose();
    for (auto [j, d] : nn[i]) cov += (pts[j] - mean) * (pts[j] - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Vec3 t1 = es.eigenvectors().col(2), t2 = es.eigenvectors().col(1);
    std::vector<Eigen::Vector2d> sites;
    for (auto [j, d] : nn[i]) {
      Vec3 v = pts[j] - pts[i];
      sites.emplace_back(v.dot(t1), v.dot(t2));
    }
    auto labels = voronoi_edge_labels(sites);
    for (std::size_t e = 0; e < labels.size(); ++e) {
      int a = labels[e], b = labels[(e + 1) % labels.size()];
      if (a < 0 || b < 0 || a == b) continue;
      std::array<Index, 3> key = {static_cast<Index>(i), nn[i][static_cast<std::size_t>(a)].first,
                                  nn[i][static_cast<std::size_t>(b)].first};
      std::sort(key.begin(), key.end());
      ++count[key];
    }
  }
  std::vector<WeightedTriangle> out;
  out.reserve(count.size());
  for (const auto& [key, c] : count) out.push_back({{key[0], key[1], key[2]}, c / 3.0});
  return out;
}

inline LaplacianPair gaussian_knn_laplacian(const std::vector<Vec3>& pts, int k_nn) {
  const auto n = static_cast<Index>(pts.size());
  auto nn = knn(pts, k_nn);
  double t = 0.0;
  for (const auto& row : nn)
    for (auto [j, d2] : row) t += d2;
  t /= static_cast<double>(n * k_nn);
  if (!(t > 0.0)) throw Error(ErrorCode::DegenerateShape, "all neighbours coincide");

  std::vector<Eigen::Triplet<double>> wt;
  for (Index i = 0; i < n; ++i)
    for (auto [j, d2] : nn[static_cast<std::size_t>(i)]) {
      double w = std::exp(-d2 / t);
      wt.emplace_back(i, j, w);
      wt.emplace_back(j, i, w);
    }
  SparseMatrix w(n, n);
  // symmetric kNN: an edge found from both sides keeps a single weight
  w.setFromTriplets(wt.begin(), wt.end(), [](double a, double) { return a; });
  if (auto nc = count_components(w); nc > 1)
    warn("DisconnectedGraph: kNN graph has " + std::to_string(nc) + " components; spectrum is their union");

  // calibrated by the empirical second moment m2 so that (4 / m2) (D - W) ~ -Laplacian
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
  double m2 = 0.0;
  for (Index i = 0; i < n; ++i)
    for (SparseMatrix::InnerIterator it(w, i); it; ++it) {
      degree[it.row()] += it.value();
      m2 += it.value() * (pts[it.row()] - pts[it.col()]).squaredNorm();
    }
  m2 /= static_cast<double>(n);

  // each point covers pi r_k^2 / k
  double area = 0.0;
  for (const auto& row : nn) area += kPi * row.back().second / static_cast<double>(k_nn);
  const double cell = area / static_cast<double>(n);

  const double scale = 4.0 / m2 * cell;
  std::vector<Eigen::Triplet<double>> lt;
  for (Index i = 0; i < n; ++i) {
    lt.emplace_back(i, i, scale * degree[i]);
    for (SparseMatrix::InnerIterator it(w, i); it; ++it) lt.emplace_back(it.row(), it.col(), -scale * it.value());
  }
  LaplacianPair lp;
  lp.stiffness.resize(n, n);
  lp.stiffness.setFromTriplets(lt.begin(), lt.end());
  lp.stiffness.makeCompressed();
  lp.mass = Eigen::VectorXd::Constant(n, cell);
  return lp;
}

inline LaplacianPair local_delaunay_laplacian(const std::vector<Vec3>& pts, int k_nn) {
  const auto n = static_cast<Index>(pts.size());
  auto tris = local_delaunay_triangles(pts, std::min<int>(2 * k_nn, static_cast<int>(n) - 1));
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), mass = Eigen::VectorXd::Zero(n);
  bool clamped = false;
  for (const auto& [f, weight] : tris) {
    for (int j = 0; j < 3; ++j) {
      Index o = f[j], a = f[(j + 1) % 3], b = f[(j + 2) % 3];
      double w = 0.5 * weight * corner_cot(pts[o], pts[a], pts[b], clamped);
      trip.emplace_back(a, b, -w);
      trip.emplace_back(b, a, -w);
      diag[a] += w;
      diag[b] += w;
    }
    double area = weight * triangle_area(pts[f[0]], pts[f[1]], pts[f[2]]) / 3.0;
    for (Index v : f) mass[v] += area;
  }
  std::size_t orphans = 0;
  for (Index i = 0; i < n; ++i) orphans += !(mass[i] > 0.0);
  if (orphans > 0) throw Error(ErrorCode::DegenerateShape, std::to_string(orphans) + " points belong to no local triangle");
  for (Index i = 0; i < n; ++i) trip.emplace_back(i, i, diag[i]);
  LaplacianPair lp;
  lp.stiffness.resize(n, n);
  lp.stiffness.setFromTriplets(trip.begin(), trip.end());
  lp.stiffness.makeCompressed();
  lp.mass = mass;
  if (auto nc = count_components(lp.stiffness); nc > 1)
    warn("DisconnectedGraph: local triangulation has " + std::to_string(nc) + " components; spectrum is their union");
  return lp;
}

}  // namespace detail

// Point-cloud Laplacian. The default builds each point's Delaunay one-ring in its
// PCA tangent plane (2 * k_nn candidates) and assembles cotangent weights from the
// resulting triangle soup. GaussianKnn is the heat-kernel graph alternative; it
// underestimates low eigenvalues on random samples. Exact duplicates are merged.
inline LaplacianPair pc_laplacian(const PointCloud& pc, int k_nn = 8, PcMethod method = PcMethod::LocalDelaunay) {
  if (k_nn < 4) throw Error(ErrorCode::InvalidArgument, "k_nn must be at least 4");
  auto [pts, kept] = detail::dedup_points(pc);
  if (static_cast<Index>(pts.size()) <= k_nn)
    throw Error(ErrorCode::InvalidArgument, "point cloud needs more than k_nn distinct points");
  LaplacianPair lp = method == PcMethod::LocalDelaunay ? detail::local_delaunay_laplacian(pts, k_nn)
                                                       : detail::gaussian_knn_laplacian(pts, k_nn);
  lp.kept_vertices = std::move(kept);
  return lp;
}

// Removes rows and columns of boundary vertices. `boundary` is indexed by
// source-shape vertex (the values in kept_vertices).
inline LaplacianPair dirichlet_reduce(const LaplacianPair& lp, const std::vector<bool>& boundary) {
  const Index n = lp.size();
  std::vector<Index> new_index(static_cast<std::size_t>(n), -1);
  LaplacianPair out;
  for (Index i = 0; i < n; ++i) {
    auto src = static_cast<std::size_t>(lp.kept_vertices[static_cast<std::size_t>(i)]);
    if (src >= boundary.size()) throw Error(ErrorCode::LengthMismatch, "boundary flags shorter than the source shape");
    if (!boundary[src]) {
      new_index[static_cast<std::size_t>(i)] = static_cast<Index>(out.kept_vertices.size());
      out.kept_vertices.push_back(lp.kept_vertices[static_cast<std::size_t>(i)]);
    }
  }
  const auto m = static_cast<Index>(out.kept_vertices.size());
  if (m == 0) throw Error(ErrorCode::AllBoundary, "every vertex is on the boundary");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(lp.stiffness.nonZeros()));
  for (Index c = 0; c < lp.stiffness.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(lp.stiffness, c); it; ++it) {
      Index r = new_index[static_cast<std::size_t>(it.row())], cc = new_index[static_cast<std::size_t>(it.col())];
      if (r >= 0 && cc >= 0) trip.emplace_back(r, cc, it.value());
    }
  out.stiffness.resize(m, m);
  out.stiffness.setFromTriplets(trip.begin(), trip.end());
  out.stiffness.makeCompressed();
  out.mass.resize(m);
  for (Index i = 0; i < n; ++i)
    if (new_index[static_cast<std::size_t>(i)] >= 0) out.mass[new_index[static_cast<std::size_t>(i)]] = lp.mass[i];
  return out;
}

}  // namespace spun
