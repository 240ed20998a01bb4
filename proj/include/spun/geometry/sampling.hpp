#pragma once

#include <spun/geometry/mesh.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>

namespace spun {

// Brute-force k nearest neighbours (excluding the point itself), sorted by distance.
inline std::vector<std::vector<std::pair<Index, double>>> knn(const std::vector<Vec3>& pts, int k) {
  const auto n = pts.size();
  std::vector<std::vector<std::pair<Index, double>>> out(n);
  std::vector<std::pair<double, Index>> buf(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) buf[m++] = {(pts[i] - pts[j]).squaredNorm(), static_cast<Index>(j)};
    const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), m);
    std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(kk), buf.begin() + static_cast<std::ptrdiff_t>(m));
    out[i].reserve(kk);
    for (std::size_t t = 0; t < kk; ++t) out[i].emplace_back(buf[t].second, buf[t].first);
  }
  return out;
}

// A point is on the boundary when its neighbour directions, projected to the
// PCA tangent plane, leave an angular gap wider than `max_gap`. With random
// samples fewer than ~30 neighbours leave large gaps in the interior too.
inline std::vector<bool> pointcloud_boundary(const std::vector<Vec3>& pts, int k_nn = 32, double max_gap = kPi / 2) {
  auto nn = knn(pts, k_nn);
  std::vector<bool> flags(pts.size(), false);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (nn[i].size() < 3) {
      flags[i] = true;
      continue;
    }
    Vec3 mean = pts[i];
    for (auto [j, d] : nn[i]) mean += pts[j];
    mean /= static_cast<double>(nn[i].size() + 1);
    Eigen::Matrix3d cov = (pts[i] - mean) * (pts[i] - mean).transpose();
    for (auto [j, d] : nn[i]) cov += (pts[j] - mean) * (pts[j] - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    Vec3 t1 = es.eigenvectors().col(2), t2 = es.eigenvectors().col(1);
    std::vector<double> angles;
    for (auto [j, d] : nn[i]) {
      Vec3 v = pts[j] - pts[i];
      angles.push_back(std::atan2(v.dot(t2), v.dot(t1)));
    }
    std::sort(angles.begin(), angles.end());
    double gap = angles.front() + 2 * kPi - angles.back();
    for (std::size_t a = 1; a < angles.size(); ++a) gap = std::max(gap, angles[a] - angles[a - 1]);
    flags[i] = gap > max_gap;
  }
  return flags;
}

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab = b - a;
  double t = ab.squaredNorm() > 0 ? std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

// Area-weighted uniform samples. Samples within one mean spacing of a boundary
// edge are flagged as boundary.
inline PointCloud sample_pointcloud(const TriMesh& mesh, Index n, std::uint64_t seed) {
  if (n < 32) throw Error(ErrorCode::InvalidArgument, "need at least 32 samples");
  std::vector<double> cdf(mesh.faces.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    acc += face_area(mesh, mesh.faces[f]);
    cdf[f] = acc;
  }
  if (!(acc > 0.0)) throw Error(ErrorCode::DegenerateShape, "cannot sample a zero-area mesh");
  Rng rng(hash_combine(seed, 0x5a3b1e));
  PointCloud pc;
  pc.points.reserve(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) {
    double r = rng.uniform() * acc;
    auto f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
    f = std::min(f, cdf.size() - 1);
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& t = mesh.faces[f];
    pc.points.push_back(mesh.vertices[t[0]] + u * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                        v * (mesh.vertices[t[2]] - mesh.vertices[t[0]]));
  }
  const double spacing = std::sqrt(acc / static_cast<double>(n));
  std::vector<std::pair<Index, Index>> bedges;
  for (const auto& [key, count] : edge_face_counts(mesh))
    if (count == 1) bedges.emplace_back(static_cast<Index>(key >> 32), static_cast<Index>(key & 0xffffffffULL));
  std::sort(bedges.begin(), bedges.end());
  pc.boundary_flags.assign(pc.points.size(), false);
  for (std::size_t i = 0; i < pc.points.size(); ++i)
    for (auto [a, b] : bedges)
      if (point_segment_distance(pc.points[i], mesh.vertices[a], mesh.vertices[b]) < spacing) {
        pc.boundary_flags[i] = true;
        break;
      }
  return pc;
}

}  // namespace spun
