#pragma once

#include <spun/geometry/mesh.hpp>

#include <Eigen/Dense>

#include <queue>
#include <set>

namespace spun {

struct DecimateOptions {
  double boundary_weight = 100.0;
  double min_normal_dot = 0.2;  // reject collapses that rotate a face normal further than this
};

namespace detail {

using Quadric = Eigen::Matrix4d;

inline Quadric plane_quadric(const Vec3& n, const Vec3& p, double w) {
  Eigen::Vector4d q(n.x(), n.y(), n.z(), -n.dot(p));
  return w * q * q.transpose();
}

class CollapseMesh {
 public:
  CollapseMesh(const TriMesh& m, const DecimateOptions& opt) : pos_(m.vertices), faces_(m.faces), opt_(opt) {
    const auto nv = pos_.size();
    alive_v_.assign(nv, true);
    alive_f_.assign(faces_.size(), true);
    vf_.resize(nv);
    version_.assign(nv, 0);
    quadric_.assign(nv, Quadric::Zero());
    for (std::size_t f = 0; f < faces_.size(); ++f)
      for (Index v : faces_[f]) vf_[v].push_back(static_cast<Index>(f));
    boundary_ = detect_boundary(m);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& t = faces_[f];
      Vec3 n = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]);
      double a = 0.5 * n.norm();
      if (a <= 0) continue;
      n.normalize();
      Quadric q = plane_quadric(n, pos_[t[0]], a);
      for (Index v : t) quadric_[v] += q;
    }
    for (const auto& [key, count] : edge_face_counts(m)) {
      if (count != 1) continue;
      Index a = static_cast<Index>(key >> 32), b = static_cast<Index>(key & 0xffffffffULL);
      Index f = shared_faces(a, b).front();
      const auto& t = faces_[f];
      Vec3 fn = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]).normalized();
      Vec3 e = pos_[b] - pos_[a];
      Vec3 cn = e.cross(fn);
      if (cn.norm() == 0) continue;
      Quadric q = plane_quadric(cn.normalized(), pos_[a], opt_.boundary_weight * e.squaredNorm());
      quadric_[a] += q;
      quadric_[b] += q;
    }
    alive_count_ = static_cast<Index>(nv);
  }

  Index alive() const { return alive_count_; }

  std::vector<Index> shared_faces(Index a, Index b) const {
    std::vector<Index> out;
    for (Index f : vf_[a])
      if (alive_f_[f] && contains(faces_[f], b)) out.push_back(f);
    return out;
  }

  std::set<Index> neighbors(Index a) const {
    std::set<Index> out;
    for (Index f : vf_[a])
      if (alive_f_[f])
        for (Index w : faces_[f])
          if (w != a) out.insert(w);
    return out;
  }

  struct Candidate {
    double cost;
    std::uint64_t key;
    Index keep, drop;
    Vec3 target;
    std::uint32_t ver_a, ver_b;
  };

  // Best collapse for edge (a, b); the surviving vertex is `keep`.
  Candidate evaluate(Index a, Index b) const {
    Quadric q = quadric_[a] + quadric_[b];
    Candidate c{0.0, edge_key(a, b), a, b, pos_[a], version_[a], version_[b]};
    auto cost = [&q](const Vec3& p) {
      Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
      return std::max(0.0, h.dot(q * h));
    };
    if (boundary_[a] != boundary_[b]) {
      // boundary vertices stay put
      Index keep = boundary_[a] ? a : b;
      c.keep = keep;
      c.drop = keep == a ? b : a;
      c.target = pos_[keep];
      c.cost = cost(c.target);
      return c;
    }
    std::vector<Vec3> options = {pos_[a], pos_[b], 0.5 * (pos_[a] + pos_[b])};
    Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
    Eigen::Vector3d rhs = -q.topRightCorner<3, 1>();
    Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
    if (lu.rank() == 3 && std::abs(A.determinant()) > 1e-12 * std::pow(A.norm(), 3)) {
      Vec3 opt = lu.solve(rhs);
      // keep the optimum only when it stays near the edge
      double len = (pos_[a] - pos_[b]).norm();
      if ((opt - 0.5 * (pos_[a] + pos_[b])).norm() < 2.0 * len) options.push_back(opt);
    }
    c.cost = std::numeric_limits<double>::infinity();
    for (const auto& p : options) {
      double cp = cost(p);
      if (cp < c.cost) {
        c.cost = cp;
        c.target = p;
      }
    }
    return c;
  }

  bool valid(const Candidate& c) const {
    const Index keep = c.keep, drop = c.drop;
    if (!alive_v_[keep] || !alive_v_[drop]) return false;
    // candidates are always evaluated with a < b
    if (version_[std::min(keep, drop)] != c.ver_a || version_[std::max(keep, drop)] != c.ver_b) return false;
    auto shared = shared_faces(keep, drop);
    if (shared.empty()) return false;
    const bool boundary_edge = shared.size() == 1;
    if (boundary_[keep] && boundary_[drop] && !boundary_edge) return false;
    // link condition
    auto na = neighbors(keep), nb = neighbors(drop);
    std::size_t common = 0;
    for (Index w : na)
      if (nb.count(w)) ++common;
    if (common != shared.size()) return false;
    if (alive_count_ <= 4) return false;
    // normal flips / degeneracy on faces that survive the collapse
    for (Index v : {keep, drop})
      for (Index f : vf_[v]) {
        if (!alive_f_[f]) continue;
        const auto& t = faces_[f];
        if (contains(t, keep) && contains(t, drop)) continue;
        Vec3 p[3], q[3];
        for (int j = 0; j < 3; ++j) {
          p[j] = pos_[t[j]];
          q[j] = (t[j] == keep || t[j] == drop) ? c.target : pos_[t[j]];
        }
        Vec3 n0 = (p[1] - p[0]).cross(p[2] - p[0]);
        Vec3 n1 = (q[1] - q[0]).cross(q[2] - q[0]);
        if (n1.norm() <= 1e-12 * std::max(1.0, n0.norm())) return false;
        if (n0.norm() > 0 && n0.normalized().dot(n1.normalized()) < opt_.min_normal_dot) return false;
      }
    return true;
  }

  std::vector<Index> collapse(const Candidate& c) {
    const Index keep = c.keep, drop = c.drop;
    for (Index f : vf_[drop]) {
      if (!alive_f_[f]) continue;
      auto& t = faces_[f];
      if (contains(t, keep)) {
        alive_f_[f] = false;
        continue;
      }
      for (auto& v : t)
        if (v == drop) v = keep;
      vf_[keep].push_back(f);
    }
    alive_v_[drop] = false;
    --alive_count_;
    pos_[keep] = c.target;
    quadric_[keep] += quadric_[drop];
    boundary_[keep] = boundary_[keep] || boundary_[drop];
    ++version_[keep];
    ++version_[drop];
    auto nb = neighbors(keep);
    return {nb.begin(), nb.end()};
  }

  TriMesh compact() const {
    TriMesh out;
    std::vector<Index> remap(pos_.size(), -1);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!alive_f_[f]) continue;
      Face nf;
      for (int j = 0; j < 3; ++j) {
        Index v = faces_[f][j];
        if (remap[v] < 0) remap[v] = -2;  // referenced
        nf[j] = v;
      }
      out.faces.push_back(nf);
    }
    for (std::size_t v = 0; v < pos_.size(); ++v)
      if (remap[v] == -2) {
        remap[v] = out.num_vertices();
        out.vertices.push_back(pos_[v]);
      }
    for (auto& f : out.faces)
      for (auto& v : f) v = remap[v];
    return out;
  }

  bool is_alive(Index v) const { return alive_v_[v]; }

 private:
  static bool contains(const Face& t, Index v) { return t[0] == v || t[1] == v || t[2] == v; }

  std::vector<Vec3> pos_;
  std::vector<Face> faces_;
  DecimateOptions opt_;
  std::vector<bool> alive_v_, alive_f_, boundary_;
  std::vector<std::vector<Index>> vf_;
  std::vector<std::uint32_t> version_;
  std::vector<Quadric> quadric_;
  Index alive_count_ = 0;
};

}  // namespace detail

// Quadric-error edge collapse down to at most (1 - drop_fraction) * V vertices.
// Boundary vertices are pinned against interior partners, boundary edges carry
// perpendicular constraint planes, and collapses that fold a face are rejected.
inline TriMesh decimate(const TriMesh& mesh, double drop_fraction, const DecimateOptions& opt = {}) {
  if (drop_fraction < 0.0 || drop_fraction >= 1.0) throw Error(ErrorCode::InvalidArgument, "drop_fraction must be in [0, 1)");
  const Index nv = mesh.num_vertices();
  const Index target = nv - static_cast<Index>(std::ceil(drop_fraction * static_cast<double>(nv) - 1e-3));
  if (target >= nv) return mesh;
  if (nv <= 10) throw Error(ErrorCode::InvalidArgument, "decimation needs more than 10 vertices");

  detail::CollapseMesh cm(mesh, opt);
  using Cand = detail::CollapseMesh::Candidate;
  auto worse = [](const Cand& x, const Cand& y) { return x.cost != y.cost ? x.cost > y.cost : x.key > y.key; };
  std::priority_queue<Cand, std::vector<Cand>, decltype(worse)> pq(worse);
  for (const auto& [key, count] : edge_face_counts(mesh)) {
    Index a = static_cast<Index>(key >> 32), b = static_cast<Index>(key & 0xffffffffULL);
    pq.push(cm.evaluate(a, b));
  }
  while (cm.alive() > target && !pq.empty()) {
    Cand c = pq.top();
    pq.pop();
    if (!cm.is_alive(c.keep) || !cm.is_alive(c.drop)) continue;
    if (!cm.valid(c)) continue;
    auto nb = cm.collapse(c);
    for (Index w : nb) pq.push(cm.evaluate(std::min(c.keep, w), std::max(c.keep, w)));
  }
  if (cm.alive() > target)
    warn("CannotReach: decimation stopped at " + std::to_string(cm.alive()) + " vertices (target " + std::to_string(target) + ")");
  return cm.compact();
}

}  // namespace spun
