#pragma once

#include <spun/common.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spun {

using Face = std::array<Index, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  Index num_vertices() const { return static_cast<Index>(vertices.size()); }
  Index num_faces() const { return static_cast<Index>(faces.size()); }

  // Computed on demand rather than cached so a const mesh can be shared across threads.
  std::vector<bool> boundary_flags() const;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<bool> boundary_flags;

  Index size() const { return static_cast<Index>(points.size()); }
};

// Indicator of a vertex subset of a template.
class RegionMask {
 public:
  RegionMask() = default;
  explicit RegionMask(std::size_t n, bool value = false) : bits_(n, value ? 1 : 0) {}
  explicit RegionMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {}

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  RegionMask operator|(const RegionMask& o) const { return combine(o, [](auto a, auto b) { return a | b; }); }
  RegionMask operator&(const RegionMask& o) const { return combine(o, [](auto a, auto b) { return a & b; }); }
  RegionMask operator~() const {
    RegionMask r(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) r.bits_[i] = bits_[i] ? 0 : 1;
    return r;
  }
  bool contains(const RegionMask& o) const {
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (o.bits_[i] && !bits_[i]) return false;
    return true;
  }
  bool operator==(const RegionMask& o) const { return bits_ == o.bits_; }
  bool operator<(const RegionMask& o) const { return bits_ < o.bits_; }

  std::vector<Index> indices() const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(static_cast<Index>(i));
    return out;
  }

  // Permuted copy: result[i] = this[perm[i]].
  RegionMask permuted(const std::vector<Index>& perm) const {
    RegionMask r(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) r.bits_[i] = bits_[static_cast<std::size_t>(perm[i])];
    return r;
  }

  // Run-length encoding starting with a run of zeros (possibly empty).
  std::vector<std::uint32_t> rle() const {
    std::vector<std::uint32_t> runs;
    std::uint8_t cur = 0;
    std::uint32_t len = 0;
    for (auto b : bits_) {
      if (b == cur) {
        ++len;
      } else {
        runs.push_back(len);
        cur = b;
        len = 1;
      }
    }
    runs.push_back(len);
    return runs;
  }
  static RegionMask from_rle(const std::vector<std::uint32_t>& runs) {
    std::vector<std::uint8_t> bits;
    std::uint8_t cur = 0;
    for (auto r : runs) {
      bits.insert(bits.end(), r, cur);
      cur ^= 1;
    }
    return RegionMask(std::move(bits));
  }

 private:
  template <class Op>
  RegionMask combine(const RegionMask& o, Op op) const {
    if (o.size() != size()) throw Error(ErrorCode::LengthMismatch, "region masks of different size");
    RegionMask r(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) r.bits_[i] = static_cast<std::uint8_t>(op(bits_[i], o.bits_[i]));
    return r;
  }
  std::vector<std::uint8_t> bits_;
};

inline void validate(const TriMesh& mesh) {
  if (mesh.vertices.empty()) throw Error(ErrorCode::EmptyShape, "mesh has no vertices");
  const Index n = mesh.num_vertices();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    for (Index v : t)
      if (v < 0 || v >= n)
        throw Error(ErrorCode::ParseError, "face " + std::to_string(f) + " index " + std::to_string(v) + " out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw Error(ErrorCode::ParseError, "face " + std::to_string(f) + " repeats a vertex");
  }
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

inline double face_area(const TriMesh& m, const Face& f) {
  return triangle_area(m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
}

inline double surface_area(const TriMesh& mesh) {
  double a = 0.0;
  for (const auto& f : mesh.faces) a += face_area(mesh, f);
  return a;
}

// Area of the faces induced by a mask (faces with all three vertices inside).
inline double region_area(const TriMesh& mesh, const RegionMask& mask) {
  double a = 0.0;
  for (const auto& f : mesh.faces)
    if (mask[f[0]] && mask[f[1]] && mask[f[2]]) a += face_area(mesh, f);
  return a;
}

inline TriMesh scaled(const TriMesh& mesh, double s) {
  TriMesh out = mesh;
  for (auto& v : out.vertices) v *= s;
  return out;
}

inline TriMesh normalize_area(const TriMesh& mesh, double target_area) {
  if (!(target_area > 0.0)) throw Error(ErrorCode::InvalidArgument, "target area must be positive");
  const double a = surface_area(mesh);
  if (!(a > 0.0)) throw Error(ErrorCode::DegenerateShape, "mesh has zero surface area");
  if (a == target_area) return mesh;
  return scaled(mesh, std::sqrt(target_area / a));
}

namespace detail {
inline std::uint64_t edge_key(Index a, Index b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}
}  // namespace detail

// Number of incident faces per undirected edge.
inline std::unordered_map<std::uint64_t, int> edge_face_counts(const TriMesh& mesh) {
  std::unordered_map<std::uint64_t, int> counts;
  counts.reserve(mesh.faces.size() * 2);
  for (const auto& f : mesh.faces)
    for (int j = 0; j < 3; ++j) ++counts[detail::edge_key(f[j], f[(j + 1) % 3])];
  return counts;
}

inline std::vector<bool> detect_boundary(const TriMesh& mesh) {
  std::vector<bool> flags(mesh.vertices.size(), false);
  std::size_t nonmanifold = 0;
  for (const auto& [key, count] : edge_face_counts(mesh)) {
    if (count > 2) ++nonmanifold;
    if (count == 1) {
      flags[static_cast<std::size_t>(key >> 32)] = true;
      flags[static_cast<std::size_t>(key & 0xffffffffULL)] = true;
    }
  }
  if (nonmanifold > 0) warn("NonManifoldEdge: " + std::to_string(nonmanifold) + " edges with more than two faces");
  return flags;
}

inline std::vector<bool> TriMesh::boundary_flags() const { return detect_boundary(*this); }

inline bool has_boundary(const TriMesh& mesh) {
  for (const auto& [key, count] : edge_face_counts(mesh))
    if (count == 1) return true;
  return false;
}

// Sorted vertex adjacency with edge lengths.
struct EdgeGraph {
  std::vector<std::vector<std::pair<Index, double>>> adj;
};

inline EdgeGraph edge_graph(const TriMesh& mesh) {
  EdgeGraph g;
  g.adj.resize(mesh.vertices.size());
  for (const auto& f : mesh.faces)
    for (int j = 0; j < 3; ++j) {
      Index a = f[j], b = f[(j + 1) % 3];
      double len = (mesh.vertices[a] - mesh.vertices[b]).norm();
      g.adj[a].emplace_back(b, len);
      g.adj[b].emplace_back(a, len);
    }
  for (auto& nb : g.adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end(), [](auto& x, auto& y) { return x.first == y.first; }), nb.end());
  }
  return g;
}

// Single-source Dijkstra over mesh edges.
inline std::vector<double> graph_distances(const EdgeGraph& g, Index source) {
  std::vector<double> dist(g.adj.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, Index>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[source] = 0.0;
  pq.emplace(0.0, source);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (auto [v, w] : g.adj[u]) {
      if (d + w < dist[v]) {
        dist[v] = d + w;
        pq.emplace(dist[v], v);
      }
    }
  }
  return dist;
}

// Connectivity of the subgraph induced by a mask (over mesh edges).
inline bool is_edge_connected(const TriMesh& mesh, const RegionMask& mask) {
  auto idx = mask.indices();
  if (idx.empty()) return false;
  std::vector<std::vector<Index>> adj(mesh.vertices.size());
  for (const auto& f : mesh.faces)
    for (int j = 0; j < 3; ++j) {
      Index a = f[j], b = f[(j + 1) % 3];
      if (mask[a] && mask[b]) {
        adj[a].push_back(b);
        adj[b].push_back(a);
      }
    }
  std::vector<bool> seen(mesh.vertices.size(), false);
  std::vector<Index> stack{idx.front()};
  seen[idx.front()] = true;
  std::size_t reached = 0;
  while (!stack.empty()) {
    Index u = stack.back();
    stack.pop_back();
    ++reached;
    for (Index v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        stack.push_back(v);
      }
  }
  return reached == idx.size();
}

struct Submesh {
  TriMesh mesh;
  std::vector<Index> vertex_map;  // sub index -> source index
};

inline Submesh submesh(const TriMesh& mesh, const RegionMask& mask) {
  if (mask.size() != mesh.vertices.size()) throw Error(ErrorCode::LengthMismatch, "mask size differs from vertex count");
  if (mask.empty()) throw Error(ErrorCode::EmptySubmesh, "mask is empty");
  Submesh out;
  std::vector<Index> remap(mesh.vertices.size(), -1);
  for (const auto& f : mesh.faces) {
    if (!(mask[f[0]] && mask[f[1]] && mask[f[2]])) continue;
    Face nf;
    for (int j = 0; j < 3; ++j) {
      Index& r = remap[f[j]];
      if (r < 0) {
        r = static_cast<Index>(out.vertex_map.size());
        out.vertex_map.push_back(f[j]);
      }
      nf[j] = r;
    }
    out.mesh.faces.push_back(nf);
  }
  if (out.mesh.faces.empty()) throw Error(ErrorCode::EmptySubmesh, "no face has all three vertices in the mask");
  // Keep vertices in source order so the full mask maps to the identity.
  std::vector<Index> order = out.vertex_map;
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i) remap[order[i]] = static_cast<Index>(i);
  for (auto& f : out.mesh.faces)
    for (auto& v : f) v = remap[out.vertex_map[v]];
  out.vertex_map = std::move(order);
  out.mesh.vertices.reserve(out.vertex_map.size());
  for (Index v : out.vertex_map) out.mesh.vertices.push_back(mesh.vertices[v]);
  return out;
}

// Same connectivity, different positions.
inline TriMesh with_positions(const TriMesh& connectivity, const std::vector<Vec3>& positions) {
  TriMesh m;
  m.faces = connectivity.faces;
  m.vertices = positions;
  return m;
}

// Rigid motion helper used by tests and CLI checks.
inline TriMesh transformed(const TriMesh& mesh, const Eigen::Matrix3d& rotation, const Vec3& translation) {
  TriMesh out = mesh;
  for (auto& v : out.vertices) v = rotation * v + translation;
  return out;
}

// Disjoint union of two meshes as one two-component mesh.
inline TriMesh disjoint_union(const TriMesh& a, const TriMesh& b) {
  TriMesh out = a;
  const Index off = a.num_vertices();
  out.vertices.insert(out.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto f : b.faces) {
    for (auto& v : f) v += off;
    out.faces.push_back(f);
  }
  return out;
}

// n x n vertex grid over [0, size]^2 in the z = 0 plane, each cell split along the same diagonal.
inline TriMesh grid_mesh(int n, double size = 1.0) {
  TriMesh m;
  const double h = size / (n - 1);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) m.vertices.emplace_back(i * h, j * h, 0.0);
  auto id = [n](int i, int j) { return static_cast<Index>(j * n + i); };
  for (int j = 0; j + 1 < n; ++j)
    for (int i = 0; i + 1 < n; ++i) {
      m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return m;
}

// Triangulated unit disk from concentric rings.
inline TriMesh disk_mesh(int rings, double radius = 1.0) {
  TriMesh m;
  m.vertices.emplace_back(0.0, 0.0, 0.0);
  std::vector<Index> prev{0};
  for (int r = 1; r <= rings; ++r) {
    const int count = 6 * r;
    std::vector<Index> ring;
    for (int s = 0; s < count; ++s) {
      double t = 2.0 * kPi * s / count;
      ring.push_back(m.num_vertices());
      m.vertices.emplace_back(radius * r / rings * std::cos(t), radius * r / rings * std::sin(t), 0.0);
    }
    // stitch ring to prev by walking both in angle order
    const std::size_t np = prev.size(), nc = ring.size();
    std::size_t i = np == 1 ? 1 : 0, j = 0;
    while (i < np || j < nc) {
      double ap = 2.0 * kPi * (i + 1) / np;
      double ac = 2.0 * kPi * (j + 1) / nc;
      if (i < np && (j >= nc || ap < ac)) {
        m.faces.push_back({prev[i % np], ring[j % nc], prev[(i + 1) % np]});
        ++i;
      } else {
        m.faces.push_back({prev[i % np], ring[j % nc], ring[(j + 1) % nc]});
        ++j;
      }
    }
    prev = std::move(ring);
  }
  return m;
}

}  // namespace spun
