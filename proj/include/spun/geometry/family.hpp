#pragma once

#include <spun/geometry/io.hpp>
#include <spun/geometry/mesh.hpp>

#include <Eigen/Geometry>

#include <filesystem>
#include <map>
#include <regex>
#include <tuple>

namespace spun {

// Identities x poses of one template connectivity, plus the template's bilateral symmetry.
struct ShapeFamily {
  TriMesh templ;
  Index identities = 0;
  Index poses = 0;
  std::vector<std::vector<Vec3>> embeddings;  // [identity * poses + pose]
  std::vector<Index> symmetry_map;
  RegionMask left_labels;
  std::uint64_t seed = 0;

  Index num_vertices() const { return templ.num_vertices(); }
  const std::vector<Vec3>& positions(Index identity, Index pose) const {
    return embeddings.at(static_cast<std::size_t>(identity * poses + pose));
  }
  TriMesh embedding(Index identity, Index pose) const { return with_positions(templ, positions(identity, pose)); }
  RegionMask mirrored(const RegionMask& m) const { return m.permuted(symmetry_map); }
};

inline bool is_involution(const std::vector<Index>& perm) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] < 0 || static_cast<std::size_t>(perm[i]) >= perm.size()) return false;
    if (perm[static_cast<std::size_t>(perm[i])] != static_cast<Index>(i)) return false;
  }
  return true;
}

inline std::uint64_t family_fingerprint(const ShapeFamily& f) {
  std::uint64_t h = fnv1a("spun-family");
  auto feed = [&h](const void* p, std::size_t n) { h = fnv1a(std::string_view(static_cast<const char*>(p), n), h); };
  for (const auto& v : f.templ.vertices) feed(v.data(), sizeof(double) * 3);
  for (const auto& t : f.templ.faces) feed(t.data(), sizeof(Index) * 3);
  for (const auto& e : f.embeddings)
    for (const auto& v : e) feed(v.data(), sizeof(double) * 3);
  feed(f.symmetry_map.data(), f.symmetry_map.size() * sizeof(Index));
  feed(f.left_labels.bits().data(), f.left_labels.size());
  return h;
}

// Loop-subdivided icosahedron projected to the unit sphere. The base icosahedron
// is mirror symmetric about x = 0 and midpoints are computed symmetrically, so
// mirrored vertices match bit for bit.
inline TriMesh icosphere(int level) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  std::vector<Vec3> base = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                            {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},  {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : base) m.vertices.push_back(v.normalized());
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::unordered_map<std::uint64_t, Index> mid;
    auto midpoint = [&](Index a, Index b) {
      auto key = detail::edge_key(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      // sum in a fixed order independent of (a, b) orientation
      Index lo = std::min(a, b), hi = std::max(a, b);
      Vec3 p = (m.vertices[lo] + m.vertices[hi]).normalized();
      Index id = m.num_vertices();
      m.vertices.push_back(p);
      mid.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
      Index a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    m.faces = std::move(next);
  }
  return m;
}

// Permutation pairing each vertex with the vertex at its x-mirrored position.
// Returns empty if some vertex has no exact mirror partner.
inline std::vector<Index> mirror_permutation(const std::vector<Vec3>& pts, double tol = 0.0) {
  std::map<std::tuple<double, double, double>, Index> lookup;
  auto q = [tol](double v) { return tol > 0 ? std::round(v / tol) * tol : v; };
  for (std::size_t i = 0; i < pts.size(); ++i) lookup[{q(pts[i].x()), q(pts[i].y()), q(pts[i].z())}] = static_cast<Index>(i);
  std::vector<Index> perm(pts.size(), -1);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double mx = pts[i].x() == 0.0 ? 0.0 : -pts[i].x();
    auto it = lookup.find({q(mx), q(pts[i].y()), q(pts[i].z())});
    if (it == lookup.end()) return {};
    perm[i] = it->second;
  }
  return perm;
}

struct SynthOptions {
  double max_pose_area_change = 0.02;
  double max_bend = 0.6;  // radians
};

namespace detail {

struct Limb {
  Vec3 dir;
  double height;
  double width;
  bool bendable;
};

inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct BodyParams {
  Vec3 axes{0.55, 1.0, 0.42};
  double tilt_y = 0.0;   // radial factor 1 + tilt_y * u_y
  double twist_yz = 0.0; // radial factor term u_y * u_z
  std::vector<Limb> limbs;
};

inline std::vector<Limb> default_limbs() {
  return {
      {Vec3(0.0, 1.0, 0.0).normalized(), 0.35, 0.40, true},     // head
      {Vec3(0.95, 0.30, 0.0).normalized(), 0.55, 0.38, true},   // right arm
      {Vec3(-0.95, 0.30, 0.0).normalized(), 0.55, 0.38, true},  // left arm
      {Vec3(0.40, -1.0, 0.0).normalized(), 0.55, 0.40, true},   // right leg
      {Vec3(-0.40, -1.0, 0.0).normalized(), 0.55, 0.40, true},  // left leg
  };
}

inline double body_radius(const Vec3& u, const BodyParams& b) {
  const Vec3 a = b.axes;
  double r = 1.0 / std::sqrt(std::pow(u.x() / a.x(), 2) + std::pow(u.y() / a.y(), 2) + std::pow(u.z() / a.z(), 2));
  double bump = 1.0;
  for (const auto& l : b.limbs) {
    double c = std::clamp(u.dot(l.dir), -1.0, 1.0);
    double theta = std::acos(c);
    bump += l.height * std::exp(-theta * theta / (2.0 * l.width * l.width));
  }
  return r * bump * (1.0 + b.tilt_y * u.y() + b.twist_yz * u.y() * u.z());
}

inline BodyParams identity_params(Rng& rng) {
  BodyParams b;
  b.axes = Vec3(0.55 * rng.uniform(0.75, 1.25), 1.0 * rng.uniform(0.8, 1.2), 0.42 * rng.uniform(0.75, 1.25));
  b.tilt_y = rng.uniform(-0.12, 0.12);
  b.twist_yz = rng.uniform(-0.15, 0.15);
  b.limbs = default_limbs();
  // paired limbs share parameters to keep identities bilaterally symmetric
  double head_h = rng.uniform(0.6, 1.4), arm_h = rng.uniform(0.6, 1.4), leg_h = rng.uniform(0.6, 1.4);
  double head_w = rng.uniform(0.8, 1.2), arm_w = rng.uniform(0.8, 1.2), leg_w = rng.uniform(0.8, 1.2);
  b.limbs[0].height *= head_h;
  b.limbs[0].width *= head_w;
  for (int i : {1, 2}) {
    b.limbs[i].height *= arm_h;
    b.limbs[i].width *= arm_w;
  }
  for (int i : {3, 4}) {
    b.limbs[i].height *= leg_h;
    b.limbs[i].width *= leg_w;
  }
  return b;
}

struct Bend {
  Vec3 axis;
  double angle;
};

// Rotates each limb about a pivot inside the body, blended by a smooth angular weight.
inline std::vector<Vec3> apply_pose(const std::vector<Vec3>& dirs, const std::vector<Vec3>& rest,
                                    const BodyParams& body, const std::vector<Bend>& bends) {
  std::vector<Vec3> out = rest;
  for (std::size_t b = 0; b < body.limbs.size(); ++b) {
    const auto& limb = body.limbs[b];
    if (bends[b].angle == 0.0) continue;
    const double base_r = 1.0 / std::sqrt(std::pow(limb.dir.x() / body.axes.x(), 2) +
                                          std::pow(limb.dir.y() / body.axes.y(), 2) +
                                          std::pow(limb.dir.z() / body.axes.z(), 2));
    const Vec3 pivot = 0.85 * base_r * limb.dir;
    const double c_full = std::cos(0.45 * limb.width / 0.4);
    const double c_zero = std::cos(1.1 * limb.width / 0.4);
    for (std::size_t v = 0; v < dirs.size(); ++v) {
      double w = smoothstep((dirs[v].dot(limb.dir) - c_zero) / (c_full - c_zero));
      if (w <= 0.0) continue;
      Eigen::AngleAxisd rot(w * bends[b].angle, bends[b].axis);
      out[v] = pivot + rot * (out[v] - pivot);
    }
  }
  return out;
}

}  // namespace detail

inline int icosphere_level_for(Index v_target) {
  int best = 1;
  for (int l = 1; l <= 6; ++l) {
    Index v = 10 * (Index{1} << (2 * l)) + 2;
    Index vb = 10 * (Index{1} << (2 * best)) + 2;
    if (std::llabs(v - v_target) < std::llabs(vb - v_target)) best = l;
  }
  return best;
}

// Deterministic stand-in for a registered deformable-shape collection: a mirror
// symmetric blob with five protrusions; identities change body proportions,
// poses bend the protrusions near-isometrically.
inline ShapeFamily synth_family(std::uint64_t seed, Index identities, Index poses, Index v_target,
                                const SynthOptions& opt = {}) {
  if (identities < 1 || poses < 1) throw Error(ErrorCode::InvalidArgument, "family needs at least one identity and pose");
  ShapeFamily fam;
  fam.seed = seed;
  fam.identities = identities;
  fam.poses = poses;

  TriMesh sphere = icosphere(icosphere_level_for(v_target));
  const std::vector<Vec3> dirs = sphere.vertices;

  auto embed = [&](const detail::BodyParams& b) {
    std::vector<Vec3> pos(dirs.size());
    for (std::size_t v = 0; v < dirs.size(); ++v) {
      // mirrored directions must produce mirrored positions exactly
      Vec3 u = dirs[v];
      bool flip = u.x() < 0.0;
      if (flip) u.x() = -u.x();
      double r = detail::body_radius(u, b);
      Vec3 p = r * u;
      if (flip) p.x() = -p.x();
      pos[v] = p;
    }
    return pos;
  };

  detail::BodyParams neutral;
  neutral.limbs = detail::default_limbs();
  fam.templ = with_positions(sphere, embed(neutral));
  fam.symmetry_map = mirror_permutation(fam.templ.vertices);
  if (fam.symmetry_map.empty()) throw Error(ErrorCode::DegenerateShape, "template lost mirror symmetry");
  fam.left_labels = RegionMask(fam.templ.vertices.size());
  for (std::size_t v = 0; v < fam.templ.vertices.size(); ++v) fam.left_labels.set(v, fam.templ.vertices[v].x() < 0.0);

  Rng rng(hash_combine(seed, 0x5eed));
  for (Index i = 0; i < identities; ++i) {
    detail::BodyParams body = detail::identity_params(rng);
    std::vector<Vec3> rest = embed(body);
    const double rest_area = surface_area(with_positions(sphere, rest));
    for (Index p = 0; p < poses; ++p) {
      if (p == 0) {
        fam.embeddings.push_back(rest);
        continue;
      }
      std::vector<detail::Bend> bends;
      for (const auto& limb : body.limbs) {
        Vec3 helper = std::abs(limb.dir.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
        Vec3 a1 = limb.dir.cross(helper).normalized();
        Vec3 a2 = limb.dir.cross(a1).normalized();
        double t = rng.uniform(0.0, 2.0 * kPi);
        bends.push_back({(std::cos(t) * a1 + std::sin(t) * a2).normalized(), rng.uniform(-opt.max_bend, opt.max_bend)});
      }
      std::vector<Vec3> posed;
      for (int attempt = 0; attempt < 20; ++attempt) {
        posed = detail::apply_pose(dirs, rest, body, bends);
        double change = std::abs(surface_area(with_positions(sphere, posed)) / rest_area - 1.0);
        if (change < opt.max_pose_area_change) break;
        for (auto& bd : bends) bd.angle *= 0.5;
      }
      fam.embeddings.push_back(std::move(posed));
    }
  }
  return fam;
}

inline RegionMask geodesic_patch(const EdgeGraph& graph, Index seed_vertex, double radius) {
  if (seed_vertex < 0 || static_cast<std::size_t>(seed_vertex) >= graph.adj.size())
    throw Error(ErrorCode::InvalidArgument, "seed vertex out of range");
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "radius must be positive");
  auto dist = graph_distances(graph, seed_vertex);
  RegionMask mask(dist.size());
  for (std::size_t v = 0; v < dist.size(); ++v) mask.set(v, dist[v] <= radius);
  return mask;
}

// Distances are measured on the template embedding.
inline RegionMask geodesic_patch(const ShapeFamily& family, Index seed_vertex, double radius) {
  return geodesic_patch(edge_graph(family.templ), seed_vertex, radius);
}

// Directory of `id<I>_pose<P>.off` files sharing one connectivity, plus optional
// `symmetry.txt` (0-based index per line), `left.txt` (0/1 per line) and
// `template.off` (defaults to id0_pose0).
inline ShapeFamily load_family_dir(const std::filesystem::path& dir) {
  std::regex name_re(R"(id(\d+)_pose(\d+)\.off)");
  std::map<std::pair<Index, Index>, std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    std::string fname = e.path().filename().string();
    if (std::regex_match(fname, m, name_re)) files[{std::stoll(m[1]), std::stoll(m[2])}] = e.path();
  }
  if (files.empty()) throw Error(ErrorCode::IoError, "no id<I>_pose<P>.off files in " + dir.string());
  Index ni = 0, np = 0;
  for (const auto& [key, path] : files) {
    ni = std::max(ni, key.first + 1);
    np = std::max(np, key.second + 1);
  }
  ShapeFamily fam;
  fam.identities = ni;
  fam.poses = np;
  for (Index i = 0; i < ni; ++i)
    for (Index p = 0; p < np; ++p) {
      auto it = files.find({i, p});
      if (it == files.end())
        throw Error(ErrorCode::IoError, "missing id" + std::to_string(i) + "_pose" + std::to_string(p) + ".off");
      TriMesh m = load_mesh_file(it->second);
      if (fam.embeddings.empty()) {
        fam.templ = m;
      } else if (m.faces != fam.templ.faces) {
        throw Error(ErrorCode::ParseError, it->second.string() + " does not share the template connectivity");
      }
      fam.embeddings.push_back(std::move(m.vertices));
    }
  if (std::filesystem::exists(dir / "template.off")) {
    TriMesh t = load_mesh_file(dir / "template.off");
    if (t.faces != fam.templ.faces) throw Error(ErrorCode::ParseError, "template.off does not share the connectivity");
    fam.templ = std::move(t);
  }
  const auto n = fam.templ.vertices.size();
  auto read_lines = [](const std::filesystem::path& p) {
    std::vector<Index> vals;
    std::istringstream in(read_file(p));
    Index v;
    while (in >> v) vals.push_back(v);
    return vals;
  };
  if (std::filesystem::exists(dir / "symmetry.txt")) {
    fam.symmetry_map = read_lines(dir / "symmetry.txt");
    if (fam.symmetry_map.size() != n || !is_involution(fam.symmetry_map))
      throw Error(ErrorCode::ParseError, "symmetry.txt is not an involutive permutation of the vertices");
  } else {
    fam.symmetry_map.resize(n);
    for (std::size_t v = 0; v < n; ++v) fam.symmetry_map[v] = static_cast<Index>(v);
  }
  fam.left_labels = RegionMask(n);
  if (std::filesystem::exists(dir / "left.txt")) {
    auto vals = read_lines(dir / "left.txt");
    if (vals.size() != n) throw Error(ErrorCode::ParseError, "left.txt has wrong length");
    for (std::size_t v = 0; v < n; ++v) fam.left_labels.set(v, vals[v] != 0);
  } else {
    for (std::size_t v = 0; v < n; ++v) fam.left_labels.set(v, fam.templ.vertices[v].x() < 0.0);
  }
  return fam;
}

inline void save_family_dir(const ShapeFamily& fam, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (Index i = 0; i < fam.identities; ++i)
    for (Index p = 0; p < fam.poses; ++p)
      write_file(dir / ("id" + std::to_string(i) + "_pose" + std::to_string(p) + ".off"), to_off(fam.embedding(i, p)));
  write_file(dir / "template.off", to_off(fam.templ));
  std::ostringstream sym, left;
  for (Index v : fam.symmetry_map) sym << v << '\n';
  for (std::size_t v = 0; v < fam.left_labels.size(); ++v) left << (fam.left_labels[v] ? 1 : 0) << '\n';
  write_file(dir / "symmetry.txt", sym.str());
  write_file(dir / "left.txt", left.str());
}

}  // namespace spun
