#pragma once

#include <spun/geometry/decimate.hpp>
#include <spun/geometry/family.hpp>
#include <spun/spectral/spectrum.hpp>

#include <optional>
#include <tuple>

namespace spun {

enum class Scenario { FullCover, PartialUnion };

inline const char* to_string(Scenario s) { return s == Scenario::FullCover ? "full_cover" : "partial_union"; }

inline Scenario parse_scenario(std::string_view s) {
  if (s == "full_cover") return Scenario::FullCover;
  if (s == "partial_union") return Scenario::PartialUnion;
  throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + std::string(s) + "'");
}

using MaskPair = std::pair<RegionMask, RegionMask>;

struct PairConfig {
  // Patch radii in units of the template's equivalent-sphere radius sqrt(area / 4pi).
  double radius_min = 0.8;
  double radius_max = 1.6;
  double min_overlap_frac = 0.05;
  Scenario scenario = Scenario::PartialUnion;
  int max_retries = 2000;
};

namespace detail {

// Precomputed template data shared by the pair and augmentation routines.
struct TemplateInfo {
  EdgeGraph graph;
  double scale = 1.0;
  Index nv = 0;

  explicit TemplateInfo(const TriMesh& t)
      : graph(edge_graph(t)), scale(std::sqrt(surface_area(t) / (4.0 * kPi))), nv(t.num_vertices()) {}
};

inline RegionMask ball(const std::vector<double>& dist, double radius) {
  RegionMask m(dist.size());
  for (std::size_t v = 0; v < dist.size(); ++v) m.set(v, dist[v] <= radius);
  return m;
}

// A part must be a connected proper subset that survives submesh extraction.
inline bool usable_part(const TriMesh& t, const RegionMask& m) {
  if (m.empty() || m.count() == m.size()) return false;
  if (!is_edge_connected(t, m)) return false;
  return region_area(t, m) > 0.0;
}

}  // namespace detail

// Catalog of overlapping mask pairs on the template. full_cover pairs are a
// geodesic ball A and the complement of a smaller ball inside A; partial_union
// pairs are two overlapping balls whose union leaves part of the surface out.
inline std::vector<MaskPair> make_pairs(const ShapeFamily& family, Index count, const PairConfig& cfg, std::uint64_t seed) {
  if (!(cfg.min_overlap_frac > 0.0 && cfg.min_overlap_frac < 1.0))
    throw Error(ErrorCode::InvalidArgument, "min_overlap_frac must lie in (0, 1)");
  if (!(cfg.radius_min > 0.0 && cfg.radius_max >= cfg.radius_min)) throw Error(ErrorCode::InvalidArgument, "bad radius range");
  const TriMesh& t = family.templ;
  const detail::TemplateInfo info(t);
  Rng rng(hash_combine(seed, 0x9a125));
  const RegionMask full(static_cast<std::size_t>(info.nv), true);

  std::vector<MaskPair> out;
  int failures = 0;
  while (static_cast<Index>(out.size()) < count) {
    if (failures > cfg.max_retries)
      throw Error(ErrorCode::SamplingExhausted, "no admissible pair after " + std::to_string(cfg.max_retries) + " retries");
    const Index s1 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(info.nv)));
    const auto d1 = graph_distances(info.graph, s1);
    RegionMask a, b;
    if (cfg.scenario == Scenario::PartialUnion) {
      a = detail::ball(d1, info.scale * rng.uniform(cfg.radius_min, cfg.radius_max));
      // second seed somewhere inside A so the balls overlap
      auto inside = a.indices();
      const Index s2 = inside[rng.below(inside.size())];
      b = detail::ball(graph_distances(info.graph, s2), info.scale * rng.uniform(cfg.radius_min, cfg.radius_max));
    } else {
      const double r1 = info.scale * rng.uniform(0.5 * (cfg.radius_min + cfg.radius_max), 1.25 * cfg.radius_max);
      a = detail::ball(d1, r1);
      // the hole is a ball well inside A, so A and the complement of the hole cover everything
      const double rh = rng.uniform(0.35, 0.7) * r1;
      std::vector<Index> centres;
      for (std::size_t v = 0; v < d1.size(); ++v)
        if (d1[v] <= r1 - rh) centres.push_back(static_cast<Index>(v));
      if (centres.empty()) {
        ++failures;
        continue;
      }
      const Index s2 = centres[rng.below(centres.size())];
      RegionMask hole = detail::ball(graph_distances(info.graph, s2), rh);
      b = ~hole;
    }
    bool ok = detail::usable_part(t, a) && detail::usable_part(t, b) && !a.contains(b) && !b.contains(a);
    if (ok) {
      const RegionMask u = a | b;
      const bool covers = u == full;
      ok = (cfg.scenario == Scenario::FullCover) == covers && is_edge_connected(t, u);
      const double overlap = region_area(t, a & b);
      ok = ok && overlap >= cfg.min_overlap_frac * std::min(region_area(t, a), region_area(t, b));
    }
    if (!ok) {
      ++failures;
      continue;
    }
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

struct CanonicalPair {
  RegionMask a, b, uni;
};

// Picks among {A, sym A} x {B, sym B} the combination with the smallest union
// area; near ties (0.5%) go to the union covering most left-side vertices, then
// to the lexicographically smallest union and pair. The choice depends only on
// the unordered set of candidates, so the result is idempotent and symmetric in
// argument order up to the part labels.
inline CanonicalPair canonicalize_union(const RegionMask& mask_a, const RegionMask& mask_b, const ShapeFamily& family) {
  const TriMesh& t = family.templ;
  struct Cand {
    CanonicalPair p;
    double area;
    std::size_t left;
  };
  std::vector<Cand> cands;
  const RegionMask sa = family.mirrored(mask_a), sb = family.mirrored(mask_b);
  for (const auto* x : {&mask_a, &sa})
    for (const auto* y : {&mask_b, &sb}) {
      RegionMask u = *x | *y;
      cands.push_back({{*x, *y, u}, region_area(t, u), (u & family.left_labels).count()});
    }
  double best_area = cands.front().area;
  for (const auto& c : cands) best_area = std::min(best_area, c.area);
  const double tol = 0.005 * best_area;
  const Cand* best = nullptr;
  for (const auto& c : cands) {
    if (c.area > best_area + tol) continue;
    if (!best) {
      best = &c;
      continue;
    }
    auto key = [](const Cand& z) { return std::tie(z.p.uni, z.p.a, z.p.b); };
    if (c.left > best->left || (c.left == best->left && key(c) < key(*best))) best = &c;
  }
  return best->p;
}

// One morphological step per ring: positive r adds every vertex adjacent to the
// mask, negative r removes the mask's boundary vertices. Erosion never empties
// or disconnects the mask; vertices whose removal would are kept.
inline RegionMask grow_rings(const RegionMask& mask, const ShapeFamily& family, int r) {
  const TriMesh& t = family.templ;
  const EdgeGraph g = edge_graph(t);
  RegionMask m = mask;
  for (int step = 0; step < std::abs(r); ++step) {
    RegionMask next = m;
    if (r > 0) {
      for (std::size_t v = 0; v < m.size(); ++v)
        if (m[v])
          for (auto [w, len] : g.adj[v]) next.set(static_cast<std::size_t>(w));
    } else {
      std::vector<Index> rim;
      for (std::size_t v = 0; v < m.size(); ++v)
        if (m[v])
          for (auto [w, len] : g.adj[v])
            if (!m[static_cast<std::size_t>(w)]) {
              rim.push_back(static_cast<Index>(v));
              break;
            }
      for (Index v : rim) next.set(static_cast<std::size_t>(v), false);
      if (next.empty() || !is_edge_connected(t, next)) {
        // fall back to removing rim vertices one at a time
        next = m;
        for (Index v : rim) {
          next.set(static_cast<std::size_t>(v), false);
          if (next.empty() || !is_edge_connected(t, next)) next.set(static_cast<std::size_t>(v), true);
        }
      }
    }
    m = std::move(next);
  }
  return m;
}

// Random +-2 ring perturbation of a part, clipped so the template area changes
// by at most max_change. A ring step that would overshoot is applied vertex by
// vertex in random order until the next vertex would cross the bound.
inline RegionMask augment_mask(const RegionMask& mask, const ShapeFamily& family, Rng& rng, double max_change = 0.10) {
  const TriMesh& t = family.templ;
  const int r = static_cast<int>(rng.integer(-2, 2));
  if (r == 0) return mask;
  const double area0 = region_area(t, mask);
  auto within = [&](const RegionMask& m) { return std::abs(region_area(t, m) - area0) <= max_change * area0; };
  RegionMask m = mask;
  for (int step = 0; step < std::abs(r); ++step) {
    RegionMask full_step = grow_rings(m, family, r > 0 ? 1 : -1);
    if (within(full_step)) {
      m = std::move(full_step);
      continue;
    }
    std::vector<Index> changed;
    for (std::size_t v = 0; v < m.size(); ++v)
      if (m[v] != full_step[v]) changed.push_back(static_cast<Index>(v));
    rng.shuffle(changed.begin(), changed.end());
    for (Index v : changed) {
      RegionMask trial = m;
      trial.set(static_cast<std::size_t>(v), r > 0);
      if (!within(trial)) break;
      if (trial.empty() || !is_edge_connected(t, trial)) continue;
      m = std::move(trial);
    }
    break;
  }
  return m;
}

struct SampleMeta {
  Index identity = 0;
  Index pose = 0;
  Index partiality_1 = 0;
  Index partiality_2 = 0;
  Scenario scenario = Scenario::PartialUnion;
};

struct PartialPairSample {
  Spectrum spec1, spec2, union_spec;
  RegionMask mask1, mask2, union_mask;
  SampleMeta meta;
};

// Dirichlet spectrum of the region of one embedding; `drop` > 0 decimates the
// extracted part first (remeshed inputs).
inline Spectrum region_spectrum(const TriMesh& shape, const RegionMask& mask, Index k, double drop = 0.0) {
  TriMesh part = submesh(shape, mask).mesh;
  if (drop > 0.0) part = decimate(part, drop);
  if (!has_boundary(part)) return spectrum(part, k, BoundaryCondition::Closed);
  return spectrum(part, k, BoundaryCondition::Dirichlet);
}

inline PartialPairSample realize_sample(const ShapeFamily& family, Index identity, Index pose, const MaskPair& pair, Index k) {
  const TriMesh shape = family.embedding(identity, pose);
  PartialPairSample s;
  s.mask1 = pair.first;
  s.mask2 = pair.second;
  s.union_mask = pair.first | pair.second;
  s.spec1 = region_spectrum(shape, s.mask1, k);
  s.spec2 = region_spectrum(shape, s.mask2, k);
  s.union_spec = region_spectrum(shape, s.union_mask, k);
  s.meta.identity = identity;
  s.meta.pose = pose;
  s.meta.scenario = s.union_spec.bc == BoundaryCondition::Closed ? Scenario::FullCover : Scenario::PartialUnion;
  return s;
}

}  // namespace spun
