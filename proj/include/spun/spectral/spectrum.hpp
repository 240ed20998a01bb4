#pragma once

#include <spun/geometry/io.hpp>
#include <spun/spectral/eigen.hpp>

#include <json.hpp>

#include <variant>

namespace spun {

enum class BoundaryCondition { Dirichlet, Closed };

inline const char* to_string(BoundaryCondition bc) { return bc == BoundaryCondition::Dirichlet ? "dirichlet" : "closed"; }

inline BoundaryCondition parse_bc(std::string_view s) {
  if (s == "dirichlet") return BoundaryCondition::Dirichlet;
  if (s == "closed") return BoundaryCondition::Closed;
  throw Error(ErrorCode::InvalidArgument, "unknown boundary condition '" + std::string(s) + "'");
}

inline constexpr Index kDefaultK = 20;

struct Spectrum {
  std::vector<double> values;
  BoundaryCondition bc = BoundaryCondition::Dirichlet;

  Index k() const { return static_cast<Index>(values.size()); }
  bool operator==(const Spectrum&) const = default;
};

struct OffsetSeq {
  std::vector<double> offsets;
  bool operator==(const OffsetSeq&) const = default;
};

enum class Provenance { Computed, Predicted };

struct Signature {
  std::vector<double> values;
  Provenance provenance = Provenance::Computed;
};

inline void check_spectrum(const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(ErrorCode::NonFinite, "spectrum has a non-finite value");
    if (v[i] < 0.0) throw Error(ErrorCode::InvalidArgument, "spectrum has a negative value");
    if (i > 0 && v[i] < v[i - 1]) throw Error(ErrorCode::InvalidArgument, "spectrum is not sorted");
  }
}

inline Spectrum spectrum(const LaplacianPair& lp, const std::vector<bool>& boundary, Index k, BoundaryCondition bc,
                         const EigOptions& opt = {}) {
  Spectrum s;
  s.bc = bc;
  if (bc == BoundaryCondition::Dirichlet) {
    if (std::none_of(boundary.begin(), boundary.end(), [](bool b) { return b; }))
      throw Error(ErrorCode::NoBoundary, "Dirichlet spectrum requested for a shape without boundary");
    s.values = smallest_eigs(dirichlet_reduce(lp, boundary), k, opt);
  } else {
    auto v = smallest_eigs(lp, k + 1, opt);
    s.values.assign(v.begin() + 1, v.end());
  }
  return s;
}

inline Spectrum spectrum(const TriMesh& mesh, Index k = kDefaultK, BoundaryCondition bc = BoundaryCondition::Dirichlet,
                         const EigOptions& opt = {}) {
  return spectrum(cotan_laplacian(mesh), detect_boundary(mesh), k, bc, opt);
}

inline Spectrum spectrum(const PointCloud& pc, Index k = kDefaultK, BoundaryCondition bc = BoundaryCondition::Dirichlet,
                         const EigOptions& opt = {}, int k_nn = 8) {
  if (pc.boundary_flags.size() != pc.points.size())
    throw Error(ErrorCode::LengthMismatch, "point cloud boundary flags do not match the point count");
  return spectrum(pc_laplacian(pc, k_nn), pc.boundary_flags, k, bc, opt);
}

inline Spectrum spectrum(const Shape& shape, Index k = kDefaultK, BoundaryCondition bc = BoundaryCondition::Dirichlet,
                         const EigOptions& opt = {}) {
  return std::visit([&](const auto& s) { return spectrum(s, k, bc, opt); }, shape);
}

// Offsets are chosen so the sequential cumulative sum in offset_decode lands on
// every value exactly: a plain difference can be off by one ulp after the add.
inline OffsetSeq offset_encode(const Spectrum& s) {
  OffsetSeq o;
  o.offsets.resize(s.values.size());
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (i == 0) {
      o.offsets[0] = s.values[0];
      continue;
    }
    const double prev = s.values[i - 1], target = s.values[i];
    double d = target - prev;
    while (prev + d < target) d = std::nextafter(d, std::numeric_limits<double>::infinity());
    while (prev + d > target && d > 0.0) d = std::nextafter(d, 0.0);
    o.offsets[i] = d;
  }
  return o;
}

inline Spectrum offset_decode(const OffsetSeq& o, BoundaryCondition bc = BoundaryCondition::Dirichlet) {
  Spectrum s;
  s.bc = bc;
  s.values.resize(o.offsets.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < o.offsets.size(); ++i) {
    if (!(o.offsets[i] >= 0.0)) throw Error(ErrorCode::NegativeOffset, "offset " + std::to_string(i) + " is negative or NaN");
    acc = i == 0 ? o.offsets[0] : acc + o.offsets[i];
    s.values[i] = acc;
  }
  return s;
}

inline Signature shape_dna(const Spectrum& s, Provenance p = Provenance::Computed) {
  check_spectrum(s.values);
  return {s.values, p};
}

inline double signature_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "signatures of different length");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

inline double signature_distance(const Signature& a, const Signature& b) { return signature_distance(a.values, b.values); }

inline nlohmann::json to_json(const Spectrum& s, std::optional<Provenance> p = std::nullopt) {
  nlohmann::json j;
  j["k"] = s.k();
  j["bc"] = to_string(s.bc);
  j["values"] = s.values;
  if (p) j["provenance"] = *p == Provenance::Predicted ? "predicted" : "computed";
  return j;
}

inline Spectrum spectrum_from_json(const nlohmann::json& j) {
  try {
    Spectrum s;
    s.bc = parse_bc(j.at("bc").get<std::string>());
    s.values = j.at("values").get<std::vector<double>>();
    if (j.at("k").get<Index>() != s.k()) throw Error(ErrorCode::LengthMismatch, "spectrum 'k' does not match the value count");
    check_spectrum(s.values);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad spectrum JSON: ") + e.what());
  }
}

}  // namespace spun
