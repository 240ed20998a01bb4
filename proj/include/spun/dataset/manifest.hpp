#pragma once

#include <spun/dataset/pairs.hpp>

#include <json.hpp>

#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace spun {

enum class Split { Train, TestA, TestB };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::TestA: return "testA";
    case Split::TestB: return "testB";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "testA") return Split::TestA;
  if (s == "testB") return Split::TestB;
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

inline constexpr std::array<Split, 3> kSplits{Split::Train, Split::TestA, Split::TestB};

struct SplitSettings {
  bool known_identity = true;
  bool known_partiality = true;
  bool remeshed = false;
  bool operator==(const SplitSettings&) const = default;
};

struct SampleRecord {
  PartialPairSample sample;
  Split split = Split::Train;
  // Precomputed spectra of area-perturbed parts; the union target is unchanged.
  std::vector<std::pair<Spectrum, Spectrum>> augmented;
};

struct DatasetManifest {
  std::uint64_t family_seed = 0;
  std::uint64_t family_hash = 0;
  Index k = kDefaultK;
  std::vector<SampleRecord> records;
  std::map<Split, SplitSettings> settings;

  std::vector<const SampleRecord*> split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }
};

struct BuildConfig {
  Index full_cover_pairs = 8;
  Index partial_union_pairs = 7;
  PairConfig pairs;
  Index k = kDefaultK;
  int augmentations = 2;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
};

// Every catalog pair is canonicalized once on the template and realized on every
// identity/pose, so each union region recurs across the family. Canonicalization
// may replace a covering pair by a mirrored variant with a smaller union, so the
// scenario label follows the realized union rather than the generator.
inline std::vector<SampleRecord> build_samples(const ShapeFamily& family, const BuildConfig& cfg) {
  std::vector<MaskPair> catalog;
  for (auto [sc, n] : {std::pair{Scenario::FullCover, cfg.full_cover_pairs}, std::pair{Scenario::PartialUnion, cfg.partial_union_pairs}}) {
    if (n <= 0) continue;
    PairConfig pc = cfg.pairs;
    pc.scenario = sc;
    for (auto& p : make_pairs(family, n, pc, hash_combine(cfg.seed, static_cast<std::uint64_t>(sc)))) {
      auto c = canonicalize_union(p.first, p.second, family);
      catalog.emplace_back(c.a, c.b);
    }
  }
  // partiality ids index distinct part masks of the catalog
  std::map<RegionMask, Index> part_ids;
  auto part_id = [&](const RegionMask& m) { return part_ids.try_emplace(m, static_cast<Index>(part_ids.size())).first->second; };
  std::vector<std::pair<Index, Index>> ids;
  for (const auto& p : catalog) ids.emplace_back(part_id(p.first), part_id(p.second));

  const std::size_t per_shape = catalog.size();
  const std::size_t total = static_cast<std::size_t>(family.identities * family.poses) * per_shape;
  std::vector<SampleRecord> out(total);
  parallel_for(total, cfg.jobs, [&](std::size_t n) {
    const Index shape = static_cast<Index>(n / per_shape);
    const std::size_t c = n % per_shape;
    const Index identity = shape / family.poses, pose = shape % family.poses;
    SampleRecord rec;
    rec.sample = realize_sample(family, identity, pose, catalog[c], cfg.k);
    rec.sample.meta.partiality_1 = ids[c].first;
    rec.sample.meta.partiality_2 = ids[c].second;
    Rng rng(hash_combine(cfg.seed, 0xa06 + n));
    const TriMesh shape_mesh = family.embedding(identity, pose);
    for (int a = 0; a < cfg.augmentations; ++a) {
      RegionMask m1 = augment_mask(catalog[c].first, family, rng) & rec.sample.union_mask;
      RegionMask m2 = augment_mask(catalog[c].second, family, rng) & rec.sample.union_mask;
      rec.augmented.emplace_back(region_spectrum(shape_mesh, m1, cfg.k), region_spectrum(shape_mesh, m2, cfg.k));
    }
    out[n] = std::move(rec);
  });
  return out;
}

struct SplitPolicy {
  double test_a = 0.10;
  double test_b = 0.05;
};

inline SplitSettings measured_settings(const std::vector<SampleRecord>& recs, Split split) {
  std::set<Index> identities;
  std::set<std::tuple<Index, Index>> parts;
  std::set<RegionMask> unions;
  for (const auto& r : recs)
    if (r.split == Split::Train) {
      identities.insert(r.sample.meta.identity);
      parts.insert({r.sample.meta.partiality_1, r.sample.meta.partiality_2});
      unions.insert(r.sample.union_mask);
    }
  SplitSettings s;
  bool any = false;
  for (const auto& r : recs) {
    if (r.split != split) continue;
    any = true;
    s.known_identity = s.known_identity && identities.count(r.sample.meta.identity) > 0;
    s.known_partiality = s.known_partiality && parts.count({r.sample.meta.partiality_1, r.sample.meta.partiality_2}) > 0 &&
                         unions.count(r.sample.union_mask) > 0;
  }
  if (!any) s.known_identity = s.known_partiality = false;
  return s;
}

// Test B takes whole union-region classes; Test A takes single samples whose
// union region stays represented in train. The two together hold out
// round((test_a + test_b) * N) samples whenever the classes allow it.
inline DatasetManifest split_dataset(std::vector<SampleRecord> samples, const SplitPolicy& policy, std::uint64_t seed) {
  if (policy.test_a < 0 || policy.test_b < 0 || policy.test_a + policy.test_b >= 1.0)
    throw Error(ErrorCode::InvalidArgument, "holdout fractions must be non-negative and sum below 1");
  const std::size_t n = samples.size();
  std::map<RegionMask, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) {
    samples[i].split = Split::Train;
    classes[samples[i].sample.union_mask].push_back(i);
  }
  Rng rng(hash_combine(seed, 0x5b117));
  std::vector<const std::vector<std::size_t>*> order;
  for (const auto& [m, members] : classes) order.push_back(&members);
  rng.shuffle(order.begin(), order.end());

  const auto want_total = static_cast<std::size_t>(std::llround((policy.test_a + policy.test_b) * static_cast<double>(n)));
  const auto want_b = static_cast<std::size_t>(std::llround(policy.test_b * static_cast<double>(n)));
  std::size_t got_b = 0;
  std::set<const std::vector<std::size_t>*> held_classes;
  if (want_b > 0) {
    for (const auto* cls : order) {
      if (held_classes.size() + 1 >= order.size()) break;  // keep at least one class in train
      if (got_b + cls->size() > want_b + cls->size() / 2) continue;
      for (auto i : *cls) samples[i].split = Split::TestB;
      got_b += cls->size();
      held_classes.insert(cls);
      if (got_b >= want_b) break;
    }
    if (got_b == 0) throw Error(ErrorCode::InfeasibleSplit, "union-region classes are too large for the Test B fraction");
  }
  // Test A: round-robin over the remaining classes so no class is drained.
  std::size_t want_a = want_total > got_b ? want_total - got_b : 0;
  std::vector<std::vector<std::size_t>> pools;
  for (const auto* cls : order) {
    if (held_classes.count(cls)) continue;
    std::vector<std::size_t> p = *cls;
    rng.shuffle(p.begin(), p.end());
    pools.push_back(std::move(p));
  }
  std::size_t got_a = 0;
  for (std::size_t round = 0; got_a < want_a; ++round) {
    bool progressed = false;
    for (auto& p : pools) {
      if (got_a >= want_a) break;
      if (p.size() <= round + 1) continue;  // the last member stays in train
      samples[p[round]].split = Split::TestA;
      ++got_a;
      progressed = true;
    }
    if (!progressed) throw Error(ErrorCode::InfeasibleSplit, "too few samples per union-region class for the Test A fraction");
  }

  DatasetManifest m;
  if (!samples.empty()) m.k = samples.front().sample.union_spec.k();
  m.records = std::move(samples);
  for (Split s : kSplits) m.settings[s] = measured_settings(m.records, s);
  return m;
}

// build_samples + split_dataset, stamped with the family fingerprint.
inline DatasetManifest build_manifest(const ShapeFamily& family, const BuildConfig& cfg, const SplitPolicy& policy, std::uint64_t split_seed) {
  DatasetManifest m = split_dataset(build_samples(family, cfg), policy, split_seed);
  m.family_seed = family.seed;
  m.family_hash = family_fingerprint(family);
  m.k = cfg.k;
  return m;
}

struct AuditReport {
  std::size_t test_b_leaks = 0;       // Test B samples whose union region appears in train
  std::size_t test_a_unknown = 0;     // Test A samples whose union region is absent from train
  std::size_t monotonicity_violations = 0;
  std::size_t checked = 0;

  bool ok() const { return test_b_leaks == 0 && test_a_unknown == 0 && monotonicity_violations == 0; }
};

// Split contract plus Dirichlet domain monotonicity of every partial-union sample.
inline AuditReport audit(const DatasetManifest& m, double eps = 1e-6) {
  AuditReport rep;
  std::set<RegionMask> train_unions;
  for (const auto& r : m.records)
    if (r.split == Split::Train) train_unions.insert(r.sample.union_mask);
  for (const auto& r : m.records) {
    ++rep.checked;
    const bool known = train_unions.count(r.sample.union_mask) > 0;
    if (r.split == Split::TestB && known) ++rep.test_b_leaks;
    if (r.split == Split::TestA && !known) ++rep.test_a_unknown;
    const auto& s = r.sample;
    if (s.union_spec.bc != BoundaryCondition::Dirichlet || s.spec1.bc != BoundaryCondition::Dirichlet ||
        s.spec2.bc != BoundaryCondition::Dirichlet)
      continue;
    for (Index i = 0; i < s.union_spec.k(); ++i) {
      const double lo = std::min(s.spec1.values[i], s.spec2.values[i]);
      if (s.union_spec.values[i] > lo + eps * lo) {
        ++rep.monotonicity_violations;
        break;
      }
    }
  }
  return rep;
}

// Same samples with the part spectra recomputed on decimated parts.
inline DatasetManifest remeshed(const DatasetManifest& m, const ShapeFamily& family, Split which, double drop, unsigned jobs = 1) {
  DatasetManifest out;
  out.family_seed = m.family_seed;
  out.family_hash = m.family_hash;
  out.k = m.k;
  for (const auto* r : m.split(which)) {
    SampleRecord c = *r;
    c.augmented.clear();
    out.records.push_back(std::move(c));
  }
  parallel_for(out.records.size(), jobs, [&](std::size_t i) {
    auto& s = out.records[i].sample;
    const TriMesh shape = family.embedding(s.meta.identity, s.meta.pose);
    s.spec1 = region_spectrum(shape, s.mask1, m.k, drop);
    s.spec2 = region_spectrum(shape, s.mask2, m.k, drop);
  });
  out.settings[which] = m.settings.count(which) ? m.settings.at(which) : SplitSettings{};
  out.settings[which].remeshed = true;
  return out;
}

inline constexpr const char* kManifestMagic = "SPUN-DS";
inline constexpr int kManifestVersion = 1;

namespace detail {

inline nlohmann::json mask_json(const RegionMask& m) { return m.rle(); }

inline RegionMask mask_from_json(const nlohmann::json& j, std::size_t expected) {
  auto m = RegionMask::from_rle(j.get<std::vector<std::uint32_t>>());
  if (m.size() != expected) throw Error(ErrorCode::LengthMismatch, "mask length " + std::to_string(m.size()) + " != " + std::to_string(expected));
  return m;
}

inline nlohmann::json record_json(const SampleRecord& r) {
  const auto& s = r.sample;
  nlohmann::json j;
  j["split"] = to_string(r.split);
  j["identity"] = s.meta.identity;
  j["pose"] = s.meta.pose;
  j["partiality"] = {s.meta.partiality_1, s.meta.partiality_2};
  j["scenario"] = to_string(s.meta.scenario);
  j["spec1"] = to_json(s.spec1);
  j["spec2"] = to_json(s.spec2);
  j["union_spec"] = to_json(s.union_spec);
  j["mask1"] = mask_json(s.mask1);
  j["mask2"] = mask_json(s.mask2);
  j["union_mask"] = mask_json(s.union_mask);
  j["augmented"] = nlohmann::json::array();
  for (const auto& [a, b] : r.augmented) j["augmented"].push_back({to_json(a), to_json(b)});
  return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j, std::size_t nv) {
  SampleRecord r;
  auto& s = r.sample;
  r.split = parse_split(j.at("split").get<std::string>());
  s.meta.identity = j.at("identity").get<Index>();
  s.meta.pose = j.at("pose").get<Index>();
  s.meta.partiality_1 = j.at("partiality").at(0).get<Index>();
  s.meta.partiality_2 = j.at("partiality").at(1).get<Index>();
  s.meta.scenario = parse_scenario(j.at("scenario").get<std::string>());
  s.spec1 = spectrum_from_json(j.at("spec1"));
  s.spec2 = spectrum_from_json(j.at("spec2"));
  s.union_spec = spectrum_from_json(j.at("union_spec"));
  s.mask1 = mask_from_json(j.at("mask1"), nv);
  s.mask2 = mask_from_json(j.at("mask2"), nv);
  s.union_mask = mask_from_json(j.at("union_mask"), nv);
  for (const auto& a : j.at("augmented")) r.augmented.emplace_back(spectrum_from_json(a.at(0)), spectrum_from_json(a.at(1)));
  return r;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace detail

// Header line, then one JSON object per record. The header carries a hash of
// the record lines so a reload can prove it reproduced the same manifest.
inline std::string manifest_text(const DatasetManifest& m) {
  std::string body;
  for (const auto& r : m.records) {
    body += detail::record_json(r).dump();
    body += '\n';
  }
  nlohmann::json h;
  h["magic"] = kManifestMagic;
  h["version"] = kManifestVersion;
  h["family_seed"] = detail::hex64(m.family_seed);
  h["family_hash"] = detail::hex64(m.family_hash);
  h["k"] = m.k;
  h["vertices"] = m.records.empty() ? 0 : m.records.front().sample.union_mask.size();
  h["count"] = m.records.size();
  h["records_hash"] = detail::hex64(fnv1a(body));
  for (Split s : kSplits) {
    if (!m.settings.count(s)) continue;
    const auto& st = m.settings.at(s);
    h["settings"][to_string(s)] = {{"known_identity", st.known_identity}, {"known_partiality", st.known_partiality}, {"remeshed", st.remeshed}};
  }
  return h.dump() + '\n' + body;
}

inline std::uint64_t manifest_hash(const DatasetManifest& m) { return fnv1a(manifest_text(m)); }

inline DatasetManifest parse_manifest(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "line 1: missing manifest header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("line 1: ") + e.what());
  }
  if (!h.is_object() || h.value("magic", "") != kManifestMagic) throw Error(ErrorCode::VersionMismatch, "not a SPUN-DS manifest");
  if (h.value("version", -1) != kManifestVersion)
    throw Error(ErrorCode::VersionMismatch, "manifest version " + h.value("version", nlohmann::json()).dump() + ", expected 1");
  DatasetManifest m;
  std::size_t nv = 0, count = 0;
  std::string records_hash;
  try {
    m.family_seed = std::stoull(h.at("family_seed").get<std::string>(), nullptr, 16);
    m.family_hash = std::stoull(h.at("family_hash").get<std::string>(), nullptr, 16);
    m.k = h.at("k").get<Index>();
    nv = h.at("vertices").get<std::size_t>();
    count = h.at("count").get<std::size_t>();
    records_hash = h.at("records_hash").get<std::string>();
    if (h.contains("settings"))
      for (auto& [name, st] : h.at("settings").items())
        m.settings[parse_split(name)] = {st.at("known_identity").get<bool>(), st.at("known_partiality").get<bool>(), st.at("remeshed").get<bool>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("line 1: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::ParseError, std::string("line 1: ") + e.what());
  }
  std::string body;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    try {
      m.records.push_back(detail::record_from_json(nlohmann::json::parse(line), nv));
      if (m.records.back().sample.union_spec.k() != m.k) throw Error(ErrorCode::LengthMismatch, "spectrum length differs from header k");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
    body += line;
    body += '\n';
  }
  if (m.records.size() != count)
    throw Error(ErrorCode::ParseError, "header announces " + std::to_string(count) + " records, found " + std::to_string(m.records.size()));
  if (detail::hex64(fnv1a(body)) != records_hash) throw Error(ErrorCode::ChecksumMismatch, "record hash does not match the header");
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) { write_file(path, manifest_text(m)); }

inline DatasetManifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

}  // namespace spun
