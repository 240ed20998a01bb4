#pragma once

#include <spun/spectral/spectrum.hpp>

#include <json.hpp>

#include <set>

namespace spun {

struct IndexEntry {
  Index shape_id = 0;
  Index identity = 0;
  Signature signature;
};

struct Match {
  Index shape_id = 0;
  double distance = 0.0;
};

// Exact brute-force nearest neighbours over Euclidean signature distance.
class RetrievalIndex {
 public:
  void add(Index shape_id, Index identity, Signature sig) {
    if (!entries_.empty() && sig.values.size() != entries_[0].signature.values.size())
      throw Error(ErrorCode::LengthMismatch, "signature length differs from the index");
    if (!ids_.insert(shape_id).second) throw Error(ErrorCode::InvalidArgument, "duplicate shape id " + std::to_string(shape_id));
    entries_.push_back({shape_id, identity, std::move(sig)});
  }

  const std::vector<IndexEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Index dimension() const { return entries_.empty() ? 0 : static_cast<Index>(entries_[0].signature.values.size()); }

  Index identity_of(Index shape_id) const {
    for (const auto& e : entries_)
      if (e.shape_id == shape_id) return e.identity;
    throw Error(ErrorCode::InvalidArgument, "no shape " + std::to_string(shape_id));
  }

  // The K closest shapes, ties broken by lower shape id.
  std::vector<Match> query_topk(const Signature& sig, std::size_t K) const {
    if (entries_.empty()) throw Error(ErrorCode::EmptyIndex, "retrieval index is empty");
    std::vector<Match> all;
    all.reserve(entries_.size());
    for (const auto& e : entries_) all.push_back({e.shape_id, signature_distance(sig, e.signature)});
    const auto less = [](const Match& a, const Match& b) { return a.distance != b.distance ? a.distance < b.distance : a.shape_id < b.shape_id; };
    K = std::min(K, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(K), all.end(), less);
    all.resize(K);
    return all;
  }

 private:
  std::vector<IndexEntry> entries_;
  std::set<Index> ids_;
};

struct IndexShape {
  Index shape_id = 0;
  Index identity = 0;
  Spectrum spectrum;
};

inline RetrievalIndex index_build(const std::vector<IndexShape>& shapes) {
  RetrievalIndex idx;
  for (const auto& s : shapes) idx.add(s.shape_id, s.identity, shape_dna(s.spectrum));
  return idx;
}

struct RetrievalQuery {
  Index identity = 0;
  Signature signature;
};

// Fraction of queries whose top-K contains a shape of the right identity, per K.
inline std::map<std::size_t, double> eval_retrieval(const RetrievalIndex& idx, const std::vector<RetrievalQuery>& queries,
                                                    const std::vector<std::size_t>& ks = {1, 5, 10}) {
  std::map<std::size_t, double> rate;
  for (auto k : ks) rate[k] = 0.0;
  if (queries.empty()) return rate;
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  for (const auto& q : queries) {
    const auto ranked = idx.query_topk(q.signature, kmax);
    for (auto k : ks)
      for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
        if (idx.identity_of(ranked[r].shape_id) == q.identity) {
          rate[k] += 1.0;
          break;
        }
  }
  for (auto& [k, v] : rate) v /= static_cast<double>(queries.size());
  return rate;
}

inline nlohmann::json retrieval_json(Index query_id, const std::vector<Match>& ranked) {
  nlohmann::json r = nlohmann::json::array();
  for (const auto& m : ranked) r.push_back({{"shape_id", m.shape_id}, {"distance", m.distance}});
  return {{"query_id", query_id}, {"ranked", r}};
}

inline nlohmann::json index_json(const RetrievalIndex& idx) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : idx.entries()) entries.push_back({{"shape_id", e.shape_id}, {"identity", e.identity}, {"signature", e.signature.values}});
  return {{"dimension", idx.dimension()}, {"entries", entries}};
}

inline RetrievalIndex index_from_json(const nlohmann::json& j) {
  try {
    RetrievalIndex idx;
    for (const auto& e : j.at("entries")) idx.add(e.at("shape_id").get<Index>(), e.at("identity").get<Index>(), Signature{e.at("signature").get<std::vector<double>>()});
    return idx;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad index JSON: ") + e.what());
  }
}

// Elementwise (1 - t) a + t b.
inline Spectrum interpolate_spectra(const Spectrum& a, const Spectrum& b, double t) {
  if (a.k() != b.k()) throw Error(ErrorCode::LengthMismatch, "spectra of different lengths");
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidArgument, "interpolation parameter must lie in [0, 1]");
  Spectrum s = a;
  for (Index i = 0; i < a.k(); ++i) s.values[i] = (1.0 - t) * a.values[i] + t * b.values[i];
  return s;
}

}  // namespace spun
