#pragma once

#include <spun/dataset/manifest.hpp>
#include <spun/nn/optim.hpp>
#include <spun/unionop/model.hpp>

#include <json.hpp>

#include <functional>
#include <numeric>
#include <optional>

namespace spun {

struct TrainConfig {
  Index batch = 32;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  int t0 = 10;
  int t_mult = 2;
  int epochs = 30;
  std::uint64_t seed = 1;
  bool augmentation = true;
  double val_fraction = 0.1;  // of the train split, held back for checkpoint selection
  UnionConfig model;
  unsigned jobs = 1;  // evaluation only; gradient accumulation stays single-threaded
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // eigenvalue-space MSE, averaged over the epoch
  double val_loss = 0.0;
  bool best = false;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"best", e.best}};
}

inline std::string history_jsonl(const std::vector<EpochLog>& h) {
  std::string out;
  for (const auto& e : h) out += to_json(e).dump() + "\n";
  return out;
}

struct UnionTrainResult {
  UnionModel model;  // parameters from the epoch with the lowest validation loss
  std::vector<EpochLog> history;
  int best_epoch = 0;
};

struct UnionMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

// Mean over samples of the per-entry squared and absolute errors.
inline UnionMetrics spectrum_errors(const std::vector<Spectrum>& pred, const std::vector<Spectrum>& truth) {
  if (pred.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "prediction and target counts differ");
  UnionMetrics m;
  m.count = pred.size();
  if (pred.empty()) return m;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].k() != truth[s].k()) throw Error(ErrorCode::LengthMismatch, "prediction and target lengths differ");
    double se = 0.0, ae = 0.0;
    for (Index i = 0; i < pred[s].k(); ++i) {
      const double e = pred[s].values[i] - truth[s].values[i];
      se += e * e;
      ae += std::abs(e);
    }
    m.mse += se / static_cast<double>(pred[s].k());
    m.mae += ae / static_cast<double>(pred[s].k());
  }
  m.mse /= static_cast<double>(pred.size());
  m.mae /= static_cast<double>(pred.size());
  return m;
}

inline std::vector<Spectrum> predict_unions(const UnionModel& m, const std::vector<const SampleRecord*>& recs, unsigned jobs = 1) {
  std::vector<Spectrum> out(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) { out[i] = union_forward(recs[i]->sample.spec1, recs[i]->sample.spec2, m); });
  return out;
}

inline std::vector<Spectrum> targets_of(const std::vector<const SampleRecord*>& recs) {
  std::vector<Spectrum> out;
  for (const auto* r : recs) out.push_back(r->sample.union_spec);
  return out;
}

inline UnionMetrics eval_union(const UnionModel& m, const std::vector<const SampleRecord*>& recs, unsigned jobs = 1) {
  return spectrum_errors(predict_unions(m, recs, jobs), targets_of(recs));
}

// The naive predictor suggested by domain monotonicity: elementwise min of the parts.
inline Spectrum min_baseline(const Spectrum& a, const Spectrum& b) {
  if (a.k() != b.k()) throw Error(ErrorCode::LengthMismatch, "spectra of different lengths");
  Spectrum s = a;
  for (Index i = 0; i < a.k(); ++i) s.values[i] = std::min(a.values[i], b.values[i]);
  return s;
}

inline UnionMetrics eval_min_baseline(const std::vector<const SampleRecord*>& recs) {
  std::vector<Spectrum> pred;
  for (const auto* r : recs) pred.push_back(min_baseline(r->sample.spec1, r->sample.spec2));
  return spectrum_errors(pred, targets_of(recs));
}

// Mean per-index offset of the union targets; the fixed normalization of a fresh model.
inline double target_value_scale(const std::vector<const SampleRecord*>& recs) {
  double s = 0.0;
  for (const auto* r : recs) s += r->sample.union_spec.values.back() / static_cast<double>(r->sample.union_spec.k());
  s /= static_cast<double>(std::max<std::size_t>(recs.size(), 1));
  return s > 0.0 ? s : 1.0;
}

// Deterministic train/validation partition of the train split.
inline std::pair<std::vector<const SampleRecord*>, std::vector<const SampleRecord*>> train_val_split(const DatasetManifest& m, double val_fraction,
                                                                                                    std::uint64_t seed) {
  auto train = m.split(Split::Train);
  if (train.empty()) throw Error(ErrorCode::InvalidArgument, "manifest has no train split");
  Rng rng(hash_combine(seed, 0x7a1));
  rng.shuffle(train.begin(), train.end());
  const auto nv = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(train.size())));
  if (nv == 0 || nv >= train.size()) return {train, train};
  std::vector<const SampleRecord*> val(train.end() - static_cast<std::ptrdiff_t>(nv), train.end());
  train.resize(train.size() - nv);
  return {train, val};
}

// Minimizes MSE between cumsum-decoded predictions and target eigenvalues.
// `init` continues from existing weights (fine-tuning). `on_epoch` sees every
// history entry as it is produced.
inline UnionTrainResult train_union(const DatasetManifest& manifest, const TrainConfig& cfg, const UnionModel* init = nullptr,
                                    const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (cfg.batch < 1) throw Error(ErrorCode::InvalidArgument, "batch must be >= 1");
  if (cfg.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  auto [train, val] = train_val_split(manifest, cfg.val_fraction, cfg.seed);

  UnionModel model;
  if (init) {
    model = UnionModel::from_store(init->params().clone());
  } else {
    UnionConfig mc = cfg.model;
    mc.k = manifest.k;
    model = UnionModel::create(mc, target_value_scale(train), cfg.seed);
  }
  if (model.config().k != manifest.k) throw Error(ErrorCode::LengthMismatch, "model k differs from the manifest k");
  const double vs = model.value_scale();
  const double inv = 1.0 / vs;

  nn::AdamState opt;
  opt.weight_decay = cfg.weight_decay;
  const nn::LrSchedule sched{cfg.lr, 0.0, cfg.t0, cfg.t_mult};
  UnionTrainResult res;
  nn::ParamStore best = model.params().clone();
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  Rng rng(hash_combine(cfg.seed, 0x0de7));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = nn::lr_at(sched, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
        const double w = 1.0 / static_cast<double>(end - start);
        for (std::size_t j = start; j < end; ++j) {
          const SampleRecord& r = *train[order[j]];
          const std::uint64_t key = hash_combine(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)), order[j]);
          const Spectrum* s1 = &r.sample.spec1;
          const Spectrum* s2 = &r.sample.spec2;
          if (cfg.augmentation && !r.augmented.empty()) {
            const auto v = mix64(key) % (r.augmented.size() + 1);
            if (v > 0) std::tie(s1, s2) = std::pair{&r.augmented[v - 1].first, &r.augmented[v - 1].second};
          }
          nn::Mat target(1, manifest.k);
          for (Index i = 0; i < manifest.k; ++i) target(0, i) = r.sample.union_spec.values[i] * inv;
          nn::Tensor pred = nn::scale(model.forward(*s1, *s2, {true, key}), inv);
          nn::Tensor loss = nn::scale(nn::mse(pred, nn::Tensor(target)), w);
          total += loss.item() / w;
          loss.backward();
        }
        nn::adam_step(model.params(), opt, lr);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      throw Error(ErrorCode::DivergenceDetected, "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = total / static_cast<double>(order.size()) * vs * vs;
    if (!std::isfinite(log.train_loss)) throw Error(ErrorCode::DivergenceDetected, "training loss is not finite at epoch " + std::to_string(epoch));
    log.val_loss = eval_union(model, val, cfg.jobs).mse;
    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      best = model.params().clone();
      res.best_epoch = epoch;
      log.best = true;
    }
    res.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  res.model = UnionModel::from_store(std::move(best));
  return res;
}

}  // namespace spun
