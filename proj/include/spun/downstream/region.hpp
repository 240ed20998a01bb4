#pragma once

#include <spun/unionop/train.hpp>

namespace spun {

// Reference ladder for a 6890-vertex template (about 0.19, 0.38, 0.57, 0.75, 1.0 of V),
// rescaled to other templates.
inline constexpr std::array<double, 5> kRegionWidths6890{1300, 2600, 3900, 5200, 6890};

inline std::vector<Index> region_widths(Index num_vertices) {
  std::vector<Index> w;
  for (double r : kRegionWidths6890) w.push_back(std::max<Index>(1, static_cast<Index>(std::llround(r / 6890.0 * static_cast<double>(num_vertices)))));
  return w;
}

// Spectrum -> per-vertex probability on the template. Inputs are divided by a
// per-index mean (buffer) so the first layer sees O(1) values.
class RegionModel {
 public:
  static constexpr double kDropout = 0.5;

  RegionModel() = default;

  static RegionModel create(Index k, Index num_vertices, const std::vector<double>& input_mean, std::uint64_t seed) {
    if (static_cast<Index>(input_mean.size()) != k) throw Error(ErrorCode::LengthMismatch, "input mean length differs from k");
    nn::ParamStore ps;
    const auto w = region_widths(num_vertices);
    Index in = k;
    for (std::size_t l = 0; l < w.size(); ++l) {
      nn::Linear::make(ps, "fc" + std::to_string(l), in, w[l], seed);
      if (l + 1 < w.size()) nn::Norm::make(ps, "norm" + std::to_string(l), w[l]);
      in = w[l];
    }
    nn::Mat mean(1, k);
    for (Index i = 0; i < k; ++i) mean(0, i) = input_mean[static_cast<std::size_t>(i)] > 0.0 ? input_mean[static_cast<std::size_t>(i)] : 1.0;
    ps.add("buffer.input_mean", mean);
    return from_store(std::move(ps));
  }

  static RegionModel from_store(nn::ParamStore ps) {
    RegionModel m;
    m.params_ = std::move(ps);
    if (!m.params_.contains("buffer.input_mean") || !m.params_.contains("fc4.w")) throw Error(ErrorCode::ShapeMismatch, "checkpoint is not a region model");
    for (int l = 0; l < 5; ++l) m.fc_.push_back(nn::Linear::bind(m.params_, "fc" + std::to_string(l)));
    for (int l = 0; l < 4; ++l) m.norm_.push_back(nn::Norm::bind(m.params_, "norm" + std::to_string(l)));
    return m;
  }

  static RegionModel load(const std::filesystem::path& path) {
    nn::ParamStore ps;
    nn::load_ckpt(ps, path);
    return from_store(std::move(ps));
  }
  void save(const std::filesystem::path& path) const { nn::save_ckpt(params_, path); }

  Index k() const { return fc_[0].in(); }
  Index num_vertices() const { return fc_.back().out(); }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Rows of `x` are spectra; the result has one row of probabilities per spectrum.
  nn::Tensor forward(const nn::Tensor& x, const nn::Ctx& ctx) const {
    if (x.cols() != k()) throw Error(ErrorCode::LengthMismatch, "spectrum length " + std::to_string(x.cols()) + ", model expects " + std::to_string(k()));
    const nn::Mat inv = params_.get("buffer.input_mean").value().cwiseInverse();
    nn::Tensor h = norm_[0](nn::relu(fc_[0](nn::mul_row(x, nn::Tensor(inv)))));
    for (std::size_t l = 1; l < 4; ++l) h = norm_[l](nn::dropout(nn::elu(fc_[l](h)), kDropout, ctx.train, ctx.derive(l).key));
    return nn::sigmoid(fc_[4](h));
  }

 private:
  nn::ParamStore params_;
  std::vector<nn::Linear> fc_;
  std::vector<nn::Norm> norm_;
};

inline nn::Mat spectra_rows(const std::vector<Spectrum>& s) {
  nn::Mat x(static_cast<Index>(s.size()), s.empty() ? 0 : s[0].k());
  for (std::size_t r = 0; r < s.size(); ++r) {
    if (s[r].k() != x.cols()) throw Error(ErrorCode::LengthMismatch, "spectra of different lengths");
    for (Index i = 0; i < x.cols(); ++i) x(static_cast<Index>(r), i) = s[r].values[i];
  }
  return x;
}

inline std::vector<double> region_forward(const Spectrum& s, const RegionModel& w, Mode mode = Mode::Eval, std::uint64_t key = 0) {
  nn::NoGrad guard;
  const nn::Tensor p = w.forward(nn::Tensor(spectra_rows({s})), {mode == Mode::Train, key});
  return {p.value().data(), p.value().data() + p.cols()};
}

inline std::vector<double> mask_values(const RegionMask& m) {
  std::vector<double> v(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 1.0 : 0.0;
  return v;
}

inline double plain_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// min of the MSE against the mask and against its mirror image.
inline double sym_loss(const std::vector<double>& pred, const RegionMask& gt, const std::vector<Index>& symmap) {
  if (pred.size() != gt.size() || symmap.size() != gt.size()) throw Error(ErrorCode::LengthMismatch, "prediction, mask and symmetry map lengths differ");
  return std::min(plain_mse(pred, mask_values(gt)), plain_mse(pred, mask_values(gt.permuted(symmap))));
}

// Differentiable version over a batch: each row picks whichever target is closer.
inline nn::Tensor sym_loss(const nn::Tensor& pred, const std::vector<RegionMask>& gt, const std::vector<Index>& symmap) {
  if (static_cast<std::size_t>(pred.rows()) != gt.size()) throw Error(ErrorCode::LengthMismatch, "batch size and mask count differ");
  nn::Mat target(pred.rows(), pred.cols());
  for (Index r = 0; r < pred.rows(); ++r) {
    const auto& m = gt[static_cast<std::size_t>(r)];
    if (static_cast<Index>(m.size()) != pred.cols()) throw Error(ErrorCode::LengthMismatch, "mask length differs from the model output");
    const RegionMask mir = m.permuted(symmap);
    double e0 = 0.0, e1 = 0.0;
    for (Index v = 0; v < pred.cols(); ++v) {
      const double p = pred.value()(r, v);
      e0 += std::pow(p - (m[static_cast<std::size_t>(v)] ? 1.0 : 0.0), 2);
      e1 += std::pow(p - (mir[static_cast<std::size_t>(v)] ? 1.0 : 0.0), 2);
    }
    const RegionMask& pick = e1 < e0 ? mir : m;
    for (Index v = 0; v < pred.cols(); ++v) target(r, v) = pick[static_cast<std::size_t>(v)] ? 1.0 : 0.0;
  }
  return nn::mse(pred, nn::Tensor(target));
}

struct RegionScore {
  double iou = 0.0;
  double accuracy = 0.0;
};

inline RegionScore score_mask(const RegionMask& pred, const RegionMask& gt) {
  const std::size_t inter = (pred & gt).count(), uni = (pred | gt).count();
  std::size_t agree = 0;
  for (std::size_t v = 0; v < gt.size(); ++v) agree += pred[v] == gt[v];
  return {uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni), static_cast<double>(agree) / static_cast<double>(gt.size())};
}

inline RegionMask threshold(const std::vector<double>& p, double t = 0.5) {
  RegionMask m(p.size());
  for (std::size_t v = 0; v < p.size(); ++v)
    if (p[v] >= t) m.set(v);
  return m;
}

// Each metric against the better of the mask and its mirror image.
inline RegionScore score_symmetric(const RegionMask& pred, const RegionMask& gt, const std::vector<Index>& symmap) {
  const RegionScore a = score_mask(pred, gt), b = score_mask(pred, gt.permuted(symmap));
  return {std::max(a.iou, b.iou), std::max(a.accuracy, b.accuracy)};
}

struct RegionTrainConfig {
  Index batch = 32;
  double lr = 5e-5;
  double weight_decay = 1e-6;
  int t0 = 10;
  int t_mult = 2;
  int epochs = 60;
  int patience = 20;  // epochs without a validation IoU gain before stopping
  double noise = 0.01;  // sigma as a fraction of the per-index mean eigenvalue
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
};

struct RegionEpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_iou = 0.0;
  bool best = false;
};

struct RegionTrainResult {
  RegionModel model;
  std::vector<RegionEpochLog> history;
  int best_epoch = 0;
};

inline RegionScore eval_region_on(const RegionModel& w, const std::vector<Spectrum>& inputs, const std::vector<const SampleRecord*>& recs,
                                  const std::vector<Index>& symmap, unsigned jobs = 1) {
  RegionScore total;
  if (recs.empty()) return total;
  std::vector<RegionScore> per(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) { per[i] = score_symmetric(threshold(region_forward(inputs[i], w)), recs[i]->sample.union_mask, symmap); });
  for (const auto& s : per) {
    total.iou += s.iou;
    total.accuracy += s.accuracy;
  }
  total.iou /= static_cast<double>(recs.size());
  total.accuracy /= static_cast<double>(recs.size());
  return total;
}

// Scores on ground-truth union spectra, or on the union model's predictions when one is given.
inline RegionScore eval_region(const RegionModel& w, const std::vector<const SampleRecord*>& recs, const std::vector<Index>& symmap,
                               const UnionModel* union_model = nullptr, unsigned jobs = 1) {
  return eval_region_on(w, union_model ? predict_unions(*union_model, recs, jobs) : targets_of(recs), recs, symmap, jobs);
}

inline std::vector<double> per_index_mean(const std::vector<const SampleRecord*>& recs, Index k) {
  std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
  for (const auto* r : recs)
    for (Index i = 0; i < k; ++i) mean[static_cast<std::size_t>(i)] += r->sample.union_spec.values[i] / static_cast<double>(recs.size());
  return mean;
}

// Trains on ground-truth union spectra with Gaussian noise and, when a frozen
// union model is given, on its predictions as well; keeps the epoch with the
// best validation IoU.
inline RegionTrainResult train_region(const DatasetManifest& manifest, const std::vector<Index>& symmap, const UnionModel* union_model,
                                      const RegionTrainConfig& cfg, const std::function<void(const RegionEpochLog&)>& on_epoch = {}) {
  if (cfg.batch < 1 || cfg.epochs < 1) throw Error(ErrorCode::InvalidArgument, "batch and epochs must be >= 1");
  auto [train, val] = train_val_split(manifest, cfg.val_fraction, cfg.seed);
  const Index k = manifest.k;
  const Index nv = static_cast<Index>(train.front()->sample.union_mask.size());
  if (static_cast<Index>(symmap.size()) != nv) throw Error(ErrorCode::LengthMismatch, "symmetry map length differs from the template");
  const auto mean = per_index_mean(train, k);

  // (input spectrum or nullptr for noisy ground truth, record)
  struct Item {
    const Spectrum* input;
    const SampleRecord* rec;
  };
  std::vector<Spectrum> predicted;
  if (union_model) predicted = predict_unions(*union_model, train, cfg.jobs);
  std::vector<Item> items;
  for (std::size_t i = 0; i < train.size(); ++i) {
    items.push_back({nullptr, train[i]});
    if (union_model) items.push_back({&predicted[i], train[i]});
  }
  std::vector<Spectrum> val_inputs = targets_of(val);
  std::vector<const SampleRecord*> val_recs = val;
  if (union_model) {
    for (auto& s : predict_unions(*union_model, val, cfg.jobs)) val_inputs.push_back(std::move(s));
    val_recs.insert(val_recs.end(), val.begin(), val.end());
  }

  RegionModel model = RegionModel::create(k, nv, mean, cfg.seed);
  nn::AdamState opt;
  opt.weight_decay = cfg.weight_decay;
  const nn::LrSchedule sched{cfg.lr, 0.0, cfg.t0, cfg.t_mult};
  RegionTrainResult res;
  nn::ParamStore best = model.params().clone();
  double best_iou = -1.0;
  int since_best = 0;
  Rng rng(hash_combine(cfg.seed, 0x4e61));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = nn::lr_at(sched, epoch);
    rng.shuffle(items.begin(), items.end());
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(cfg.batch));
        nn::Mat x(static_cast<Index>(end - start), k);
        std::vector<RegionMask> gt;
        for (std::size_t j = start; j < end; ++j) {
          const auto r = static_cast<Index>(j - start);
          const Spectrum& s = items[j].input ? *items[j].input : items[j].rec->sample.union_spec;
          for (Index i = 0; i < k; ++i)
            x(r, i) = s.values[i] + (items[j].input ? 0.0 : cfg.noise * mean[static_cast<std::size_t>(i)] * rng.normal());
          gt.push_back(items[j].rec->sample.union_mask);
        }
        const std::uint64_t key = hash_combine(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)), start);
        nn::Tensor loss = sym_loss(model.forward(nn::Tensor(x), {true, key}), gt, symmap);
        total += loss.item() * static_cast<double>(end - start);
        loss.backward();
        nn::adam_step(model.params(), opt, lr);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      throw Error(ErrorCode::DivergenceDetected, "region training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    RegionEpochLog log{epoch, lr, total / static_cast<double>(items.size()), eval_region_on(model, val_inputs, val_recs, symmap, cfg.jobs).iou, false};
    if (log.val_iou > best_iou) {
      best_iou = log.val_iou;
      best = model.params().clone();
      res.best_epoch = epoch;
      log.best = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    res.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (since_best >= cfg.patience) break;
  }
  res.model = RegionModel::from_store(std::move(best));
  return res;
}

inline nlohmann::json to_json(const RegionEpochLog& e) {
  return {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_iou", e.val_iou}, {"best", e.best}};
}

inline nlohmann::json mask_json(const std::vector<double>& p) { return p; }

}  // namespace spun
