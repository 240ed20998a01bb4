// Command-line driver: one subcommand per pipeline stage. JSON results go to
// stdout, or to <out>/result.json next to a run.json provenance record.

#include <spun/downstream/region.hpp>
#include <spun/downstream/retrieval.hpp>
#include <spun/nn/gradcheck.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>

#ifndef SPUN_VERSION
#define SPUN_VERSION "unknown"
#endif

using namespace spun;
using json = nlohmann::json;

namespace {

// A failed check (audit, gradcheck) rather than a crash.
struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::IoError:
    case ErrorCode::ConvergenceFailure:
    case ErrorCode::DivergenceDetected:
    case ErrorCode::SamplingExhausted:
    case ErrorCode::InfeasibleSplit:
      return 1;
    default:
      return 2;
  }
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

unsigned default_jobs() {
  if (const char* env = std::getenv("SPUN_JOBS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return static_cast<unsigned>(j);
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("SPUN_JOBS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, p.string() + ": " + e.what());
  }
}

Spectrum read_spectrum(const std::filesystem::path& p) { return spectrum_from_json(read_json(p)); }

Split split_arg(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const Error&) {
    throw UsageError("--split must be train, testA or testB, got '" + s + "'");
  }
}

std::vector<const SampleRecord*> nonempty(std::vector<const SampleRecord*> recs, const std::string& split) {
  if (recs.empty()) throw Error(ErrorCode::InvalidArgument, "split " + split + " is empty");
  return recs;
}

ShapeFamily family_for(const std::string& dir, const DatasetManifest& m) {
  ShapeFamily fam = load_family_dir(dir);
  if (family_fingerprint(fam) != m.family_hash) throw Error(ErrorCode::InvalidArgument, "family in " + dir + " does not match the manifest");
  return fam;
}

json score_json(const RegionScore& s) { return {{"iou", s.iou}, {"accuracy", s.accuracy}}; }

json rates_json(const std::map<std::size_t, double>& r) {
  json j;
  for (const auto& [k, v] : r) j["top" + std::to_string(k)] = v;
  return j;
}

std::string jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + '\n';
  return s;
}

// Every option of the parent and the chosen subcommand(s) as strings.
json effective_config(const CLI::App& app) {
  json cfg;
  std::function<void(const CLI::App&, const std::string&)> walk = [&](const CLI::App& a, const std::string& prefix) {
    for (const CLI::Option* o : a.get_options()) {
      if (o->get_name() == "--help" || o->get_name().empty()) continue;
      std::string name = o->get_name(false, true);
      name.erase(0, name.find_first_not_of('-'));
      const std::string key = prefix + name;
      if (o->count() > 0) {
        const auto& r = o->results();
        cfg[key] = r.size() == 1 ? json(r[0]) : json(r);
      } else {
        cfg[key] = o->get_default_str();
      }
    }
    for (const CLI::App* s : a.get_subcommands()) walk(*s, prefix + s->get_name() + ".");
  };
  walk(app, "");
  return cfg;
}

// Flat `overrides` (and a top-level `seed`) from a JSON config fill options
// the command line left unset.
void apply_config(CLI::App& app, const std::string& path) {
  const json cfg = read_json(path);
  if (!cfg.is_object()) throw UsageError("config " + path + " must be a JSON object");
  json flat = cfg.value("overrides", json::object());
  if (!flat.is_object()) throw UsageError("config 'overrides' must be an object");
  if (cfg.contains("seed")) flat.emplace("seed", cfg["seed"]);
  CLI::App* leaf = &app;
  while (!leaf->get_subcommands().empty()) leaf = leaf->get_subcommands().front();
  for (const auto& [key, value] : flat.items()) {
    CLI::Option* opt = nullptr;
    for (CLI::App* a = leaf; a && !opt; a = a->get_parent()) opt = a->get_option_no_throw("--" + key);
    if (!opt && key == "seed") continue;
    if (!opt) throw UsageError("config override '" + key + "' is not an option of this command");
    if (opt->count() > 0) continue;
    opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    opt->run_callback();
  }
}

struct Run {
  std::string out;
  unsigned jobs = 1;
  std::string config;

  std::filesystem::path artifact(const std::string& name) const {
    if (out.empty()) throw UsageError("--out is required for this command");
    std::filesystem::create_directories(out);
    return std::filesystem::path(out) / name;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectral union toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  Run run;
  app.add_option("--out", run.out, "directory for result.json, run.json and artifacts (default: JSON on stdout)");
  app.add_option("--jobs", run.jobs, "worker threads (default: SPUN_JOBS, else logical cores)")->check(CLI::PositiveNumber);
  app.add_option("--config", run.config, "JSON config whose flat 'overrides' object fills unset flags")->check(CLI::ExistingFile);

  // spectrum
  auto* c_spec = app.add_subcommand("spectrum", "Laplace-Beltrami spectrum of a mesh or point cloud");
  std::string shape_path, bc_name = "dirichlet";
  Index k = kDefaultK;
  c_spec->add_option("shape", shape_path, "OFF or PLY file")->required()->check(CLI::ExistingFile);
  c_spec->add_option("--bc", bc_name, "dirichlet or closed")->check(CLI::IsMember({"dirichlet", "closed"}));
  c_spec->add_option("--k", k, "eigenvalue count")->check(CLI::PositiveNumber);

  // synth
  auto* c_synth = app.add_subcommand("synth", "write a synthetic shape family directory");
  std::uint64_t seed = 1;
  Index identities = 4, poses = 5, vertices = 600;
  c_synth->add_option("--seed", seed);
  c_synth->add_option("--identities", identities)->check(CLI::PositiveNumber);
  c_synth->add_option("--poses", poses)->check(CLI::PositiveNumber);
  c_synth->add_option("--vertices", vertices, "target template vertex count")->check(CLI::PositiveNumber);

  // dataset build|audit
  auto* c_ds = app.add_subcommand("dataset", "build or audit a partial-pair dataset");
  c_ds->require_subcommand(1);
  auto* c_build = c_ds->add_subcommand("build", "realize samples and split them");
  std::string family_dir, manifest_path;
  BuildConfig bcfg;
  SplitPolicy policy;
  std::uint64_t split_seed = 1;
  c_build->add_option("--family", family_dir, "family directory from `synth`")->required()->check(CLI::ExistingDirectory);
  c_build->add_option("--full-cover", bcfg.full_cover_pairs, "full-cover mask pairs");
  c_build->add_option("--partial", bcfg.partial_union_pairs, "partial-union mask pairs");
  c_build->add_option("--augment", bcfg.augmentations, "augmented variants per sample");
  c_build->add_option("--k", bcfg.k)->check(CLI::PositiveNumber);
  c_build->add_option("--seed", bcfg.seed, "pair sampling seed");
  c_build->add_option("--split-seed", split_seed);
  c_build->add_option("--test-a", policy.test_a)->check(CLI::Range(0.0, 1.0));
  c_build->add_option("--test-b", policy.test_b)->check(CLI::Range(0.0, 1.0));
  auto* c_audit = c_ds->add_subcommand("audit", "check split contract and domain monotonicity");
  c_audit->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);

  // train-union / eval-union / union
  auto* c_tu = app.add_subcommand("train-union", "train the spectral union operator");
  TrainConfig tcfg;
  std::string init_ckpt;
  bool no_augment = false;
  c_tu->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  c_tu->add_option("--epochs", tcfg.epochs)->check(CLI::PositiveNumber);
  c_tu->add_option("--lr", tcfg.lr)->check(CLI::PositiveNumber);
  c_tu->add_option("--batch", tcfg.batch)->check(CLI::PositiveNumber);
  c_tu->add_option("--weight-decay", tcfg.weight_decay)->check(CLI::NonNegativeNumber);
  c_tu->add_option("--dropout", tcfg.model.dropout)->check(CLI::Range(0.0, 0.99));
  c_tu->add_option("--val-fraction", tcfg.val_fraction)->check(CLI::Range(0.0, 0.9));
  c_tu->add_option("--seed", tcfg.seed);
  c_tu->add_flag("--no-augment", no_augment, "train on original masks only");
  c_tu->add_option("--init", init_ckpt, "checkpoint to fine-tune from")->check(CLI::ExistingFile);

  auto* c_eu = app.add_subcommand("eval-union", "mse/mae of a union model and the elementwise-min baseline");
  std::string ckpt, split_name = "testA";
  double remesh_drop = 0.0;
  c_eu->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  c_eu->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_eu->add_option("--split", split_name);
  c_eu->add_option("--remesh", remesh_drop, "decimate the parts by this face fraction first (needs --family)")->check(CLI::Range(0.0, 0.95));
  c_eu->add_option("--family", family_dir)->check(CLI::ExistingDirectory);

  auto* c_union = app.add_subcommand("union", "predict the spectrum of the union of two or more parts");
  std::vector<std::string> parts;
  bool right_fold = false;
  c_union->add_option("spectra", parts, "spectrum JSON files")->required()->expected(2, -1)->check(CLI::ExistingFile);
  c_union->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_union->add_flag("--right", right_fold, "fold from the right instead of the left");

  // train-region / eval-region / localize
  auto* c_tr = app.add_subcommand("train-region", "train the region localization network");
  RegionTrainConfig rcfg;
  std::string union_ckpt;
  c_tr->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  c_tr->add_option("--family", family_dir)->required()->check(CLI::ExistingDirectory);
  c_tr->add_option("--union-ckpt", union_ckpt, "frozen union model whose predictions join the training inputs")->check(CLI::ExistingFile);
  c_tr->add_option("--epochs", rcfg.epochs)->check(CLI::PositiveNumber);
  c_tr->add_option("--lr", rcfg.lr)->check(CLI::PositiveNumber);
  c_tr->add_option("--batch", rcfg.batch)->check(CLI::PositiveNumber);
  c_tr->add_option("--weight-decay", rcfg.weight_decay)->check(CLI::NonNegativeNumber);
  c_tr->add_option("--patience", rcfg.patience)->check(CLI::PositiveNumber);
  c_tr->add_option("--noise", rcfg.noise)->check(CLI::NonNegativeNumber);
  c_tr->add_option("--val-fraction", rcfg.val_fraction)->check(CLI::Range(0.0, 0.9));
  c_tr->add_option("--seed", rcfg.seed);

  auto* c_er = app.add_subcommand("eval-region", "IoU and accuracy on ground-truth and predicted union spectra");
  c_er->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  c_er->add_option("--family", family_dir)->required()->check(CLI::ExistingDirectory);
  c_er->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_er->add_option("--union-ckpt", union_ckpt)->check(CLI::ExistingFile);
  c_er->add_option("--split", split_name);

  auto* c_loc = app.add_subcommand("localize", "per-vertex region probabilities for one spectrum");
  std::string spec_path;
  c_loc->add_option("spectrum", spec_path)->required()->check(CLI::ExistingFile);
  c_loc->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_loc->add_option("--family", family_dir, "also write a colored OFF of the template (needs --out)")->check(CLI::ExistingDirectory);

  // index build|query / retrieve-eval
  auto* c_idx = app.add_subcommand("index", "build or query a ShapeDNA retrieval index");
  c_idx->require_subcommand(1);
  auto* c_ib = c_idx->add_subcommand("build", "closed spectra of every family shape");
  Index index_k = kDefaultK;
  c_ib->add_option("--family", family_dir)->required()->check(CLI::ExistingDirectory);
  c_ib->add_option("--k", index_k)->check(CLI::PositiveNumber);
  auto* c_iq = c_idx->add_subcommand("query", "nearest shapes to one spectrum");
  std::string index_path;
  std::size_t topk = 10;
  Index query_id = 0;
  c_iq->add_option("index", index_path)->required()->check(CLI::ExistingFile);
  c_iq->add_option("spectrum", spec_path)->required()->check(CLI::ExistingFile);
  c_iq->add_option("--topk", topk)->check(CLI::PositiveNumber);
  c_iq->add_option("--query-id", query_id);

  auto* c_re = app.add_subcommand("retrieve-eval", "top-K identity hit rates of predicted union signatures");
  bool all_unions = false;
  c_re->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
  c_re->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  c_re->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_re->add_option("--split", split_name);
  c_re->add_flag("--all-unions", all_unions, "also query unions that do not cover the whole shape");

  // interp / gradcheck / export-spectrum
  auto* c_interp = app.add_subcommand("interp", "linear interpolation of two spectra");
  std::string spec_a, spec_b;
  double t = 0.5;
  c_interp->add_option("a", spec_a)->required()->check(CLI::ExistingFile);
  c_interp->add_option("b", spec_b)->required()->check(CLI::ExistingFile);
  c_interp->add_option("--t", t)->check(CLI::Range(0.0, 1.0));

  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference check of every autodiff primitive and block");
  std::uint64_t gc_seed = 7;
  c_gc->add_option("--seed", gc_seed);

  auto* c_exp = app.add_subcommand("export-spectrum", "one spectrum of a manifest record as JSON");
  std::size_t record = 0;
  std::string which = "union";
  c_exp->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  c_exp->add_option("--record", record, "record index in file order");
  c_exp->add_option("--which", which)->check(CLI::IsMember({"part1", "part2", "union", "predicted"}));
  c_exp->add_option("--ckpt", ckpt, "union model for --which predicted")->check(CLI::ExistingFile);

  const std::string started = utc_now();
  try {
    app.parse(argc, argv);
    run.jobs = app.get_option("--jobs")->count() ? run.jobs : 0;
    if (!run.config.empty()) apply_config(app, run.config);
    if (run.jobs == 0) run.jobs = default_jobs();
    bcfg.jobs = tcfg.jobs = rcfg.jobs = run.jobs;

    json result;
    std::string summary;

    if (*c_spec) {
      const Spectrum s = spectrum(load_shape_file(shape_path), k, parse_bc(bc_name));
      result = to_json(s, Provenance::Computed);
      summary = std::to_string(s.k()) + " eigenvalues, first " + std::to_string(s.values.front());
    } else if (*c_synth) {
      const ShapeFamily fam = synth_family(seed, identities, poses, vertices);
      save_family_dir(fam, run.artifact("family"));
      result = {{"family", (std::filesystem::path(run.out) / "family").string()}, {"identities", fam.identities}, {"poses", fam.poses},
                {"vertices", fam.num_vertices()}, {"fingerprint", detail::hex64(family_fingerprint(fam))}};
      summary = std::to_string(fam.identities * fam.poses) + " shapes with " + std::to_string(fam.num_vertices()) + " vertices";
    } else if (*c_build) {
      const ShapeFamily fam = load_family_dir(family_dir);
      const DatasetManifest m = build_manifest(fam, bcfg, policy, split_seed);
      const auto path = run.artifact("manifest.jsonl");
      save_manifest(m, path);
      result = {{"manifest", path.string()}, {"records", m.records.size()}, {"hash", detail::hex64(manifest_hash(m))}};
      for (Split s : kSplits) result["splits"][to_string(s)] = m.split(s).size();
      summary = std::to_string(m.records.size()) + " records";
    } else if (*c_audit) {
      const auto rep = audit(load_manifest(manifest_path));
      result = {{"ok", rep.ok()}, {"checked", rep.checked}, {"test_b_leaks", rep.test_b_leaks},
                {"test_a_unknown", rep.test_a_unknown}, {"monotonicity_violations", rep.monotonicity_violations}};
      summary = rep.ok() ? "audit passed" : "audit FAILED";
    } else if (*c_tu) {
      const DatasetManifest m = load_manifest(manifest_path);
      tcfg.augmentation = !no_augment;
      std::optional<UnionModel> init;
      if (!init_ckpt.empty()) init = UnionModel::load(init_ckpt);
      const auto res = train_union(m, tcfg, init ? &*init : nullptr, [](const EpochLog& e) {
        std::cerr << "epoch " << e.epoch << " lr " << e.lr << " train " << e.train_loss << " val " << e.val_loss << (e.best ? " *" : "") << '\n';
      });
      res.model.save(run.artifact("union.ckpt"));
      write_file(run.artifact("history.jsonl"), history_jsonl(res.history));
      const auto& best = res.history[static_cast<std::size_t>(res.best_epoch)];
      result = {{"checkpoint", run.artifact("union.ckpt").string()}, {"best_epoch", res.best_epoch}, {"val_mse", best.val_loss},
                {"value_scale", res.model.value_scale()}};
      if (const auto ta = m.split(Split::TestA); !ta.empty()) {
        const auto e = eval_union(res.model, ta, run.jobs);
        result["test_a"] = {{"mse", e.mse}, {"mae", e.mae}, {"count", e.count}};
      }
      summary = "best epoch " + std::to_string(res.best_epoch) + ", val mse " + std::to_string(best.val_loss);
    } else if (*c_eu) {
      DatasetManifest m = load_manifest(manifest_path);
      const Split split = split_arg(split_name);
      if (remesh_drop > 0.0) {
        if (family_dir.empty()) throw UsageError("--remesh needs --family");
        m = remeshed(m, family_for(family_dir, m), split, remesh_drop, run.jobs);
      }
      const auto recs = nonempty(m.split(split), split_name);
      const auto model = UnionModel::load(ckpt);
      const auto e = eval_union(model, recs, run.jobs);
      const auto b = eval_min_baseline(recs);
      result = {{"split", split_name}, {"count", e.count}, {"mse", e.mse}, {"mae", e.mae}, {"baseline_mse", b.mse}, {"baseline_mae", b.mae},
                {"remesh", remesh_drop}};
      summary = "mae " + std::to_string(e.mae) + " (baseline " + std::to_string(b.mae) + ")";
    } else if (*c_union) {
      const auto model = UnionModel::load(ckpt);
      std::vector<Spectrum> specs;
      for (const auto& p : parts) specs.push_back(read_spectrum(p));
      const Spectrum u = right_fold ? union_compose_right(specs, model) : union_compose(specs, model);
      result = to_json(u, Provenance::Predicted);
      summary = "union of " + std::to_string(specs.size()) + " spectra";
    } else if (*c_tr) {
      const DatasetManifest m = load_manifest(manifest_path);
      const ShapeFamily fam = family_for(family_dir, m);
      std::optional<UnionModel> um;
      if (!union_ckpt.empty()) um = UnionModel::load(union_ckpt);
      const auto res = train_region(m, fam.symmetry_map, um ? &*um : nullptr, rcfg, [](const RegionEpochLog& e) {
        std::cerr << "epoch " << e.epoch << " lr " << e.lr << " train " << e.train_loss << " val iou " << e.val_iou << (e.best ? " *" : "") << '\n';
      });
      res.model.save(run.artifact("region.ckpt"));
      std::vector<json> rows;
      for (const auto& e : res.history) rows.push_back(to_json(e));
      write_file(run.artifact("history.jsonl"), jsonl(rows));
      result = {{"checkpoint", run.artifact("region.ckpt").string()}, {"best_epoch", res.best_epoch}, {"epochs_run", res.history.size()},
                {"val_iou", res.history[static_cast<std::size_t>(res.best_epoch)].val_iou}};
      summary = "best epoch " + std::to_string(res.best_epoch);
    } else if (*c_er) {
      const DatasetManifest m = load_manifest(manifest_path);
      const ShapeFamily fam = family_for(family_dir, m);
      const auto recs = nonempty(m.split(split_arg(split_name)), split_name);
      const auto w = RegionModel::load(ckpt);
      const auto gt = eval_region(w, recs, fam.symmetry_map, nullptr, run.jobs);
      result = {{"split", split_name}, {"count", recs.size()}, {"ground_truth", score_json(gt)}};
      summary = "iou " + std::to_string(gt.iou);
      if (!union_ckpt.empty()) {
        const auto um = UnionModel::load(union_ckpt);
        const auto pr = eval_region(w, recs, fam.symmetry_map, &um, run.jobs);
        result["predicted"] = score_json(pr);
        summary += ", predicted iou " + std::to_string(pr.iou);
      }
    } else if (*c_loc) {
      const auto w = RegionModel::load(ckpt);
      const auto p = region_forward(read_spectrum(spec_path), w);
      result = mask_json(p);
      if (!family_dir.empty()) {
        const ShapeFamily fam = load_family_dir(family_dir);
        if (fam.num_vertices() != static_cast<Index>(p.size())) throw Error(ErrorCode::LengthMismatch, "region model and template vertex counts differ");
        write_file(run.artifact("mask.off"), to_colored_off(fam.templ, p));
      }
      summary = std::to_string(threshold(p).count()) + " of " + std::to_string(p.size()) + " vertices above 0.5";
    } else if (*c_ib) {
      const ShapeFamily fam = load_family_dir(family_dir);
      std::vector<IndexShape> shapes(static_cast<std::size_t>(fam.identities * fam.poses));
      parallel_for(shapes.size(), run.jobs, [&](std::size_t i) {
        const auto id = static_cast<Index>(i) / fam.poses, pose = static_cast<Index>(i) % fam.poses;
        shapes[i] = {static_cast<Index>(i), id, spectrum(fam.embedding(id, pose), index_k, BoundaryCondition::Closed)};
      });
      const auto idx = index_build(shapes);
      const auto path = run.artifact("index.json");
      write_file(path, index_json(idx).dump());
      result = {{"index", path.string()}, {"size", idx.size()}, {"dimension", idx.dimension()}};
      summary = std::to_string(idx.size()) + " shapes indexed";
    } else if (*c_iq) {
      const auto idx = index_from_json(read_json(index_path));
      result = retrieval_json(query_id, idx.query_topk(shape_dna(read_spectrum(spec_path)), topk));
      summary = "nearest shape " + std::to_string(result["ranked"][0]["shape_id"].get<Index>());
    } else if (*c_re) {
      const auto idx = index_from_json(read_json(index_path));
      const DatasetManifest m = load_manifest(manifest_path);
      std::vector<const SampleRecord*> recs;
      for (const auto* r : m.split(split_arg(split_name)))
        if (all_unions || r->sample.union_mask.count() == r->sample.union_mask.size()) recs.push_back(r);
      nonempty(recs, split_name);
      const auto model = UnionModel::load(ckpt);
      const auto pred = predict_unions(model, recs, run.jobs);
      std::vector<RetrievalQuery> exact, predicted;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        exact.push_back({recs[i]->sample.meta.identity, shape_dna(recs[i]->sample.union_spec)});
        predicted.push_back({recs[i]->sample.meta.identity, shape_dna(pred[i], Provenance::Predicted)});
      }
      const auto rp = eval_retrieval(idx, predicted);
      result = {{"split", split_name}, {"count", recs.size()}, {"exact", rates_json(eval_retrieval(idx, exact))}, {"predicted", rates_json(rp)}};
      summary = "predicted top-1 " + std::to_string(rp.at(1));
    } else if (*c_interp) {
      result = to_json(interpolate_spectra(read_spectrum(spec_a), read_spectrum(spec_b), t));
      summary = "t = " + std::to_string(t);
    } else if (*c_gc) {
      bool ok = true;
      result = json::array();
      for (const auto& r : nn::gradcheck_suite(gc_seed)) {
        result.push_back({{"name", r.name}, {"error", r.error}, {"tolerance", r.tolerance}, {"pass", r.pass()}});
        ok = ok && r.pass();
      }
      summary = ok ? "all gradients match" : "gradient check FAILED";
    } else if (*c_exp) {
      const DatasetManifest m = load_manifest(manifest_path);
      if (record >= m.records.size()) throw UsageError("--record " + std::to_string(record) + " is out of range (" + std::to_string(m.records.size()) + " records)");
      const auto& s = m.records[record].sample;
      if (which == "predicted") {
        if (ckpt.empty()) throw UsageError("--which predicted needs --ckpt");
        result = to_json(union_forward(s.spec1, s.spec2, UnionModel::load(ckpt)), Provenance::Predicted);
      } else {
        result = to_json(which == "part1" ? s.spec1 : which == "part2" ? s.spec2 : s.union_spec, Provenance::Computed);
      }
      summary = which + " spectrum of record " + std::to_string(record);
    }

    if (run.out.empty()) {
      std::cout << result.dump(2) << '\n';
    } else {
      write_file(run.artifact("result.json"), result.dump(2) + '\n');
      json cfg = effective_config(app);
      cfg["jobs"] = run.jobs;
      // where results land is not part of the experiment
      json hashed = cfg;
      hashed.erase("out");
      const json prov = {{"command", std::vector<std::string>(argv, argv + argc)}, {"config", cfg}, {"config_hash", detail::hex64(fnv1a(hashed.dump()))},
                         {"version", SPUN_VERSION}, {"started", started}, {"finished", utc_now()}};
      write_file(run.artifact("run.json"), prov.dump(2) + '\n');
    }
    std::cerr << summary << '\n';

    if (*c_audit && !result["ok"].get<bool>()) throw ValidationFailure("dataset audit found violations");
    if (*c_gc)
      for (const auto& r : result)
        if (!r["pass"].get<bool>()) throw ValidationFailure("gradient check failed for " + r["name"].get<std::string>());
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationFailure& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
