#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"

#include <spun/downstream/retrieval.hpp>
#include <spun/nn/checkpoint.hpp>

#include <cstdio>
#include <sys/wait.h>

using namespace spun;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "spun_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result spun_run(const std::string& args) {
  const char* bin = std::getenv("SPUN_BIN");
  REQUIRE_MESSAGE(bin, "SPUN_BIN must point at the spun executable");
  const fs::path err = work() / "stderr.txt";
  const std::string cmd = "cd '" + work().string() + "' && '" + bin + "' " + args + " 2>'" + err.string() + "'";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(err);
  return r;
}

json ok_json(const std::string& args) {
  const auto r = spun_run(args);
  INFO(args << "\n" << r.err);
  REQUIRE(r.code == 0);
  const auto at = args.find("--out ");
  if (at == std::string::npos) return json::parse(r.out);
  CHECK(r.out.empty());
  return json::parse(read_file(work() / args.substr(at + 6, args.find(' ', at + 6) - at - 6) / "result.json"));
}

std::string slurp(const fs::path& p) { return read_file(work() / p); }

// family, dataset and a briefly trained union model shared by the cases below
void prepare() {
  static bool done = false;
  if (done) return;
  ok_json("synth --seed 3 --identities 2 --poses 2 --vertices 600 --out fam");
  ok_json("dataset build --family fam/family --full-cover 1 --partial 2 --augment 1 --test-a 0.15 --test-b 0 --jobs 2 --out ds");
  ok_json("train-union --manifest ds/manifest.jsonl --epochs 2 --batch 4 --seed 5 --out tu");
  done = true;
}

}  // namespace

TEST_CASE("spectrum of the unit square") {
  write_file(work() / "square.off", to_off(grid_mesh(41)));
  const auto j = ok_json("spectrum square.off --bc dirichlet --k 5");
  CHECK(j["k"] == 5);
  CHECK(j["bc"] == "dirichlet");
  const auto v = j["values"].get<std::vector<double>>();
  const double pi2 = oracle::pi * oracle::pi;
  const std::vector<double> expect{2 * pi2, 5 * pi2, 5 * pi2, 8 * pi2, 10 * pi2};
  for (int i = 0; i < 5; ++i) CHECK(std::abs(v[i] - expect[i]) <= 0.02 * expect[i]);
}

TEST_CASE("dataset build and audit") {
  prepare();
  const auto built = json::parse(slurp("ds/result.json"));
  CHECK(built["records"] == 12);
  const auto a = ok_json("dataset audit ds/manifest.jsonl");
  CHECK(a["ok"] == true);
  CHECK(a["test_b_leaks"] == 0);

  // a fixed seed reproduces the manifest byte for byte, whatever the job count
  ok_json("dataset build --family fam/family --full-cover 1 --partial 2 --augment 1 --test-a 0.15 --test-b 0 --jobs 1 --out ds2");
  CHECK(slurp("ds2/manifest.jsonl") == slurp("ds/manifest.jsonl"));

  // tampering is caught on load
  std::string text = slurp("ds/manifest.jsonl");
  text[text.rfind("\"pose\":") + 7] ^= 1;
  write_file(work() / "bad.jsonl", text);
  const auto r = spun_run("dataset audit bad.jsonl");
  CHECK(r.code == 2);
  CHECK(r.err.find("Checksum") != std::string::npos);
}

TEST_CASE("training is reproducible and provenance is recorded") {
  prepare();
  ok_json("train-union --manifest ds/manifest.jsonl --epochs 2 --batch 4 --seed 5 --out tu2");
  CHECK(slurp("tu2/union.ckpt") == slurp("tu/union.ckpt"));
  CHECK(slurp("tu2/history.jsonl") == slurp("tu/history.jsonl"));
  const auto run = json::parse(slurp("tu/run.json"));
  for (const char* key : {"command", "config", "config_hash", "version", "started", "finished"}) CHECK(run.contains(key));
  CHECK(run["config"]["train-union.epochs"] == "2");
  CHECK(run["config_hash"] == json::parse(slurp("tu2/run.json"))["config_hash"]);
  std::size_t lines = 0;
  for (char c : slurp("tu/history.jsonl")) lines += c == '\n';
  CHECK(lines == 2);
}

TEST_CASE("config overrides sit between flags and defaults") {
  prepare();
  write_file(work() / "cfg.json", R"({"seed": 9, "overrides": {"epochs": 1, "batch": 6}})");
  ok_json("train-union --manifest ds/manifest.jsonl --config cfg.json --epochs 2 --out cfg_run");
  const auto cfg = json::parse(slurp("cfg_run/run.json"))["config"];
  CHECK(cfg["train-union.epochs"] == "2");
  CHECK(cfg["train-union.batch"] == "6");
  CHECK(cfg["train-union.seed"] == "9");
  CHECK(cfg["train-union.lr"] == "0.0002");

  write_file(work() / "bad_cfg.json", R"({"overrides": {"no-such-flag": 1}})");
  const auto r = spun_run("train-union --manifest ds/manifest.jsonl --config bad_cfg.json");
  CHECK(r.code == 2);
  CHECK(r.err.find("no-such-flag") != std::string::npos);
}

TEST_CASE("union is commutative at the byte level") {
  prepare();
  write_file(work() / "a.json", spun_run("export-spectrum --manifest ds/manifest.jsonl --record 1 --which part1").out);
  write_file(work() / "b.json", spun_run("export-spectrum --manifest ds/manifest.jsonl --record 1 --which part2").out);
  const auto ab = spun_run("union a.json b.json --ckpt tu/union.ckpt");
  const auto ba = spun_run("union b.json a.json --ckpt tu/union.ckpt");
  REQUIRE(ab.code == 0);
  CHECK(ab.out == ba.out);
  const auto j = json::parse(ab.out);
  CHECK(j["provenance"] == "predicted");
  CHECK(j["k"] == 20);
  const auto three = ok_json("union a.json b.json a.json --ckpt tu/union.ckpt");
  CHECK(three["values"].size() == 20);
  CHECK(spun_run("union a.json --ckpt tu/union.ckpt").code == 2);

  const auto pred = ok_json("export-spectrum --manifest ds/manifest.jsonl --record 1 --which predicted --ckpt tu/union.ckpt");
  CHECK(pred["values"] == j["values"]);

  const auto e = ok_json("eval-union --manifest ds/manifest.jsonl --ckpt tu/union.ckpt");
  CHECK(e["count"] == 2);
  CHECK(e["mae"].get<double>() > 0.0);
  CHECK(e["baseline_mae"].get<double>() > 0.0);
}

TEST_CASE("interp") {
  write_file(work() / "p.json", R"({"k": 3, "bc": "dirichlet", "values": [0, 2, 4]})");
  write_file(work() / "q.json", R"({"k": 3, "bc": "dirichlet", "values": [2, 4, 6]})");
  CHECK(ok_json("interp p.json q.json --t 0.5")["values"] == json({1.0, 3.0, 5.0}));
  CHECK(spun_run("interp p.json q.json --t 2").code == 2);
}

TEST_CASE("region training, evaluation and localization") {
  prepare();
  ok_json("train-region --manifest ds/manifest.jsonl --family fam/family --union-ckpt tu/union.ckpt --epochs 2 --batch 8 --out tr");
  const auto e = ok_json("eval-region --manifest ds/manifest.jsonl --family fam/family --ckpt tr/region.ckpt --union-ckpt tu/union.ckpt");
  for (const char* which : {"ground_truth", "predicted"}) {
    CHECK(e[which]["iou"].get<double>() >= 0.0);
    CHECK(e[which]["iou"].get<double>() <= 1.0);
  }
  write_file(work() / "u.json", spun_run("export-spectrum --manifest ds/manifest.jsonl --record 0").out);
  ok_json("localize u.json --ckpt tr/region.ckpt --family fam/family --out loc");
  const auto p = json::parse(slurp("loc/result.json")).get<std::vector<double>>();
  CHECK(p.size() == 642);
  const std::string off = slurp("loc/mask.off");
  CHECK(off.rfind("OFF\n", 0) == 0);
  CHECK(std::get<TriMesh>(load_shape(off)).num_vertices() == 642);

  // a manifest paired with the wrong family is rejected
  ok_json("synth --seed 4 --identities 2 --poses 2 --vertices 600 --out other");
  CHECK(spun_run("eval-region --manifest ds/manifest.jsonl --family other/family --ckpt tr/region.ckpt").code == 2);
}

TEST_CASE("retrieval index") {
  prepare();
  const auto b = ok_json("index build --family fam/family --out idx");
  CHECK(b["size"] == 4);
  write_file(work() / "s0.json", to_json(spectrum(load_mesh_file(work() / "fam/family/id1_pose0.off"), 20, BoundaryCondition::Closed)).dump());
  const auto q = ok_json("index query idx/index.json s0.json --topk 3 --query-id 7");
  CHECK(q["query_id"] == 7);
  CHECK(q["ranked"].size() == 3);
  CHECK(q["ranked"][0]["shape_id"] == 2);
  CHECK(q["ranked"][0]["distance"] == 0.0);

  const auto r = ok_json("retrieve-eval --index idx/index.json --manifest ds/manifest.jsonl --ckpt tu/union.ckpt --split train");
  CHECK(r["exact"]["top1"] == 1.0);
  CHECK(r["predicted"]["top10"] == 1.0);
}

TEST_CASE("gradcheck exits zero when every primitive passes") {
  const auto r = spun_run("gradcheck");
  CHECK(r.code == 0);
  for (const auto& e : json::parse(r.out)) CHECK(e["pass"] == true);
}

TEST_CASE("exit codes") {
  const auto bad_flag = spun_run("gradcheck --frobnicate 3");
  CHECK(bad_flag.code == 2);
  CHECK(bad_flag.err.find("frobnicate") != std::string::npos);
  CHECK(spun_run("spectrum missing.off").code == 2);
  CHECK(spun_run("").code == 2);
  write_file(work() / "broken.off", "OFF\n3 1 0\n0 0 0\n");
  CHECK(spun_run("spectrum broken.off").code == 2);
  CHECK(spun_run("eval-union --manifest broken.off --ckpt broken.off").code == 2);
  CHECK(spun_run("gradcheck --jobs 0").code == 2);
  CHECK(spun_run("synth --out /proc/spun_cannot_write").code == 1);
  CHECK(spun_run("--help").code == 0);
}
