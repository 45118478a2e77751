#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "coffar/image_io.hpp"
#include "coffar/pair_data.hpp"
#include "test_util.hpp"

using coffar::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

RunResult run(const std::string& args, const TempDir& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = quote(COFFAR_BIN) + " " + args + " >" + quote(out.string()) + " 2>" +
                          quote(err.string());
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string small_model_config(const std::string& extra_train = "") {
  return R"({"seed": 4, "model": {"conv": [{"out_channels": 2, "kernel_h": 3, "kernel_w": 3, "pool": true},
                                  {"out_channels": 3, "kernel_h": 3, "kernel_w": 3, "pool": true}],
                         "fc_dims": [8]},
            "train": {"batch_size": 16)" +
         extra_train + "}}";
}

std::size_t count_files(const fs::path& root) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth writes a reproducible gallery") {
  TempDir dir("cli_synth");
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run("synth --ids 10 --imgs 10 --seed 3 --out " + quote(a), dir).code == 0);
  REQUIRE(run("synth --ids 10 --imgs 10 --seed 3 --out " + quote(b), dir).code == 0);
  std::size_t subdirs = 0, pgms = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (!e.is_directory()) continue;
    ++subdirs;
    for (const auto& f : fs::directory_iterator(e.path())) {
      ++pgms;
      const auto rel = fs::relative(f.path(), a);
      CHECK(slurp(f.path()) == slurp(fs::path(b) / rel));
    }
  }
  CHECK(subdirs == 10);
  CHECK(pgms == 100);
  CHECK(fs::exists(fs::path(a) / "synth_config.json"));

  const auto bad = run("synth --ids 3 --imgs 3 --noise 0.9 --out " + quote((dir / "c").string()), dir);
  CHECK(bad.code == 2);
  CHECK_FALSE(bad.err.empty());
  CHECK(run("frobnicate", dir).code == 2);
  CHECK(run("synth --ids 3", dir).code == 2);
}

TEST_CASE("genpairs symmetric, exhaustive, and single-identity failure") {
  TempDir dir("cli_gen");
  const std::string g = (dir / "g").string();
  REQUIRE(run("synth --ids 3 --imgs 5 --seed 1 --out " + quote(g), dir).code == 0);

  const auto sym = run("genpairs --gallery " + quote(g) + " --mode symmetric --seed 2 --out " +
                           quote((dir / "sym.jsonl").string()),
                       dir);
  REQUIRE(sym.code == 0);
  CHECK(sym.out.find("same=60 diff=60") != std::string::npos);
  CHECK(sym.out.find("N_s=60") != std::string::npos);
  CHECK(coffar::read_pair_manifest(dir / "sym.jsonl").size() == 120);
  CHECK(fs::exists(dir / "sym.jsonl.config.json"));

  const auto sym2 = run("genpairs --gallery " + quote(g) + " --mode symmetric --seed 2 --out " +
                            quote((dir / "sym2.jsonl").string()),
                        dir);
  REQUIRE(sym2.code == 0);
  CHECK(slurp(dir / "sym.jsonl") == slurp(dir / "sym2.jsonl"));

  const auto ex = run("genpairs --gallery " + quote(g) + " --mode exhaustive --count 100 --seed 2 --out " +
                          quote((dir / "ex.jsonl").string()),
                      dir);
  REQUIRE(ex.code == 0);
  const auto recs = coffar::read_pair_manifest(dir / "ex.jsonl");
  REQUIRE(recs.size() == 100);
  std::size_t same = 0;
  for (const auto& r : recs) same += r.label == coffar::PairLabel::Same;
  CHECK(same == 50);

  // One identity only.
  const fs::path single = dir / "single" / "only";
  fs::create_directories(single);
  for (int k = 0; k < 3; ++k)
    coffar::write_pgm(single / ("i" + std::to_string(k) + ".pgm"), coffar::Tensor::matrix(20, 20, 0.1 * k));
  const auto one = run("genpairs --gallery " + quote((dir / "single").string()) +
                           " --mode symmetric --out " + quote((dir / "one.jsonl").string()),
                       dir);
  CHECK(one.code == 2);
  CHECK(one.err.find("single-identity") != std::string::npos);

  const auto missing = run("genpairs --gallery " + quote((dir / "nope").string()) +
                               " --mode symmetric --out " + quote((dir / "x.jsonl").string()),
                           dir);
  CHECK(missing.code != 0);
}

TEST_CASE("train: determinism, lr = 0, config errors, resume, config echo") {
  TempDir dir("cli_train");
  const std::string g = (dir / "g").string();
  REQUIRE(run("synth --ids 3 --imgs 4 --seed 5 --out " + quote(g), dir).code == 0);
  std::ofstream(dir / "cfg.json") << small_model_config();
  const std::string cfg = quote((dir / "cfg.json").string());
  const std::string base = "train --gallery " + quote(g) + " --config " + cfg + " --epochs 3";

  REQUIRE(run(base + " --checkpoint-every 5 --out " + quote((dir / "a").string()), dir).code == 0);
  REQUIRE(run(base + " --checkpoint-every 5 --out " + quote((dir / "b").string()), dir).code == 0);
  CHECK(slurp(dir / "a" / "history.jsonl") == slurp(dir / "b" / "history.jsonl"));
  CHECK(slurp(dir / "a" / "final.coffar.json") == slurp(dir / "b" / "final.coffar.json"));
  CHECK(fs::exists(dir / "a" / "resolved_config.json"));

  // 72 pairs, batch 16: 5 steps per epoch.
  std::ifstream hist(dir / "a" / "history.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(hist, l);) ++lines;
  CHECK(lines == 15);

  // Re-feeding the echoed config reproduces the run.
  REQUIRE(run("train --config " + quote((dir / "a" / "resolved_config.json").string()) + " --out " +
                  quote((dir / "echo").string()),
              dir)
              .code == 0);
  CHECK(slurp(dir / "echo" / "history.jsonl") == slurp(dir / "a" / "history.jsonl"));
  CHECK(slurp(dir / "echo" / "final.coffar.json") == slurp(dir / "a" / "final.coffar.json"));

  // Resume from step 5 and finish in a separate directory.
  REQUIRE(run(base + " --resume " + quote((dir / "a" / "ckpt_step_000005.coffar.json").string()) +
                  " --out " + quote((dir / "r").string()),
              dir)
              .code == 0);
  CHECK(slurp(dir / "r" / "final.coffar.json") == slurp(dir / "a" / "final.coffar.json"));

  // lr = 0: first and last checkpoint parameters are identical.
  REQUIRE(run(base + " --lr 0 --checkpoint-every 1 --out " + quote((dir / "z").string()), dir).code == 0);
  const auto first = nlohmann::json::parse(slurp(dir / "z" / "ckpt_step_000001.coffar.json"));
  const auto last = nlohmann::json::parse(slurp(dir / "z" / "final.coffar.json"));
  CHECK(first.at("parameters") == last.at("parameters"));

  // Unknown key in the config file.
  std::ofstream(dir / "bad.json") << R"({"train": {"learning_rat": 0.1}})";
  const auto bad = run("train --gallery " + quote(g) + " --config " + quote((dir / "bad.json").string()) +
                           " --out " + quote((dir / "bad").string()),
                       dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("learning_rat") != std::string::npos);

  std::ofstream(dir / "syntax.json") << "{\n  \"seed\": 1,\n  oops\n}";
  const auto syntax = run("train --gallery " + quote(g) + " --config " +
                              quote((dir / "syntax.json").string()) + " --out " +
                              quote((dir / "syn").string()),
                          dir);
  CHECK(syntax.code == 2);
  CHECK(syntax.err.find("line 3") != std::string::npos);

  // Stream mode.
  REQUIRE(run("train --gallery " + quote(g) + " --config " + cfg + " --stream --steps 6 --out " +
                  quote((dir / "s").string()),
              dir)
              .code == 0);
  CHECK(run("train --gallery " + quote(g) + " --stream --pairs x --out " + quote((dir / "t").string()), dir)
            .code == 2);
}

TEST_CASE("eval: report, outputs, determinism, and missing checkpoint") {
  TempDir dir("cli_eval");
  const std::string g = (dir / "g").string();
  REQUIRE(run("synth --ids 4 --imgs 4 --seed 2 --out " + quote(g), dir).code == 0);
  REQUIRE(run("genpairs --gallery " + quote(g) + " --mode symmetric --seed 1 --out " +
                  quote((dir / "p.jsonl").string()),
              dir)
              .code == 0);
  REQUIRE(run("train --gallery " + quote(g) + " --pairs " + quote((dir / "p.jsonl").string()) +
                  " --seed 3 --batch 16 --epochs 40 --out " + quote((dir / "m").string()),
              dir)
              .code == 0);
  const std::string ev = "eval --checkpoint " + quote((dir / "m" / "final.coffar.json").string()) +
                         " --gallery " + quote(g) + " --pairs " + quote((dir / "p.jsonl").string()) +
                         " --heatmap-sample 3 --dump-features --out ";
  const auto r1 = run(ev + quote((dir / "e1").string()), dir);
  REQUIRE(r1.code == 0);
  REQUIRE(run(ev + quote((dir / "e2").string()), dir).code == 0);

  const auto report = nlohmann::json::parse(slurp(dir / "e1" / "metrics.json"));
  for (const char* k : {"0.3", "0.1", "0.01", "0.001"}) CHECK(report.at("tar@far").contains(k));
  CHECK(report.at("auc").get<double>() == 1.0);
  CHECK(report.contains("accuracy@0.5"));
  for (const char* f : {"metrics.json", "roc.tsv", "features.tsv", "heatmap_000.pgm", "heatmap_002.pgm"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "e1" / f) == slurp(dir / "e2" / f));
  }
  CHECK(count_files(dir / "e1") == 7);  // 3 heatmaps, metrics, roc, features, config echo
  const auto hm = coffar::read_pgm(dir / "e1" / "heatmap_000.pgm");
  CHECK(hm.shape() == std::vector<std::size_t>{20, 40});

  const auto missing = run("eval --checkpoint " + quote((dir / "absent.json").string()) + " --pairs " +
                               quote((dir / "p.jsonl").string()) + " --gallery " + quote(g) + " --out " +
                               quote((dir / "e3").string()),
                           dir);
  CHECK(missing.code == 2);
  CHECK(missing.err.find("checkpoint") != std::string::npos);
}

}  // TEST_SUITE
