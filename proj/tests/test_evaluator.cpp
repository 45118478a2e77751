#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "coffar/error.hpp"
#include "coffar/evaluator.hpp"
#include "coffar/image_io.hpp"
#include "test_util.hpp"

using namespace coffar;
using coffar::testing::random_pair;
using coffar::testing::small_config;
using coffar::testing::TempDir;

namespace {

constexpr PairLabel S = PairLabel::Same;
constexpr PairLabel D = PairLabel::Different;

ScoreSet hand_set() { return ScoreSet({{0.9, S}, {0.4, S}, {0.6, D}, {0.1, D}}); }

ConfusionCounts recount(const ScoreSet& s, double t) {
  ConfusionCounts c;
  for (const auto& e : s.entries()) {
    const bool accept = e.score >= t;
    const bool same = e.label == S;
    if (accept && same) ++c.tp;
    if (accept && !same) ++c.fp;
    if (!accept && same) ++c.fn;
    if (!accept && !same) ++c.tn;
  }
  return c;
}

ScoreSet random_set(std::mt19937_64& gen, std::size_t n, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<ScoredPair> v(n);
  for (auto& e : v) {
    e.score = coarse ? std::round(u(gen) * 10.0) / 10.0 : u(gen);
    e.label = coin(gen) ? S : D;
  }
  v[0].label = S;
  v[1].label = D;
  return ScoreSet(std::move(v));
}

// Model whose logit layer is zero, so every output is exactly [0.5, 0.5].
Model constant_model() {
  Model m = init_model(small_config(1));
  auto& p = m.parameters();
  p[p.size() - 2].value.fill(0.0);
  p[p.size() - 1].value.fill(0.0);
  return m;
}

}  // namespace

TEST_SUITE("evaluator") {

TEST_CASE("hand set") {
  const ScoreSet s = hand_set();
  CHECK(s.p_same() == 2);
  CHECK(s.p_different() == 2);
  const auto c = confusion_at(s, 0.5);
  CHECK(c == ConfusionCounts{1, 1, 1, 1});
  CHECK(tar(c) == 0.5);
  CHECK(far(c) == 0.5);
  CHECK(accuracy(s, 0.5) == 0.5);
  CHECK(tar_at_far(roc(s), 0.5) == 0.5);
}

TEST_CASE("accept-all and reject-all thresholds") {
  const ScoreSet s = hand_set();
  const auto all = confusion_at(s, 0.0);
  CHECK(all.tp == s.p_same());
  CHECK(all.fp == s.p_different());
  CHECK(tar(all) == 1.0);
  CHECK(far(all) == 1.0);
  const auto none = confusion_at(s, std::nextafter(1.0, 2.0));
  CHECK(none.tp == 0);
  CHECK(none.fp == 0);
  CHECK(tar(none) == 0.0);
  CHECK(far(none) == 0.0);
}

TEST_CASE("tar and far require both populations") {
  const ScoreSet only_same({{0.3, S}, {0.8, S}});
  CHECK_THROWS_AS(far(confusion_at(only_same, 0.5)), Error);
  const ScoreSet only_diff({{0.3, D}});
  try {
    tar(confusion_at(only_diff, 0.5));
    FAIL("expected undefined metric");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UndefinedMetric);
  }
  CHECK_THROWS_AS(ScoreSet({{1.5, S}}), Error);
}

TEST_CASE("boundary convention: score equal to the threshold is accepted") {
  const ScoreSet s({{0.5, S}, {0.5, D}, {0.5, D}, {0.5, S}, {0.5, S}});
  const auto c = confusion_at(s, 0.5);
  CHECK(c.tp == 3);
  CHECK(c.fp == 2);
  CHECK(accuracy(s, 0.5) == 3.0 / 5.0);
}

TEST_CASE("auc: separable, constant, and label swap") {
  const ScoreSet sep({{0.9, S}, {0.8, S}, {0.7, D}, {0.2, D}});
  const auto r = roc(sep);
  CHECK(r.auc == 1.0);
  for (double t : kReportFarTargets) CHECK(tar_at_far(r, t) == 1.0);

  const ScoreSet flat({{0.5, S}, {0.5, D}, {0.5, S}});
  CHECK(roc(flat).auc == 0.5);

  const ScoreSet rejected({{0.2, S}, {0.9, D}});
  CHECK(tar_at_far(roc(rejected), 0.5) == 0.0);

  std::mt19937_64 gen(51);
  for (int trial = 0; trial < 200; ++trial) {
    const ScoreSet s = random_set(gen, 40, trial % 2 == 0);
    CHECK(std::abs(roc(s).auc + roc(s.label_swapped()).auc - 1.0) < 1e-12);
  }
}

TEST_CASE("roc points are monotone and include both sentinels") {
  std::mt19937_64 gen(52);
  const ScoreSet s = random_set(gen, 60, true);
  const auto r = roc(s);
  REQUIRE(r.points.size() >= 2);
  CHECK(r.points.front().tar == 0.0);
  CHECK(r.points.front().far == 0.0);
  CHECK(r.points.back().tar == 1.0);
  CHECK(r.points.back().far == 1.0);
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    CHECK(r.points[i].threshold < r.points[i - 1].threshold);
    CHECK(r.points[i].tar >= r.points[i - 1].tar);
    CHECK(r.points[i].far >= r.points[i - 1].far);
  }
  // Each point matches a direct recount at its threshold.
  for (const auto& p : r.points) {
    const auto c = recount(s, p.threshold);
    CHECK(p.tar == static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
    CHECK(p.far == static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn));
  }
}

TEST_CASE("confusion, tar, far and accuracy agree with a recount") {
  std::mt19937_64 gen(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const ScoreSet s = random_set(gen, 25, trial % 3 == 0);
    const double t = trial % 3 == 0 ? std::round(u(gen) * 10.0) / 10.0 : u(gen);
    const auto c = confusion_at(s, t);
    const auto o = recount(s, t);
    CHECK(c == o);
    CHECK(c.tp + c.fn == s.p_same());
    CHECK(c.fp + c.tn == s.p_different());
    CHECK(accuracy(s, t) == static_cast<double>(o.tp + o.tn) / static_cast<double>(s.size()));
  }
}

TEST_CASE("score_pairs and compute_metrics") {
  const Gallery g = [] {
    SynthOptions o;
    o.n_ids = 3;
    o.imgs_per_id = 3;
    return synth_gallery(o);
  }();
  const auto pairs = generate_symmetric(g, 1).pairs;
  const Model m = constant_model();
  const ScoreSet s = score_pairs(m, pairs);
  REQUIRE(s.size() == pairs.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s.entries()[i].score == 0.5);
    CHECK(s.entries()[i].label == pairs[i].label);
  }
  CHECK(accuracy(s, 0.5) == 0.5);  // all accepted; half are same pairs

  const auto rep = compute_metrics(s);
  CHECK(rep.accuracy_at_half == 0.5);
  CHECK(rep.auc == 0.5);
  REQUIRE(rep.tar_at_far.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(rep.tar_at_far[i].first == kReportFarTargets[i]);

  TempDir dir("metrics");
  write_metrics_report(rep, dir / "m.json");
  write_roc_table(rep.roc, dir / "roc.tsv");
  std::ifstream in(dir / "m.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("accuracy@0.5").get<double>() == 0.5);
  CHECK(j.at("auc").get<double>() == 0.5);
  for (const char* k : {"0.3", "0.1", "0.01", "0.001"}) CHECK(j.at("tar@far").contains(k));
  CHECK(j.at("roc").size() == rep.roc.points.size());
  std::ifstream roc_in(dir / "roc.tsv");
  std::size_t lines = 0;
  for (std::string line; std::getline(roc_in, line);) ++lines;
  CHECK(lines == rep.roc.points.size() + 1);
}

TEST_CASE("heatmap") {
  std::mt19937_64 gen(54);
  const Model m = init_model(ModelConfig::default_config(3));
  for (int i = 0; i < 5; ++i) {
    const Tensor h = heatmap(m, random_pair(gen));
    REQUIRE(h.shape() == std::vector<std::size_t>{20, 40});
    for (double v : h.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  Model zero = m;
  for (auto& p : zero.parameters()) p.value.fill(0.0);
  const Tensor h = heatmap(zero, random_pair(gen));
  for (double v : h.data()) CHECK(v == 0.0);

  TempDir dir("heatmap");
  write_pgm(dir / "h.pgm", heatmap(m, random_pair(gen)));
  const Tensor back = read_pgm(dir / "h.pgm");
  CHECK(back.shape() == std::vector<std::size_t>{20, 40});
}

TEST_CASE("dump_features") {
  const Gallery g = [] {
    SynthOptions o;
    o.n_ids = 2;
    o.imgs_per_id = 3;
    return synth_gallery(o);
  }();
  const auto pairs = generate_symmetric(g, 2).pairs;
  const Model m = init_model(small_config(6));
  TempDir dir("features");
  dump_features(m, pairs, dir / "a.tsv");
  dump_features(m, pairs, dir / "b.tsv");
  std::ifstream a(dir / "a.tsv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(a, line);) lines.push_back(line);
  REQUIRE(lines.size() == pairs.size() + 1);
  CHECK(lines[0].rfind("label\tf0\t", 0) == 0);
  for (const auto& line : lines) {
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), '\t')) + 1;
    CHECK(cols == m.feature_width() + 1);
  }
  CHECK(lines[1].rfind(std::string(to_string(pairs[0].label)) + "\t", 0) == 0);
  std::ifstream b(dir / "b.tsv");
  std::stringstream sa, sb;
  sb << b.rdbuf();
  for (const auto& l : lines) sa << l << '\n';
  CHECK(sa.str() == sb.str());
}

}  // TEST_SUITE
