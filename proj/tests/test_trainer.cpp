#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "coffar/error.hpp"
#include "coffar/pair_data.hpp"
#include "coffar/trainer.hpp"
#include "test_util.hpp"

using namespace coffar;
using coffar::testing::small_config;
using coffar::testing::TempDir;

namespace {

Gallery make_gallery(std::size_t n, std::size_t x, std::uint64_t seed) {
  SynthOptions o;
  o.n_ids = n;
  o.imgs_per_id = x;
  o.noise_level = 0.05;
  o.seed = seed;
  return synth_gallery(o);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

double window_mean(const TrainHistory& h, std::size_t step, std::size_t width) {
  double s = 0.0;
  for (std::size_t i = step - width; i < step; ++i) s += h[i].loss;
  return s / static_cast<double>(width);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("lr = 0 leaves parameters unchanged") {
  const Gallery g = make_gallery(3, 4, 1);
  Model model = init_model(small_config(1));
  const Model before = model;
  SymmetricSource src(generate_symmetric(g, 2).pairs, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  const auto r = train(model, src, cfg);
  CHECK(model == before);
  CHECK(r.history.size() == 2 * ((72 + 7) / 8));
}

TEST_CASE("training is deterministic") {
  const Gallery g = make_gallery(3, 4, 2);
  const auto pairs = generate_symmetric(g, 5).pairs;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  Model a = init_model(small_config(4)), b = init_model(small_config(4));
  SymmetricSource sa(pairs, 6), sb(pairs, 6);
  const auto ra = train(a, sa, cfg);
  const auto rb = train(b, sb, cfg);
  CHECK(ra.history == rb.history);
  CHECK(a == b);

  Model c = init_model(small_config(4));
  SymmetricSource sc(pairs, 7);
  const auto rc = train(c, sc, cfg);
  CHECK_FALSE(rc.history == ra.history);
}

TEST_CASE("history invariants and file output") {
  TempDir dir("history");
  const Gallery g = make_gallery(4, 3, 3);
  Model model = init_model(small_config(5));
  ExhaustiveSource src(g, 8);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.total_steps = 25;
  const auto r = train(model, src, cfg, {dir.path(), std::nullopt});
  REQUIRE(r.history.size() == 25);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    const auto& h = r.history[i];
    CHECK(h.step == i + 1);
    CHECK(h.loss >= 0.0);
    CHECK(h.entropy >= 0.0);
    CHECK(h.entropy <= std::log(2.0) + 1e-12);
    CHECK(h.batch_accuracy >= 0.0);
    CHECK(h.batch_accuracy <= 1.0);
  }
  const auto lines = read_lines(dir / "history.jsonl");
  REQUIRE(lines.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(lines[i] == history_line(r.history[i]));
  CHECK(std::filesystem::exists(dir / "final.coffar.json"));
  CHECK(std::filesystem::exists(dir / "final.rng.json"));
  CHECK(load_checkpoint(dir / "final.coffar.json").model == model);
}

TEST_CASE("config validation and mode mismatch") {
  const Gallery g = make_gallery(3, 3, 4);
  Model model = init_model(small_config(0));
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(validate(cfg), Error);

  cfg = TrainConfig{};
  cfg.total_steps = 3;  // symmetric mode needs epochs
  SymmetricSource s(generate_symmetric(g, 0).pairs, 0);
  try {
    train(model, s, cfg);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  cfg = TrainConfig{};
  cfg.epochs = 1;  // stream mode needs a step count
  ExhaustiveSource e(g, 0);
  CHECK_THROWS_AS(train(model, e, cfg), Error);
  CHECK_THROWS_AS(SymmetricSource({}, 0), Error);
}

TEST_CASE("divergence is reported") {
  const Gallery g = make_gallery(3, 3, 5);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.total_steps = 5;

  SUBCASE("parameter overflow") {
    Model model = init_model(small_config(2));
    // Tied, near-maximal logit biases; the first (same) sample pushes one past the range.
    model.parameters().back().value.fill(1.5e308);
    cfg.learning_rate = 1e308;
    ExhaustiveSource src(g, 1);
    try {
      train(model, src, cfg);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Divergence);
    }
  }
  SUBCASE("non-finite activations") {
    Model model = init_model(small_config(2));
    for (auto& p : model.parameters())
      if (!p.name.ends_with(".bias")) p.value.fill(1e200);
    ExhaustiveSource src(g, 1);
    try {
      train(model, src, cfg);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Divergence);
    }
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const Gallery g = make_gallery(3, 4, 6);
  const auto pairs = generate_symmetric(g, 9).pairs;

  for (const bool stream : {false, true}) {
    CAPTURE(stream);
    TempDir full("resume_full"), part("resume_part");
    TrainConfig cfg;
    cfg.batch_size = 10;
    cfg.checkpoint_every = 7;
    if (stream) cfg.total_steps = 20;
    else cfg.epochs = 3;  // 72 pairs -> 8 steps per epoch, 24 in total
    cfg.loss_kind = LossKind::CrossEntropyPlusCenter;
    cfg.center_weight = 0.01;

    const auto make_source = [&]() -> std::unique_ptr<PairSource> {
      if (stream) return std::make_unique<ExhaustiveSource>(g, 3);
      return std::make_unique<SymmetricSource>(pairs, 3);
    };
    Model a = init_model(small_config(8));
    auto sa = make_source();
    const auto ra = train(a, *sa, cfg, {full.path(), std::nullopt});

    const auto ckpt = full / "ckpt_step_000014.coffar.json";
    REQUIRE(std::filesystem::exists(ckpt));
    Model b = load_checkpoint(ckpt).model;
    const TrainState st = load_train_state(sidecar_path(ckpt));
    CHECK(st.step == 14);
    auto sb = make_source();
    const auto rb = train(b, *sb, cfg, {part.path(), st});

    CHECK(a == b);
    REQUIRE(rb.history.size() == ra.history.size() - 14);
    for (std::size_t i = 0; i < rb.history.size(); ++i) CHECK(rb.history[i] == ra.history[14 + i]);
    CHECK(read_file(full / "final.coffar.json") == read_file(part / "final.coffar.json"));
    CHECK(read_file(full / "final.rng.json") == read_file(part / "final.rng.json"));
  }
}

TEST_CASE("loss trends down early on the synthetic benchmark") {
  const Gallery g = make_gallery(10, 10, 7);
  Model model = init_model(ModelConfig::default_config(derive_seed(7, "model")));
  SymmetricSource src(generate_symmetric(g, derive_seed(7, "pairs")).pairs, derive_seed(7, "shuffle"));
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train(model, src, cfg);
  REQUIRE(r.history.size() >= 50);
  CHECK(window_mean(r.history, 50, 5) < window_mean(r.history, 5, 5));
}

TEST_CASE("evaluate_epoch_entropy") {
  const Model zero(ModelConfig::default_config(0));
  std::vector<PairSample> pairs(3);
  for (auto& p : pairs) p.image = Tensor::matrix(kPairRows, kPairCols);
  CHECK(evaluate_epoch_entropy(zero, pairs) == std::log(2.0));

  const Gallery g = make_gallery(2, 3, 8);
  const Model m = init_model(small_config(3));
  const auto ds = generate_symmetric(g, 1);
  const std::span<const PairSample> one(ds.pairs.data(), 1);
  CHECK(evaluate_epoch_entropy(m, one) == entropy(m.forward(ds.pairs[0].image)));
  CHECK_THROWS_AS(evaluate_epoch_entropy(m, std::span<const PairSample>()), Error);
}

TEST_CASE("train state sidecar round trip") {
  TempDir dir("state");
  TrainState st;
  st.step = 12;
  st.source.kind = "symmetric";
  st.source.rng = Rng(5).state();
  st.source.cursor = 3;
  st.source.epoch = 2;
  st.centers = {{0.1, 0.2}, {-1.0 / 3.0, 4.0}};
  save_train_state(st, dir / "s.json");
  const TrainState back = load_train_state(dir / "s.json");
  CHECK(back.step == st.step);
  CHECK(back.source.kind == st.source.kind);
  CHECK(back.source.rng == st.source.rng);
  CHECK(back.source.cursor == 3);
  CHECK(back.source.epoch == 2);
  CHECK(back.centers == st.centers);
  CHECK(sidecar_path("out/final.coffar.json") == std::filesystem::path("out/final.rng.json"));
}

TEST_CASE("full synthetic training run") {
  // 10 ids x 10 images, default model, lr 0.05, batch 32, 15 epochs.
  const Gallery g = make_gallery(10, 10, 7);
  Model model = init_model(ModelConfig::default_config(derive_seed(7, "model")));
  const auto pairs = generate_symmetric(g, derive_seed(7, "pairs")).pairs;
  SymmetricSource src(pairs, derive_seed(7, "shuffle"));
  TrainConfig cfg;
  cfg.epochs = 15;
  const auto r = train(model, src, cfg);
  REQUIRE_FALSE(r.history.empty());
  CHECK(r.history.back().batch_accuracy >= 0.95);
  CHECK(evaluate_epoch_entropy(model, pairs) < 0.2);

  // An identical pair scores higher than a cross-identity pair of the same face.
  const Tensor& face = g[0].images[0];
  const double same = model.forward(concat_pair(face, face)).relevant();
  const double scrambled = model.forward(concat_pair(face, g[5].images[0])).relevant();
  CHECK(same > scrambled);
  Tensor shuffled = face;
  Rng rng(3);
  rng.shuffle(shuffled.data());
  CHECK(same > model.forward(concat_pair(face, shuffled)).relevant());
}

}  // TEST_SUITE
