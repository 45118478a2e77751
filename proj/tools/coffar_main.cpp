// coffar: synth | genpairs | train | eval
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "coffar/error.hpp"
#include "coffar/evaluator.hpp"
#include "coffar/image_io.hpp"
#include "coffar/json_io.hpp"
#include "coffar/log.hpp"
#include "coffar/pair_data.hpp"
#include "coffar/rng.hpp"
#include "coffar/trainer.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace coffar;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Io:
    case ErrorKind::Divergence:
      return kExitRuntime;
    default:
      return kExitUsage;
  }
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) {
    throw Error(ErrorKind::InvalidArgument, std::string(what) + " not found: " + p.string());
  }
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + p.string() + ": " + ec.message());
}

// --------------------------------------------------------------------------- synth

struct SynthArgs {
  std::size_t ids = 10;
  std::size_t imgs = 10;
  double noise = 0.05;
  int max_shift = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  if (!(a.noise >= 0.0 && a.noise <= 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "--noise must be in [0, 0.5]");
  }
  SynthOptions o{a.ids, a.imgs, a.noise, a.seed, a.max_shift};
  const Gallery g = synth_gallery(o);
  save_gallery(g, a.out);
  const Json echo{{"command", "synth"},
                  {"ids", a.ids},
                  {"imgs", a.imgs},
                  {"noise", a.noise},
                  {"max_shift", a.max_shift},
                  {"seed", a.seed}};
  write_text_file(fs::path(a.out) / "synth_config.json", echo.dump(1) + "\n");
  std::cout << "wrote " << a.ids * a.imgs << " images for " << a.ids << " identities to "
            << a.out << "\n";
  return 0;
}

// --------------------------------------------------------------------------- genpairs

struct GenArgs {
  std::string gallery;
  std::string mode = "symmetric";
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string out;
  bool embed = false;
  bool dedupe = false;
  double holdout = 0.0;
  std::string holdout_out;
};

int run_genpairs(const GenArgs& a) {
  const Gallery g = load_gallery(a.gallery);
  std::vector<PairSample> pairs;
  DatasetStats stats = gallery_stats(g);
  if (a.mode == "symmetric") {
    auto ds = generate_symmetric(g, derive_seed(a.seed, "pairs"), {a.dedupe});
    pairs = std::move(ds.pairs);
    stats = ds.stats;
  } else {
    ExhaustiveStream stream(g, derive_seed(a.seed, "stream"));
    for (std::size_t i = 0; i < a.count; ++i) {
      pairs.push_back(stream.next());
      (pairs.back().label == PairLabel::Same ? stats.n_same : stats.n_diff)++;
    }
  }

  const ManifestOptions mo{a.embed};
  if (a.holdout > 0.0) {
    if (a.holdout_out.empty()) {
      throw Error(ErrorKind::InvalidArgument, "--holdout needs --holdout-out");
    }
    auto split = split_by_provenance(std::move(pairs), a.holdout, derive_seed(a.seed, "split"));
    write_pair_manifest(split.train, a.out, mo);
    write_pair_manifest(split.heldout, a.holdout_out, mo);
    std::cout << "train=" << split.train.size() << " heldout=" << split.heldout.size() << "\n";
  } else {
    write_pair_manifest(pairs, a.out, mo);
  }
  const Json echo{{"command", "genpairs"}, {"gallery", a.gallery}, {"mode", a.mode},
                  {"count", a.count},      {"seed", a.seed},       {"embed_images", a.embed},
                  {"dedupe", a.dedupe},    {"holdout", a.holdout}, {"holdout_out", a.holdout_out}};
  write_text_file(a.out + ".config.json", echo.dump(1) + "\n");
  std::cout << stats.summary() << "\n";
  return 0;
}

// --------------------------------------------------------------------------- train

struct TrainArgs {
  std::string gallery;
  std::string pairs;
  bool stream = false;
  std::string config;
  std::string out;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch, epochs, steps, checkpoint_every;
};

cli::RunConfig resolve_train_config(const TrainArgs& a) {
  Json j = Json::object();
  if (!a.config.empty()) {
    require_exists(a.config, "config file");
    j = read_json_file(a.config, ErrorKind::Config);
    if (!j.is_object()) throw Error(ErrorKind::Config, a.config + ": expected a JSON object");
  }
  // Flags override file values; derived seeds follow the overridden global seed.
  if (a.seed) j["seed"] = *a.seed;
  auto set_train = [&](const char* key, const Json& v) {
    if (!j.contains("train")) j["train"] = Json::object();
    j["train"][key] = v;
  };
  if (a.lr) set_train("learning_rate", *a.lr);
  if (a.batch) set_train("batch_size", *a.batch);
  if (a.epochs) {
    set_train("epochs", *a.epochs);
    set_train("total_steps", nullptr);
  }
  if (a.steps) {
    set_train("total_steps", *a.steps);
    set_train("epochs", nullptr);
  }
  if (a.checkpoint_every) set_train("checkpoint_every", *a.checkpoint_every);
  auto set_data = [&](const char* key, const Json& v) {
    if (!j.contains("data")) j["data"] = Json::object();
    j["data"][key] = v;
  };
  if (!a.gallery.empty()) set_data("gallery", a.gallery);
  if (!a.pairs.empty()) set_data("pairs", a.pairs);
  if (a.stream) set_data("stream", true);

  cli::RunConfig rc = cli::parse_run_config(j);
  if (rc.stream && rc.pairs) {
    throw Error(ErrorKind::Config, "--stream and --pairs are mutually exclusive");
  }
  auto& t = rc.train;
  if (!t.epochs && !t.total_steps) {
    if (rc.stream) t.total_steps = 1000;
    else t.epochs = 15;
  }
  validate(t);
  return rc;
}

int run_train(const TrainArgs& a) {
  const cli::RunConfig rc = resolve_train_config(a);
  if (rc.gallery.empty() && !rc.pairs) {
    throw Error(ErrorKind::Config, "a gallery (--gallery) or a pair manifest is required");
  }
  std::optional<Gallery> gallery;
  if (!rc.gallery.empty()) gallery = load_gallery(rc.gallery);

  std::unique_ptr<PairSource> source;
  if (rc.stream) {
    if (!gallery) throw Error(ErrorKind::Config, "--stream needs --gallery");
    source = std::make_unique<ExhaustiveSource>(*gallery, rc.train.seed);
  } else {
    std::vector<PairSample> pairs;
    if (rc.pairs) {
      require_exists(*rc.pairs, "pair manifest");
      const auto records = read_pair_manifest(*rc.pairs);
      pairs = resolve_pairs(records, gallery ? &*gallery : nullptr);
    } else {
      pairs = generate_symmetric(*gallery, rc.pairs_seed).pairs;
    }
    source = std::make_unique<SymmetricSource>(std::move(pairs), rc.train.seed);
  }

  std::optional<Model> model;
  TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) {
    require_exists(a.resume, "checkpoint");
    auto ck = load_checkpoint(a.resume);
    if (!(ck.model.config() == rc.model)) {
      throw Error(ErrorKind::Config, "resume checkpoint architecture differs from the run config");
    }
    model = std::move(ck.model);
    const fs::path side = sidecar_path(a.resume);
    require_exists(side, "checkpoint sidecar");
    opts.resume = load_train_state(side);
  } else {
    model = init_model(rc.model);
  }

  ensure_dir(a.out);
  write_text_file(fs::path(a.out) / "resolved_config.json",
                  cli::run_config_to_json(rc).dump(1) + "\n");
  const auto result = train(*model, *source, rc.train, opts);
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::printf("steps=%zu loss=%.6f entropy=%.6f batch_accuracy=%.4f\n", last.step, last.loss,
                last.entropy, last.batch_accuracy);
  } else {
    std::printf("steps=%zu (nothing to do)\n", result.state.step);
  }
  return 0;
}

// --------------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string gallery;
  std::string pairs;
  std::string out;
  std::size_t heatmap_sample = 0;
  bool dump_features = false;
};

int run_eval(const EvalArgs& a) {
  require_exists(a.checkpoint, "checkpoint");
  require_exists(a.pairs, "pair manifest");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  std::optional<Gallery> gallery;
  if (!a.gallery.empty()) gallery = load_gallery(a.gallery);
  const auto records = read_pair_manifest(a.pairs);
  const auto pairs = resolve_pairs(records, gallery ? &*gallery : nullptr);
  if (pairs.empty()) throw Error(ErrorKind::InvalidArgument, "pair manifest is empty");

  ensure_dir(a.out);
  const fs::path out(a.out);
  const ScoreSet scores = score_pairs(ck.model, pairs);
  const MetricsReport report = compute_metrics(scores);
  write_metrics_report(report, out / "metrics.json");
  write_roc_table(report.roc, out / "roc.tsv");
  for (std::size_t k = 0; k < std::min(a.heatmap_sample, pairs.size()); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "heatmap_%03zu.pgm", k);
    write_pgm(out / name, heatmap(ck.model, pairs[k].image));
  }
  if (a.dump_features) dump_features(ck.model, pairs, out / "features.tsv");
  const Json echo{{"command", "eval"},       {"checkpoint", a.checkpoint},
                  {"gallery", a.gallery},    {"pairs", a.pairs},
                  {"heatmap_sample", a.heatmap_sample}, {"dump_features", a.dump_features}};
  write_text_file(out / "eval_config.json", echo.dump(1) + "\n");

  std::printf("pairs=%zu accuracy@0.5=%.4f auc=%.4f", pairs.size(), report.accuracy_at_half,
              report.auc);
  for (const auto& [f, t] : report.tar_at_far) std::printf(" tar@far=%g:%.4f", f, t);
  std::printf("\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging_from_env();
  CLI::App app{"Correlation-feature pair verification for low-resolution faces"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic gallery");
  synth->add_option("--ids", sa.ids, "Number of identities")->check(CLI::Range(1, 1 << 20));
  synth->add_option("--imgs", sa.imgs, "Images per identity")->check(CLI::Range(1, 1 << 20));
  synth->add_option("--noise", sa.noise, "Uniform noise half-width in [0,0.5]");
  synth->add_option("--max-shift", sa.max_shift, "Max translation in pixels");
  synth->add_option("--seed", sa.seed, "Seed");
  synth->add_option("--out", sa.out, "Output directory")->required();

  GenArgs ga;
  auto* gen = app.add_subcommand("genpairs", "Generate a pair manifest from a gallery");
  gen->add_option("--gallery", ga.gallery, "Gallery directory")->required();
  gen->add_option("--mode", ga.mode, "symmetric | exhaustive")
      ->check(CLI::IsMember({"symmetric", "exhaustive"}));
  gen->add_option("--count", ga.count, "Samples to draw (exhaustive mode)");
  gen->add_option("--seed", ga.seed, "Seed");
  gen->add_option("--out", ga.out, "Manifest path")->required();
  gen->add_flag("--embed-images", ga.embed, "Store pixel data inline");
  gen->add_flag("--dedupe", ga.dedupe, "Reject duplicate different pairs (symmetric)");
  gen->add_option("--holdout", ga.holdout, "Held-out fraction split by provenance")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--holdout-out", ga.holdout_out, "Manifest path for held-out pairs");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a correlation filter");
  tr->add_option("--gallery", ta.gallery, "Gallery directory");
  auto* pairs_opt = tr->add_option("--pairs", ta.pairs, "Pair manifest (symmetric mode)");
  tr->add_flag("--stream", ta.stream, "Train on the exhaustive stream")->excludes(pairs_opt);
  tr->add_option("--config", ta.config, "Run config (JSON)");
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from");
  tr->add_option("--seed", ta.seed, "Global seed (overrides config)");
  tr->add_option("--lr", ta.lr, "Learning rate (overrides config)");
  tr->add_option("--batch", ta.batch, "Batch size (overrides config)");
  tr->add_option("--epochs", ta.epochs, "Epochs, symmetric mode (overrides config)");
  tr->add_option("--steps", ta.steps, "Total steps, stream mode (overrides config)");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval in steps");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score pairs and write verification metrics");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint")->required();
  ev->add_option("--gallery", ea.gallery, "Gallery directory");
  ev->add_option("--pairs", ea.pairs, "Pair manifest")->required();
  ev->add_option("--out", ea.out, "Output directory")->required();
  ev->add_option("--heatmap-sample", ea.heatmap_sample, "Write heatmaps for the first k pairs");
  ev->add_flag("--dump-features", ea.dump_features, "Write penultimate features as TSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*gen) return run_genpairs(ga);
    if (*tr) return run_train(ta);
    if (*ev) return run_eval(ea);
  } catch (const Error& e) {
    std::fprintf(stderr, "coffar: %s error: %s\n", std::string(to_string(e.kind())).c_str(),
                 e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "coffar: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
