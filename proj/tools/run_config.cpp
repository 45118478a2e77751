#include "run_config.hpp"

#include "coffar/error.hpp"
#include "coffar/rng.hpp"

namespace coffar::cli {

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorKind::Config, where + ": " + what);
}

std::uint64_t get_uint(const Json& j, const std::string& where) {
  if (!j.is_number_unsigned()) bad(where, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

double get_real(const Json& j, const std::string& where) {
  if (!j.is_number()) bad(where, "expected a number");
  return j.get<double>();
}

}  // namespace

RunConfig defaults_for_seed(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.model = ModelConfig::default_config(derive_seed(seed, "model"));
  c.train.seed = derive_seed(seed, "shuffle");
  c.pairs_seed = derive_seed(seed, "pairs");
  return c;
}

RunConfig parse_run_config(const Json& j) {
  reject_unknown_keys(j, {"seed", "model", "train", "data"}, "config");
  const std::uint64_t seed = j.contains("seed") ? get_uint(j["seed"], "config.seed") : 0;
  RunConfig c = defaults_for_seed(seed);

  if (j.contains("model")) {
    Json m = j["model"];
    if (m.is_object() && !m.contains("seed")) m["seed"] = c.model.seed;
    c.model = model_config_from_json(m, "config.model");
  }

  if (j.contains("train")) {
    const Json& t = j["train"];
    reject_unknown_keys(t,
                        {"learning_rate", "batch_size", "epochs", "total_steps", "loss",
                         "center_weight", "center_alpha", "checkpoint_every", "seed"},
                        "config.train");
    auto& tc = c.train;
    if (t.contains("learning_rate")) tc.learning_rate = get_real(t["learning_rate"], "config.train.learning_rate");
    if (t.contains("batch_size")) tc.batch_size = get_uint(t["batch_size"], "config.train.batch_size");
    if (t.contains("epochs") && !t["epochs"].is_null()) tc.epochs = get_uint(t["epochs"], "config.train.epochs");
    if (t.contains("total_steps") && !t["total_steps"].is_null()) {
      tc.total_steps = get_uint(t["total_steps"], "config.train.total_steps");
    }
    if (t.contains("loss")) {
      const auto kind = t["loss"].is_string() ? t["loss"].get<std::string>() : "";
      if (kind == "cross_entropy") tc.loss_kind = LossKind::CrossEntropy;
      else if (kind == "cross_entropy_plus_center") tc.loss_kind = LossKind::CrossEntropyPlusCenter;
      else bad("config.train.loss", "expected \"cross_entropy\" or \"cross_entropy_plus_center\"");
    }
    if (t.contains("center_weight")) tc.center_weight = get_real(t["center_weight"], "config.train.center_weight");
    if (t.contains("center_alpha")) tc.center_alpha = get_real(t["center_alpha"], "config.train.center_alpha");
    if (t.contains("checkpoint_every")) {
      tc.checkpoint_every = get_uint(t["checkpoint_every"], "config.train.checkpoint_every");
    }
    if (t.contains("seed")) tc.seed = get_uint(t["seed"], "config.train.seed");
  }

  if (j.contains("data")) {
    const Json& d = j["data"];
    reject_unknown_keys(d, {"gallery", "pairs", "stream", "pairs_seed"}, "config.data");
    if (d.contains("gallery")) {
      if (!d["gallery"].is_string()) bad("config.data.gallery", "expected a path string");
      c.gallery = d["gallery"].get<std::string>();
    }
    if (d.contains("pairs") && !d["pairs"].is_null()) {
      if (!d["pairs"].is_string()) bad("config.data.pairs", "expected a path string or null");
      c.pairs = d["pairs"].get<std::string>();
    }
    if (d.contains("stream")) {
      if (!d["stream"].is_boolean()) bad("config.data.stream", "expected a boolean");
      c.stream = d["stream"].get<bool>();
    }
    if (d.contains("pairs_seed")) c.pairs_seed = get_uint(d["pairs_seed"], "config.data.pairs_seed");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_json_file(path, ErrorKind::Config));
}

Json run_config_to_json(const RunConfig& c) {
  const auto& t = c.train;
  Json train{{"learning_rate", t.learning_rate},
             {"batch_size", t.batch_size},
             {"epochs", t.epochs ? Json(*t.epochs) : Json(nullptr)},
             {"total_steps", t.total_steps ? Json(*t.total_steps) : Json(nullptr)},
             {"loss", t.loss_kind == LossKind::CrossEntropy ? "cross_entropy"
                                                             : "cross_entropy_plus_center"},
             {"center_weight", t.center_weight},
             {"center_alpha", t.center_alpha},
             {"checkpoint_every", t.checkpoint_every},
             {"seed", t.seed}};
  Json data{{"gallery", c.gallery},
            {"pairs", c.pairs ? Json(*c.pairs) : Json(nullptr)},
            {"stream", c.stream},
            {"pairs_seed", c.pairs_seed}};
  return Json{{"seed", c.seed},
              {"model", model_config_to_json(c.model)},
              {"train", train},
              {"data", data}};
}

}  // namespace coffar::cli
