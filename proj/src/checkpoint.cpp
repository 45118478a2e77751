#include <fstream>
#include <sstream>

#include "coffar/error.hpp"
#include "coffar/json_io.hpp"
#include "coffar/model.hpp"

namespace coffar {

namespace {

constexpr int kCheckpointVersion = 1;

[[noreturn]] void config_error(std::string_view where, const std::string& what) {
  throw Error(ErrorKind::Config, std::string(where) + ": " + what);
}

const Json& require(const Json& obj, const char* key, std::string_view where) {
  if (!obj.contains(key)) config_error(where, std::string("missing key '") + key + "'");
  return obj.at(key);
}

std::size_t as_count(const Json& v, std::string_view where) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    config_error(where, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  if (!obj.is_object()) config_error(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) config_error(where, "unknown key '" + key + "'");
  }
}

Json read_json_file(const std::filesystem::path& path, ErrorKind parse_error_kind) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(parse_error_kind, path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Json model_config_to_json(const ModelConfig& config) {
  Json conv = Json::array();
  for (const auto& c : config.conv) {
    conv.push_back({{"out_channels", c.out_channels},
                    {"kernel_h", c.kernel_h},
                    {"kernel_w", c.kernel_w},
                    {"pool", c.pool_after}});
  }
  return Json{{"conv", conv},
              {"fc_dims", config.fc_dims},
              {"activation", "relu"},
              {"seed", config.seed}};
}

ModelConfig model_config_from_json(const Json& j, std::string_view where) {
  reject_unknown_keys(j, {"conv", "fc_dims", "activation", "seed"}, where);
  ModelConfig c;
  const std::string w(where);
  const Json& conv = require(j, "conv", where);
  if (!conv.is_array()) config_error(w + ".conv", "expected an array");
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const std::string cw = w + ".conv[" + std::to_string(i) + "]";
    const Json& e = conv[i];
    reject_unknown_keys(e, {"out_channels", "kernel_h", "kernel_w", "pool"}, cw);
    ConvSpec s;
    s.out_channels = as_count(require(e, "out_channels", cw), cw + ".out_channels");
    s.kernel_h = e.contains("kernel_h") ? as_count(e["kernel_h"], cw + ".kernel_h") : 3;
    s.kernel_w = e.contains("kernel_w") ? as_count(e["kernel_w"], cw + ".kernel_w") : 3;
    if (e.contains("pool")) {
      if (!e["pool"].is_boolean()) config_error(cw + ".pool", "expected a boolean");
      s.pool_after = e["pool"].get<bool>();
    }
    c.conv.push_back(s);
  }
  if (j.contains("fc_dims")) {
    const Json& fc = j["fc_dims"];
    if (!fc.is_array()) config_error(w + ".fc_dims", "expected an array");
    for (const auto& d : fc) c.fc_dims.push_back(as_count(d, w + ".fc_dims"));
  }
  if (j.contains("activation") &&
      !(j["activation"].is_string() && j["activation"].get<std::string>() == "relu")) {
    config_error(w + ".activation", "only \"relu\" is supported");
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) config_error(w + ".seed", "expected an unsigned integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  c.validate();
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     std::uint64_t epoch, double train_loss) {
  Json params = Json::object();
  for (const auto& p : model.parameters()) {
    params[p.name] = Json{{"shape", p.value.shape()}, {"data", p.value.values()}};
  }
  const Json doc{{"format_version", kCheckpointVersion},
                 {"config", model_config_to_json(model.config())},
                 {"parameters", params},
                 {"epoch", epoch},
                 {"train_loss", train_loss}};
  write_text_file(path, doc.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::Io, "checkpoint not found: " + path.string());
  }
  const Json doc = read_json_file(path, ErrorKind::MalformedCheckpoint);
  const auto malformed = [&](const std::string& what) {
    return Error(ErrorKind::MalformedCheckpoint, path.string() + ": " + what);
  };
  try {
    if (!doc.is_object()) throw malformed("top level is not an object");
    for (const char* key : {"format_version", "config", "parameters", "epoch", "train_loss"}) {
      if (!doc.contains(key)) throw malformed(std::string("missing field '") + key + "'");
    }
    if (doc["format_version"].get<int>() != kCheckpointVersion) {
      throw malformed("unsupported format_version " + doc["format_version"].dump());
    }
    ModelConfig config;
    try {
      config = model_config_from_json(doc["config"], "config");
    } catch (const Error& e) {
      throw malformed(e.what());
    }
    std::vector<NamedTensor> params;
    for (const auto& [name, entry] : doc["parameters"].items()) {
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      auto data = entry.at("data").get<std::vector<double>>();
      if (shape_numel(shape) != data.size() || shape_numel(shape) == 0) {
        throw malformed("parameter '" + name + "' has " + std::to_string(data.size()) +
                        " values for shape " + shape_string(shape));
      }
      params.push_back({name, Tensor(std::move(shape), std::move(data))});
    }
    Checkpoint ck{Model(std::move(config), std::move(params)), doc["epoch"].get<std::uint64_t>(),
                  doc["train_loss"].get<double>()};
    return ck;
  } catch (const Json::exception& e) {
    throw malformed(e.what());
  }
}

}  // namespace coffar
