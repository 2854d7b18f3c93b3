#include "csad/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace csad {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + where + "." + key + "'");
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("'" + where + "." + key + "' has the wrong type");
  }
}

void read_positive(const json& obj, const char* key, std::size_t& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("'" + where + "." + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  reject_unknown(j, {"net", "train"}, "config");
  if (j.contains("net")) {
    const json& n = j.at("net");
    reject_unknown(n,
                   {"input_size", "stages", "base_channels", "proj_channels", "scheme", "fusion",
                    "distill_gradient_mode", "threshold"},
                   "net");
    if (n.contains("input_size")) {
      const json& sz = n.at("input_size");
      if (!sz.is_array() || sz.size() != 2 || !sz[0].is_number_unsigned() || !sz[1].is_number_unsigned())
        throw ConfigError("'net.input_size' must be [height, width]");
      cfg.net.input_h = sz[0].get<std::size_t>();
      cfg.net.input_w = sz[1].get<std::size_t>();
    }
    read_positive(n, "stages", cfg.net.stages, "net");
    read_positive(n, "base_channels", cfg.net.base_channels, "net");
    read_positive(n, "proj_channels", cfg.net.proj_channels, "net");
    read(n, "threshold", cfg.net.threshold, "net");
    try {
      if (n.contains("scheme")) cfg.net.scheme = scheme_from_string(n.at("scheme").get<std::string>());
      if (n.contains("fusion")) cfg.net.fusion = fusion_from_string(n.at("fusion").get<std::string>());
      if (n.contains("distill_gradient_mode"))
        cfg.net.distill_gradient =
            distill_gradient_from_string(n.at("distill_gradient_mode").get<std::string>());
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    } catch (const json::exception&) {
      throw ConfigError("net.scheme, net.fusion and net.distill_gradient_mode must be strings");
    }
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"epochs", "batch_size", "learning_rate", "seed", "augment", "loss"}, "train");
    read_positive(t, "epochs", cfg.train.epochs, "train");
    read_positive(t, "batch_size", cfg.train.batch_size, "train");
    read(t, "learning_rate", cfg.train.learning_rate, "train");
    if (t.contains("seed")) {
      if (!t.at("seed").is_number_unsigned()) throw ConfigError("'train.seed' must be an unsigned integer");
      cfg.train.seed = t.at("seed").get<std::uint64_t>();
    }
    read(t, "augment", cfg.train.augment, "train");
    if (t.contains("loss")) {
      const json& l = t.at("loss");
      reject_unknown(l, {"alpha", "beta", "sigma", "lambda"}, "train.loss");
      read(l, "alpha", cfg.train.loss.alpha, "train.loss");
      read(l, "beta", cfg.train.loss.beta, "train.loss");
      read(l, "sigma", cfg.train.loss.sigma, "train.loss");
      read(l, "lambda", cfg.train.loss.lambda, "train.loss");
    }
  }
  try {
    cfg.net.validate();
    cfg.train.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  try {
    return parse_run_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json to_json(const RunConfig& cfg) {
  const NetConfig& n = cfg.net;
  const TrainConfig& t = cfg.train;
  return {{"net",
           {{"input_size", {n.input_h, n.input_w}},
            {"stages", n.stages},
            {"base_channels", n.base_channels},
            {"proj_channels", n.proj_channels},
            {"scheme", std::string(to_string(n.scheme))},
            {"fusion", std::string(to_string(n.fusion))},
            {"distill_gradient_mode", std::string(to_string(n.distill_gradient))},
            {"threshold", n.threshold}}},
          {"train",
           {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"seed", t.seed},
            {"augment", t.augment},
            {"loss",
             {{"alpha", t.loss.alpha},
              {"beta", t.loss.beta},
              {"sigma", t.loss.sigma},
              {"lambda", t.loss.lambda}}}}}};
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& model,
                     const TrainConfig& train) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::string cfg = to_json(RunConfig{model.config, train}).dump();
  out << "CSADCKPT 1\n" << "config " << cfg.size() << "\n" << cfg << "\n";
  out << "params " << model.params.size() << "\n";
  for (const auto& [name, t] : model.params) {
    out << name << " " << t.rank();
    for (auto d : t.shape()) out << " " << d;
    out << "\n";
  }
  out << "payload\n";
  for (const auto& [_, t] : model.params) write_rt1(out, t);
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  const auto fail = [&](const std::string& why) {
    return std::runtime_error(path.string() + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != "CSADCKPT 1") throw fail("not a checkpoint (bad magic)");
  std::string word;
  std::size_t bytes = 0;
  if (!(in >> word >> bytes) || word != "config") throw fail("missing config header");
  in.get();
  std::string cfg_text(bytes, '\0');
  if (!in.read(cfg_text.data(), static_cast<std::streamsize>(bytes))) throw fail("truncated config");
  in.get();
  RunConfig cfg;
  try {
    cfg = parse_run_config(json::parse(cfg_text));
  } catch (const std::exception& e) {
    throw fail(std::string("embedded config invalid: ") + e.what());
  }
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "params") throw fail("missing params header");
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank)) throw fail("truncated parameter manifest");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(in >> d)) throw fail("truncated shape for '" + name + "'");
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  in.get();
  if (!std::getline(in, line) || line != "payload") throw fail("missing payload marker");

  Checkpoint ck{ModelState{cfg.net, {}}, cfg.train};
  for (const auto& [name, shape] : manifest) {
    Tensor t;
    try {
      t = read_rt1(in);
    } catch (const std::runtime_error& e) {
      throw fail("parameter '" + name + "': " + e.what());
    }
    if (t.shape() != shape) throw fail("parameter '" + name + "' payload shape disagrees with manifest");
    ck.model.params.emplace(name, std::move(t));
  }
  // The stored names and shapes must be exactly those the config implies.
  const ModelState reference = init_model(cfg.net, 0);
  if (reference.params.size() != ck.model.params.size())
    throw fail("parameter set does not match the embedded config");
  for (const auto& [name, t] : reference.params) {
    const auto it = ck.model.params.find(name);
    if (it == ck.model.params.end() || it->second.shape() != t.shape())
      throw fail("parameter '" + name + "' missing or misshapen for the embedded config");
  }
  return ck;
}

}  // namespace csad
