#include "rtd/nn/checkpoint.hpp"

#include <fstream>

#include "rtd/common/errors.hpp"

namespace rtd::nn {

namespace {

using nlohmann::json;

json params_to_json(const ParameterSet& params) {
  json list = json::array();
  for (const auto& p : params.all()) {
    list.push_back({{"name", p.name}, {"shape", {p.rows, p.cols}}, {"data", p.value}});
  }
  return list;
}

void write_json(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw InputError("write failed: " + path.string());
}

json header(const std::string& kind, const CheckpointMeta& meta) {
  return {{"format_version", kCheckpointVersion},
          {"kind", kind},
          {"metadata", {{"steps", meta.steps}, {"seed", meta.seed}, {"note", meta.note}}}};
}

json read_checkpoint_json(const std::filesystem::path& path, const std::string& kind,
                          CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw LoadError("unsupported checkpoint version " + j.at("format_version").dump() + " in " +
                      path.string());
    }
    if (!kind.empty() && j.at("kind").get<std::string>() != kind) {
      throw LoadError("checkpoint " + path.string() + " holds a " +
                      j.at("kind").get<std::string>() + ", expected " + kind);
    }
    if (meta != nullptr) {
      const auto& m = j.at("metadata");
      meta->steps = m.at("steps").get<std::uint64_t>();
      meta->seed = m.at("seed").get<std::uint64_t>();
      meta->note = m.value("note", "");
    }
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return j;
}

void fill_params(ParameterSet& params, const json& list, const std::filesystem::path& path) {
  try {
    if (list.size() != params.size()) {
      throw LoadError("checkpoint " + path.string() + " has " + std::to_string(list.size()) +
                      " parameters, model expects " + std::to_string(params.size()));
    }
    for (const auto& entry : list) {
      const auto name = entry.at("name").get<std::string>();
      if (!params.contains(name)) throw LoadError("unexpected parameter " + name);
      Parameter& p = params[params.find(name)];
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto& data = entry.at("data");
      if (shape.size() != 2 || shape[0] != p.rows || shape[1] != p.cols ||
          data.size() != p.size()) {
        throw LoadError("shape mismatch for parameter " + name);
      }
      for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = data[i].get<float>();
    }
  } catch (const json::exception& e) {
    throw LoadError("malformed parameter table in " + path.string() + ": " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers}, {"hidden", c.hidden},   {"n_heads", c.n_heads},
          {"ffn_mult", c.ffn_mult}, {"max_len", c.max_len}, {"vocab_size", c.vocab_size},
          {"dropout", c.dropout}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

void save_checkpoint(const EncoderModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  json j = header("encoder", meta);
  j["config"] = to_json(model.config());
  j["heads"] = {{"lm", model.has_lm_head()}, {"disc", model.has_disc_head()}};
  j["parameters"] = params_to_json(model.params());
  write_json(j, path);
}

void save_checkpoint(const CausalLmModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  json j = header("causal_lm", meta);
  j["config"] = to_json(model.config());
  j["parameters"] = params_to_json(model.params());
  write_json(j, path);
}

void save_checkpoint(const CmlmModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  json j = header("cmlm", meta);
  j["config"] = {{"encoder", to_json(model.config().encoder)},
                 {"decoder", to_json(model.config().decoder)}};
  j["parameters"] = params_to_json(model.params());
  write_json(j, path);
}

EncoderModel load_encoder(const std::filesystem::path& path, CheckpointMeta* meta) {
  const json j = read_checkpoint_json(path, "encoder", meta);
  try {
    const auto config = encoder_config_from_json(j.at("config"));
    const bool lm = j.at("heads").at("lm").get<bool>();
    const bool disc = j.at("heads").at("disc").get<bool>();
    EncoderModel model(config, lm, false, 0);
    if (disc) model.add_disc_head(Init::kZeros, 0);
    fill_params(model.params(), j.at("parameters"), path);
    return model;
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("invalid config in " + path.string() + ": " + e.what());
  }
}

CausalLmModel load_causal_lm(const std::filesystem::path& path, CheckpointMeta* meta) {
  const json j = read_checkpoint_json(path, "causal_lm", meta);
  try {
    CausalLmModel model(encoder_config_from_json(j.at("config")), 0);
    fill_params(model.params(), j.at("parameters"), path);
    return model;
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("invalid config in " + path.string() + ": " + e.what());
  }
}

CmlmModel load_cmlm(const std::filesystem::path& path, CheckpointMeta* meta) {
  const json j = read_checkpoint_json(path, "cmlm", meta);
  try {
    CmlmConfig config{encoder_config_from_json(j.at("config").at("encoder")),
                      encoder_config_from_json(j.at("config").at("decoder"))};
    CmlmModel model(config, 0);
    fill_params(model.params(), j.at("parameters"), path);
    return model;
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("invalid config in " + path.string() + ": " + e.what());
  }
}

std::string checkpoint_kind(const std::filesystem::path& path) {
  return read_checkpoint_json(path, "", nullptr).at("kind").get<std::string>();
}

}  // namespace rtd::nn
