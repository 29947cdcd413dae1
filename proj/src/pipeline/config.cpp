#include "rtd/pipeline/config.hpp"

#include <fstream>

#include "rtd/common/errors.hpp"
#include "rtd/confidence/confidence.hpp"

namespace rtd::pipeline {

using nlohmann::json;

namespace {

json encoder_json(const nn::EncoderConfig& c) {
  return {{"n_layers", c.n_layers}, {"hidden", c.hidden},   {"n_heads", c.n_heads},
          {"ffn_mult", c.ffn_mult}, {"max_len", c.max_len}, {"dropout", c.dropout}};
}

nn::EncoderConfig encoder_from(const json& j) {
  nn::EncoderConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

json pretrain_json(const pretrain::PretrainConfig& c) {
  return {{"mask_rate", c.mask_rate},   {"phone_mask_rate", c.phone_mask_rate},
          {"lambda_d", c.lambda_d},     {"temperature", c.temperature},
          {"steps", c.steps},           {"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},       {"warmup_fraction", c.warmup_fraction},
          {"max_grad_norm", c.max_grad_norm}, {"pack_len", c.pack_len}};
}

pretrain::PretrainConfig pretrain_from(const json& j) {
  pretrain::PretrainConfig c;
  c.mask_rate = j.at("mask_rate").get<double>();
  c.phone_mask_rate = j.at("phone_mask_rate").get<double>();
  c.lambda_d = j.at("lambda_d").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.steps = j.at("steps").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.peak_lr = j.at("peak_lr").get<double>();
  c.warmup_fraction = j.at("warmup_fraction").get<double>();
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  c.pack_len = j.at("pack_len").get<std::size_t>();
  return c;
}

json channel_json(const asr::ChannelConfig& c) {
  return {{"p_sub", c.p_sub},
          {"p_ins", c.p_ins},
          {"p_del", c.p_del},
          {"tau", c.tau},
          {"n_best", c.n_best},
          {"k_nearest", c.k_nearest},
          {"ambiguity_boost", c.ambiguity_boost},
          {"clean_ambiguity", c.clean_ambiguity},
          {"attempts_per_hyp", c.attempts_per_hyp}};
}

asr::ChannelConfig channel_from(const json& j) {
  asr::ChannelConfig c;
  c.p_sub = j.at("p_sub").get<double>();
  c.p_ins = j.at("p_ins").get<double>();
  c.p_del = j.at("p_del").get<double>();
  c.tau = j.at("tau").get<double>();
  c.n_best = j.at("n_best").get<std::size_t>();
  c.k_nearest = j.at("k_nearest").get<std::size_t>();
  c.ambiguity_boost = j.at("ambiguity_boost").get<double>();
  c.clean_ambiguity = j.at("clean_ambiguity").get<double>();
  c.attempts_per_hyp = j.at("attempts_per_hyp").get<std::size_t>();
  return c;
}

json finetune_json(const finetune::FinetuneConfig& c) {
  return {{"k", c.k},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"max_grad_norm", c.max_grad_norm}};
}

finetune::FinetuneConfig finetune_from(const json& j) {
  finetune::FinetuneConfig c;
  c.k = j.at("k").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.peak_lr = j.at("peak_lr").get<double>();
  c.warmup_fraction = j.at("warmup_fraction").get<double>();
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  return c;
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Walks the user document against the full default document.
void check_shape(const json& user, const json& ref, const std::string& path) {
  if (ref.is_object()) {
    if (!user.is_object()) throw ConfigError("'" + path + "' must be an object");
    for (const auto& [key, value] : user.items()) {
      const auto it = ref.find(key);
      if (it == ref.end()) throw ConfigError("unknown config key '" + join(path, key) + "'");
      check_shape(value, *it, join(path, key));
    }
    return;
  }
  bool ok = false;
  if (ref.is_boolean()) ok = user.is_boolean();
  else if (ref.is_string()) ok = user.is_string();
  else if (ref.is_number_unsigned()) ok = user.is_number_unsigned() || (user.is_number_integer() && user.get<long long>() >= 0);
  else if (ref.is_number()) ok = user.is_number();
  else if (ref.is_array()) {
    ok = user.is_array();
    for (const auto& v : user) ok = ok && v.is_number();
  }
  if (!ok) throw ConfigError("'" + path + "' has the wrong type (expected like " + ref.dump() + ")");
}

void need(bool cond, const std::string& path, const std::string& what) {
  if (!cond) throw ConfigError("'" + path + "' " + what);
}

// Re-raises a sub-config's ConfigError with the block path in front.
template <typename Fn>
void validate_block(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  models.discriminator = {2, 64, 2, 4, 64, 0, 0.1};
  models.generator = {1, 32, 2, 4, 64, 0, 0.1};
  models.bert = models.discriminator;
  models.causal_lm = models.discriminator;
  models.cmlm.encoder = {1, 32, 2, 4, 192, 0, 0.1};
  models.cmlm.decoder = {1, 32, 2, 4, 64, 0, 0.1};
  // Desk-scale schedule: sentence-level batches, more updates and a larger
  // peak rate than the library defaults; every variant gets the same budget.
  for (auto* p : {&electra, &pelectra, &bert_mlm, &causal_lm}) {
    p->steps = 5000;
    p->peak_lr = 2e-3;
    p->pack_len = 0;
  }
  // At 2e-3 the joint ELECTRA objective stalls and the discriminator ends up
  // no better than an untrained one.
  electra.peak_lr = 5e-4;
  gamma_grid = confidence::default_gamma_grid();
}

void RunConfig::validate() const {
  need(workers >= 1, "workers", "must be >= 1");
  need(!workdir.empty(), "workdir", "must be non-empty");
  need(corpus.n_sentences >= 1, "corpus.n_sentences", "must be >= 1");
  need(corpus.bpe_vocab > 3, "corpus.bpe_vocab", "must exceed the special tokens");
  need(splits.train >= 1 && splits.dev >= 1 && splits.test >= 1, "splits", "every split needs >= 1 utterance");
  need(!alpha_grid.empty(), "alpha_grid", "must be non-empty");
  need(!beta_grid.empty(), "beta_grid", "must be non-empty");
  need(!gamma_grid.empty(), "gamma_grid", "must be non-empty");
  for (double a : alpha_grid) need(a >= 0.0, "alpha_grid", "values must be >= 0");
  for (double g : gamma_grid) need(g >= 0.0 && g <= 1.0, "gamma_grid", "values must lie in [0, 1]");
  need(benchmark.repetitions >= 1, "benchmark.repetitions", "must be >= 1");
  validate_block("channel", [&] { channel.validate(); });
  auto with_vocab = [](nn::EncoderConfig c) {
    c.vocab_size = 8;
    return c;
  };
  validate_block("models.discriminator", [&] { with_vocab(models.discriminator).validate(); });
  validate_block("models.generator", [&] { with_vocab(models.generator).validate(); });
  validate_block("models.bert", [&] { with_vocab(models.bert).validate(); });
  validate_block("models.causal_lm", [&] { with_vocab(models.causal_lm).validate(); });
  validate_block("models.cmlm", [&] {
    nn::CmlmConfig c{with_vocab(models.cmlm.encoder), with_vocab(models.cmlm.decoder)};
    c.validate();
  });
  validate_block("electra", [&] { electra.validate(); });
  validate_block("pelectra", [&] { pelectra.validate(); });
  validate_block("bert_mlm", [&] { bert_mlm.validate(); });
  validate_block("causal_lm", [&] { causal_lm.validate(); });
  validate_block("finetune", [&] { finetune.validate(); });
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"workers", c.workers},
          {"workdir", c.workdir},
          {"corpus", {{"n_sentences", c.corpus.n_sentences}, {"vocab_size", c.corpus.vocab_size}, {"bpe_vocab", c.corpus.bpe_vocab}}},
          {"splits", {{"train", c.splits.train}, {"dev", c.splits.dev}, {"test", c.splits.test}}},
          {"channel", channel_json(c.channel)},
          {"models",
           {{"discriminator", encoder_json(c.models.discriminator)},
            {"generator", encoder_json(c.models.generator)},
            {"bert", encoder_json(c.models.bert)},
            {"causal_lm", encoder_json(c.models.causal_lm)},
            {"cmlm", {{"encoder", encoder_json(c.models.cmlm.encoder)}, {"decoder", encoder_json(c.models.cmlm.decoder)}}}}},
          {"electra", pretrain_json(c.electra)},
          {"pelectra", pretrain_json(c.pelectra)},
          {"bert_mlm", pretrain_json(c.bert_mlm)},
          {"causal_lm", pretrain_json(c.causal_lm)},
          {"finetune", finetune_json(c.finetune)},
          {"alpha_grid", c.alpha_grid},
          {"beta_grid", c.beta_grid},
          {"gamma_grid", c.gamma_grid},
          {"length_unit", c.length_unit == rescore::LengthUnit::kTokens ? "tokens" : "words"},
          {"stages", {{"bert", c.stages.bert}, {"causal_lm", c.stages.causal_lm}, {"pelectra", c.stages.pelectra}}},
          {"benchmark", {{"n_lists", c.benchmark.n_lists}, {"repetitions", c.benchmark.repetitions}}}};
}

RunConfig run_config_from_json(const json& user) {
  const json defaults = to_json(RunConfig{});
  check_shape(user, defaults, "");
  json j = defaults;
  j.merge_patch(user);

  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.workers = j.at("workers").get<std::size_t>();
  c.workdir = j.at("workdir").get<std::string>();
  const auto& jc = j.at("corpus");
  c.corpus = {jc.at("n_sentences").get<std::size_t>(), jc.at("vocab_size").get<std::size_t>(),
              jc.at("bpe_vocab").get<std::size_t>()};
  const auto& js = j.at("splits");
  c.splits = {js.at("train").get<std::size_t>(), js.at("dev").get<std::size_t>(), js.at("test").get<std::size_t>()};
  c.channel = channel_from(j.at("channel"));
  const auto& jm = j.at("models");
  c.models.discriminator = encoder_from(jm.at("discriminator"));
  c.models.generator = encoder_from(jm.at("generator"));
  c.models.bert = encoder_from(jm.at("bert"));
  c.models.causal_lm = encoder_from(jm.at("causal_lm"));
  c.models.cmlm.encoder = encoder_from(jm.at("cmlm").at("encoder"));
  c.models.cmlm.decoder = encoder_from(jm.at("cmlm").at("decoder"));
  c.electra = pretrain_from(j.at("electra"));
  c.pelectra = pretrain_from(j.at("pelectra"));
  c.bert_mlm = pretrain_from(j.at("bert_mlm"));
  c.causal_lm = pretrain_from(j.at("causal_lm"));
  c.finetune = finetune_from(j.at("finetune"));
  c.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
  c.beta_grid = j.at("beta_grid").get<std::vector<double>>();
  c.gamma_grid = j.at("gamma_grid").get<std::vector<double>>();
  const auto unit = j.at("length_unit").get<std::string>();
  if (unit == "tokens") c.length_unit = rescore::LengthUnit::kTokens;
  else if (unit == "words") c.length_unit = rescore::LengthUnit::kWords;
  else throw ConfigError("'length_unit' must be \"tokens\" or \"words\"");
  const auto& st = j.at("stages");
  c.stages = {st.at("bert").get<bool>(), st.at("causal_lm").get<bool>(), st.at("pelectra").get<bool>()};
  c.benchmark = {j.at("benchmark").at("n_lists").get<std::size_t>(), j.at("benchmark").at("repetitions").get<std::size_t>()};
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  const json defaults = to_json(RunConfig{});
  const json* ref = &defaults;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!ref->is_object() || !ref->contains(key)) {
      throw ConfigError("unknown config key '" + path.substr(0, dot == std::string::npos ? path.size() : dot) + "'");
    }
    ref = &(*ref)[key];
    if (!node->is_object()) *node = json::object();
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(j, o);
  auto cfg = run_config_from_json(j);
  cfg.validate();
  return cfg;
}

}  // namespace rtd::pipeline
