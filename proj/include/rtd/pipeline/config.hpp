#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/asr/channel.hpp"
#include "rtd/finetune/finetune.hpp"
#include "rtd/nn/transformer.hpp"
#include "rtd/pretrain/pretrain.hpp"
#include "rtd/rescore/rescore.hpp"

namespace rtd::pipeline {

struct CorpusParams {
  std::size_t n_sentences = 20000;  // text corpus for pre-training
  std::size_t vocab_size = 300;     // words in the toy grammar
  std::size_t bpe_vocab = 320;      // subword vocabulary incl. specials
};

// Utterances are drawn from the same grammar, disjoint from the text corpus.
struct SplitParams {
  std::size_t train = 1200;
  std::size_t dev = 400;
  std::size_t test = 400;

  std::size_t total() const { return train + dev + test; }
};

// vocab_size of every encoder is filled in from the merge table at run time.
struct ModelParams {
  nn::EncoderConfig discriminator;
  nn::EncoderConfig generator;
  nn::EncoderConfig bert;
  nn::EncoderConfig causal_lm;
  nn::CmlmConfig cmlm;
};

struct StageSwitches {
  bool bert = true;       // BERT pre-training, pseudo-likelihood scoring, BERT(FT)
  bool causal_lm = true;  // Transformer LM
  bool pelectra = true;
};

struct BenchmarkParams {
  std::size_t n_lists = 10;
  std::size_t repetitions = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string workdir = "run";

  CorpusParams corpus;
  SplitParams splits;
  asr::ChannelConfig channel;
  ModelParams models;
  // The seed field of these blocks is derived from the master seed.
  pretrain::PretrainConfig electra;
  pretrain::PretrainConfig pelectra;
  pretrain::PretrainConfig bert_mlm;
  pretrain::PretrainConfig causal_lm;
  finetune::FinetuneConfig finetune;

  std::vector<double> alpha_grid = rescore::default_alpha_grid();
  std::vector<double> beta_grid = rescore::default_beta_grid();
  std::vector<double> gamma_grid;
  rescore::LengthUnit length_unit = rescore::LengthUnit::kTokens;

  StageSwitches stages;
  BenchmarkParams benchmark;

  RunConfig();
  // ConfigError naming the offending path.
  void validate() const;
  std::filesystem::path dir() const { return workdir; }
};

nlohmann::json to_json(const RunConfig& cfg);

// Unknown keys and type mismatches raise ConfigError with the dotted path.
// Missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

// "a.b.c=value"; the value is parsed as JSON when possible, else taken as a
// string. ConfigError for a path the config does not have.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Reads an optional config file, applies overrides in order, validates.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace rtd::pipeline
