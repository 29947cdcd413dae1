#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/asr/channel.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/corpus/lexicon.hpp"
#include "rtd/nn/transformer.hpp"
#include "rtd/pipeline/config.hpp"
#include "rtd/rescore/rescore.hpp"

namespace rtd::pipeline {

// Artifact locations under the work directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path corpus() const { return root / "data" / "corpus.txt"; }
  std::filesystem::path utterances() const { return root / "data" / "utterances.txt"; }
  std::filesystem::path lexicon() const { return root / "data" / "lexicon.tsv"; }
  std::filesystem::path merges() const { return root / "data" / "merges.json"; }
  std::filesystem::path phones() const { return root / "data" / "phones.txt"; }
  std::filesystem::path nbest(const std::string& split) const { return root / "nbest" / (split + ".jsonl"); }
  std::filesystem::path model(const std::string& name) const { return root / "models" / (name + ".ckpt"); }
  std::filesystem::path loss(const std::string& name) const { return root / "losses" / (name + ".csv"); }
  std::filesystem::path labeled() const { return root / "labeled" / "train.jsonl"; }
  std::filesystem::path rescore(const std::string& name) const { return root / "rescore" / name; }
  std::filesystem::path confidence(const std::string& name) const { return root / "confidence" / name; }
  std::filesystem::path report(const std::string& name) const { return root / "report" / name; }
  std::filesystem::path benchmark() const { return root / "benchmark.csv"; }
};

enum class Variant { kElectra, kPelectra, kBertMlm, kCausalLm };
// "electra", "pelectra", "bert_mlm", "causal_lm"; ConfigError otherwise.
Variant variant_from_string(const std::string& name);

// Scoring models by name: causal_lm, bert, bert_ft, electra, electra_ft,
// pelectra, pelectra_ft, untrained (freshly initialized discriminator).
std::vector<std::string> model_names();
rescore::ScorerKind default_scorer(const std::string& model);

// Writes corpus, utterance sentences, lexicon, merges and phone files.
void cmd_gen_data(const RunConfig& cfg);
// Writes train/dev/test n-best JSONL.
void cmd_simulate(const RunConfig& cfg);
// Writes checkpoints and a loss CSV.
void cmd_pretrain(const RunConfig& cfg, Variant variant);
// model: electra, pelectra or bert. Writes <model>_ft and the labeled set.
void cmd_finetune(const RunConfig& cfg, const std::string& model, std::size_t k);

struct RescoreOutcome {
  std::string model;
  rescore::ScorerKind scorer = rescore::ScorerKind::kElectra;
  double alpha = 0.0;
  double beta = 0.0;
  double dev_baseline_wer = 0.0;
  double dev_wer = 0.0;
  double test_baseline_wer = 0.0;
  double test_wer = 0.0;
  double test_oracle_wer = 0.0;
  double mean_passes = 0.0;
  double test_pearson = 0.0;  // -Score_LM vs word errors on test
};

// Tunes alpha/beta on dev, applies them on test; writes rescored JSONL and a
// JSON report.
RescoreOutcome cmd_rescore(const RunConfig& cfg, const std::string& model,
                           std::optional<rescore::ScorerKind> scorer = std::nullopt);

struct ConfidenceOutcome {
  std::string model;
  double gamma = 0.0;
  double dev_nce_gamma0 = 0.0;
  double dev_nce_gamma1 = 0.0;
  double dev_nce = 0.0;  // at the tuned gamma
  double dev_auc = 0.0;
  double test_auc_p = 0.0;  // ASR posteriors alone
  double test_nce_p = 0.0;
  double test_auc_c = 0.0;  // model word confidence alone
  double test_nce_c = 0.0;
  double test_auc_interp = 0.0;
  double test_nce_interp = 0.0;
};

ConfidenceOutcome cmd_confidence(const RunConfig& cfg, const std::string& model);

// Wall-clock comparison of the available scorers; writes benchmark.csv.
std::vector<rescore::BenchmarkRow> cmd_benchmark(const RunConfig& cfg);

struct PhoneAwareness {
  std::size_t samples = 0;
  std::size_t pelectra_replacements = 0;
  std::size_t bert_replacements = 0;
  double pelectra_mean_distance = 0.0;
  double bert_mean_distance = 0.0;
};

// Mean phone edit distance of generator replacements (CMLM vs the masked-LM
// generator) on identical word mask plans.
PhoneAwareness phone_awareness(const RunConfig& cfg, std::size_t n_samples);

// Consolidated report from existing artifacts: report.json plus table2/3/4
// and fig2 CSVs. Wall-clock times are not part of it.
nlohmann::json cmd_report(const RunConfig& cfg);

// gen-data, simulate, every enabled pre-training variant, fine-tuning, report.
nlohmann::json run_all(const RunConfig& cfg);

}  // namespace rtd::pipeline
