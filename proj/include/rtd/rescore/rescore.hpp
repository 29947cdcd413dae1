#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rtd/asr/channel.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/metrics/metrics.hpp"
#include "rtd/nn/transformer.hpp"

namespace rtd::rescore {

enum class ScorerKind { kAutoregressive, kBertPll, kElectra };
enum class LengthUnit { kTokens, kWords };

std::string to_string(ScorerKind kind);
// Accepts "autoregressive", "bert_pll", "electra_count"; ConfigError otherwise.
ScorerKind scorer_kind_from_string(const std::string& name);

struct RescoreConfig {
  double alpha = 0.0;
  double beta = 0.0;
  LengthUnit length_unit = LengthUnit::kTokens;

  void validate() const;
  // alpha 0.5, beta 1 for likelihood scorers; alpha 9, beta 0 for ELECTRA.
  static RescoreConfig defaults_for(ScorerKind kind);
};

struct LmScore {
  double score = 0.0;
  std::size_t passes = 0;  // measured with the forward-pass counter
};

// Sum of log p(y_i | [CLS], y_<i) from one causal pass. LengthError when empty
// or longer than max_len.
LmScore score_lm_autoregressive(const nn::CausalLmModel& model, const corpus::TokenSeq& seq);
// Sum of log p(y_i | y with position i masked); one pass per position.
LmScore score_lm_bert_pll(const nn::EncoderModel& model, const corpus::TokenSeq& seq);
// -sum of D over non-special positions from one unmasked pass.
LmScore score_lm_electra(const nn::EncoderModel& model, const corpus::TokenSeq& seq);

// Binds a scorer kind to a model; construction checks the model's heads.
class Scorer {
 public:
  static Scorer autoregressive(const nn::CausalLmModel& model);
  static Scorer bert_pll(const nn::EncoderModel& model);
  static Scorer electra(const nn::EncoderModel& model);

  ScorerKind kind() const { return kind_; }
  LmScore operator()(const corpus::TokenSeq& seq) const;

 private:
  ScorerKind kind_ = ScorerKind::kAutoregressive;
  const nn::CausalLmModel* causal_ = nullptr;
  const nn::EncoderModel* encoder_ = nullptr;
};

double combined_score(const asr::Hypothesis& hyp, double score_lm, std::size_t length,
                      const RescoreConfig& cfg);

// Per-hypothesis scores of one list, computed once and reused across configs.
struct ScoredList {
  std::string utt_id;
  std::vector<double> asr_log_prob;
  std::vector<double> score_lm;
  std::vector<std::size_t> token_length;
  std::vector<std::size_t> word_length;
  std::vector<std::size_t> passes;

  std::size_t size() const { return asr_log_prob.size(); }
};

ScoredList score_list(const asr::NBestList& list, const Scorer& scorer,
                      const corpus::MergeTable& merges);
std::vector<ScoredList> score_lists(std::span<const asr::NBestList> lists, const Scorer& scorer,
                                    const corpus::MergeTable& merges, std::size_t workers = 1);

struct ScoredHypothesis {
  std::size_t rank = 0;
  double score_lm = 0.0;
  double combined = 0.0;
  std::size_t passes = 0;
};

// Argmax of the combined score; ties go to higher asr_log_prob, then lower
// rank. InputError for an empty list.
ScoredHypothesis select_hypothesis(const ScoredList& list, const RescoreConfig& cfg);
std::vector<ScoredHypothesis> select_all(std::span<const ScoredList> lists, const RescoreConfig& cfg);

// Rank with the fewest word errors; ties go to higher asr_log_prob, then lower
// rank. InputError without a reference or hypotheses.
std::size_t oracle_select(const asr::NBestList& list);

// WER of every hypothesis of every list; InputError without a reference.
std::vector<std::vector<metrics::WerBreakdown>> hypothesis_wers(std::span<const asr::NBestList> lists);

double selection_wer(std::span<const std::vector<metrics::WerBreakdown>> wers,
                     std::span<const std::size_t> ranks);
double baseline_wer(std::span<const asr::NBestList> lists);
double oracle_wer(std::span<const asr::NBestList> lists);

std::vector<double> default_alpha_grid();
std::vector<double> default_beta_grid();

struct TuneResult {
  double alpha = 0.0;
  double beta = 0.0;
  double wer = 0.0;
};

// Exhaustive search for the lowest corpus WER; ties go to smaller alpha, then
// smaller beta. InputError for empty grids.
TuneResult tune_alpha_beta(std::span<const asr::NBestList> lists,
                           std::span<const ScoredList> scored, std::span<const double> alphas,
                           std::span<const double> betas,
                           LengthUnit unit = LengthUnit::kTokens);

struct NamedScorer {
  std::string name;
  Scorer scorer;
};

struct BenchmarkRow {
  std::string scorer;
  double mean_passes = 0.0;
  double wall_ms_per_hyp = 0.0;
  double ratio_vs_autoregressive = 0.0;  // 0 when no autoregressive scorer ran
};

// Single-threaded timing over every hypothesis of the sample.
std::vector<BenchmarkRow> benchmark_scorers(std::span<const NamedScorer> scorers,
                                            std::span<const asr::NBestList> sample,
                                            const corpus::MergeTable& merges,
                                            std::size_t repetitions);

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkRow> rows);

// {"utt_id", "chosen_rank", "combined", "score_lm", "passes"} per line.
void write_rescore_jsonl(const std::filesystem::path& path, std::span<const ScoredList> lists,
                         std::span<const ScoredHypothesis> chosen);

}  // namespace rtd::rescore
