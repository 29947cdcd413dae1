#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "rtd/asr/channel.hpp"
#include "rtd/corpus/bpe.hpp"

namespace rtd::metrics {

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_word_count = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  double wer() const;
};

// UndefinedMetricError for an empty reference.
WerBreakdown wer(std::span<const corpus::Word> ref, std::span<const corpus::Word> hyp);

// Pooled: total errors over total reference words. InputError when empty.
double corpus_wer(std::span<const WerBreakdown> parts);

// P(pos > neg) + 0.5 P(pos == neg). UndefinedMetricError with one class.
double roc_auc(std::span<const double> scores, std::span<const int> targets);

inline constexpr double kNceEpsilon = 1e-12;

// Normalized cross entropy in nats; scores are probabilities of target 1 and
// are clipped to [eps, 1 - eps]. UndefinedMetricError for a degenerate base rate.
double nce(std::span<const double> scores, std::span<const int> targets);

// UndefinedMetricError for fewer than 2 points or zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct ScoreErrorRow {
  double neg_score = 0.0;  // -Score_LM
  std::size_t errors = 0;  // word-level S + I + D against the reference
};

using HypothesisScorer = std::function<double(const asr::NBestList&, std::size_t rank)>;

// One row per hypothesis. InputError when a list has no reference.
std::vector<ScoreErrorRow> score_error_table(std::span<const asr::NBestList> lists,
                                             const HypothesisScorer& score_lm);

// Mean -Score_LM per error count, ascending by count.
std::map<std::size_t, double> mean_by_error_count(std::span<const ScoreErrorRow> rows);

double score_error_pearson(std::span<const ScoreErrorRow> rows);

void write_score_error_csv(const std::filesystem::path& path, std::span<const ScoreErrorRow> rows);
void write_error_means_csv(const std::filesystem::path& path, std::span<const ScoreErrorRow> rows);

struct Summary {
  double wer = 0.0;
  double auc = 0.0;
  double nce = 0.0;
  double pearson = 0.0;
};

void write_summary_json(const std::filesystem::path& path, const Summary& summary);

}  // namespace rtd::metrics
