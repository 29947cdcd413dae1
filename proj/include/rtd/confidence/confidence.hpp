#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtd/asr/channel.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/nn/transformer.hpp"

namespace rtd::confidence {

struct ConfidenceConfig {
  double gamma = 0.6;
  void validate() const;
};

// c = 1 - D per token. Special-token positions hold NaN; they never belong
// to a word span. ConfigError without a discriminator head.
std::vector<double> token_confidence(const nn::EncoderModel& model, const corpus::TokenSeq& seq);

// Minimum over each word's token span. StructuralError for a span that is
// empty, out of range or covers a special position.
std::vector<double> word_confidence(std::span<const double> token_c,
                                    std::span<const std::pair<std::size_t, std::size_t>> spans);

// (1 - gamma) p + gamma c elementwise. InputError on length mismatch,
// ConfigError for gamma outside [0, 1].
std::vector<double> interpolate(std::span<const double> p_word, std::span<const double> c_word,
                                double gamma);

struct WordConfidence {
  std::string utt_id;
  corpus::Sentence words;
  std::vector<double> p_word;
  std::vector<double> c_word;
  std::vector<double> c_prime;
  std::optional<std::vector<int>> labels;  // 1 = word is correct
};

// Confidence for the top hypothesis of each list. Labels are attached when
// the list has a reference.
std::vector<WordConfidence> score_top1(std::span<const asr::NBestList> lists,
                                       const nn::EncoderModel& model,
                                       const corpus::MergeTable& merges, double gamma,
                                       std::size_t workers = 1);

// Recomputes c_prime for a new gamma.
void set_gamma(std::span<WordConfidence> set, double gamma);

struct ConfidenceMetrics {
  double auc = 0.0;
  double nce = 0.0;
};

// Targets are 1 for a correct word. UndefinedMetricError for a single class.
ConfidenceMetrics evaluate_confidence(std::span<const double> scores, std::span<const int> correct);

enum class Source { kPWord, kCWord, kCPrime };

// Pools every labeled word of the set; InputError when a word lacks a label.
ConfidenceMetrics evaluate_set(std::span<const WordConfidence> set, Source source);

std::vector<double> default_gamma_grid();  // 0, 0.05, ..., 1

struct GammaResult {
  double gamma = 0.0;
  double nce = 0.0;
  double auc = 0.0;
};

// Grid search for the highest pooled NCE; ties go to smaller gamma.
GammaResult tune_gamma(std::span<const WordConfidence> dev, std::span<const double> grid);

// {"utt_id", "words", "p_word", "c_word", "c_prime", "labels"?} per line.
void write_confidence_jsonl(const std::filesystem::path& path, std::span<const WordConfidence> set);

}  // namespace rtd::confidence
