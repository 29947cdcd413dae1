#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rtd/asr/channel.hpp"
#include "rtd/common/rng.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/finetune/align.hpp"
#include "rtd/nn/optimizer.hpp"
#include "rtd/nn/transformer.hpp"

namespace rtd::finetune {

// Word and token labels use the discriminator's target convention.
inline constexpr int kCorrect = 0;
inline constexpr int kIncorrect = 1;
inline constexpr int kIgnored = -1;  // token excluded from the loss

// Hypothesis-side labels: match -> correct, substitute/insert -> incorrect.
// Deletions carry no label. hyp_len must equal the hypothesis length.
std::vector<int> label_words(const Alignment& alignment, std::size_t hyp_len);

// Every token of a word inherits the word label; special tokens are kIgnored.
// StructuralError when labels and spans disagree in count.
std::vector<int> project_labels_to_tokens(std::span<const int> word_labels,
                                          const corpus::TokenSeq& seq);

struct LabeledHypothesis {
  std::string utt_id;
  std::size_t hyp_rank = 0;
  corpus::Sentence words;
  std::vector<int> word_labels;
  corpus::TokenSeq tokens;
  std::vector<int> token_labels;
};

// Top-k hypotheses of every list with a reference, aligned and labeled.
// Reference-equal hypotheses are kept. Lists without a reference are skipped
// and counted under "finetune.missing_reference".
std::vector<LabeledHypothesis> build_finetune_set(std::span<const asr::NBestList> lists,
                                                  std::size_t k, const corpus::MergeTable& merges);

struct FinetuneConfig {
  std::size_t k = 5;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.1;
  double max_grad_norm = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Sum over non-ignored tokens of BCE(D_i, label_i) for one hypothesis.
double hypothesis_loss(const nn::EncoderModel& model, const LabeledHypothesis& example);

// Mean per-hypothesis loss over a set (no dropout).
double mean_loss(const nn::EncoderModel& model, std::span<const LabeledHypothesis> set);

// Gradient of the mean per-hypothesis loss; returns that mean.
double finetune_gradients(const nn::EncoderModel& model, std::span<const LabeledHypothesis> batch,
                          bool train, Rng* rng, nn::Gradients& grads);
double finetune_step(nn::EncoderModel& model, std::span<const LabeledHypothesis> batch,
                     nn::AdamOptimizer& optimizer, double max_grad_norm, Rng& rng);

// Copy of a pre-trained masked LM with a freshly initialized discriminator
// head; ConfigError when one is already attached.
nn::EncoderModel attach_new_disc_head(const nn::EncoderModel& bert, nn::Init init,
                                      std::uint64_t seed);

// Returns the per-step mean training loss.
std::vector<double> train_finetune(nn::EncoderModel& model, std::span<const LabeledHypothesis> set,
                                   const FinetuneConfig& cfg);

// {"utt_id", "hyp_rank", "words", "word_labels", "token_labels"} per line.
void write_labeled(const std::filesystem::path& path, std::span<const LabeledHypothesis> set);

}  // namespace rtd::finetune
