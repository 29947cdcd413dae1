#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rtd/common/rng.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/corpus/lexicon.hpp"
#include "rtd/nn/matrix.hpp"
#include "rtd/nn/optimizer.hpp"
#include "rtd/nn/transformer.hpp"

namespace rtd::pretrain {

using corpus::PhoneSeq;
using corpus::TokenSeq;

struct MaskPlan {
  std::vector<std::size_t> positions;  // sorted, unique
  double rate = 0.0;

  bool empty() const { return positions.empty(); }
  bool operator==(const MaskPlan&) const = default;
};

struct CorruptionSample {
  TokenSeq y;
  TokenSeq y_masked;
  MaskPlan m;
  TokenSeq y_corrupt;
  std::vector<bool> replaced;  // replaced[i] == (y_corrupt[i] != y[i])
  PhoneSeq phones_masked;      // P-ELECTRA only
};

// A pre-training sequence: subword tokens plus the phones of the same words.
struct Example {
  TokenSeq words;
  PhoneSeq phones;
};

struct PretrainBatch {
  std::vector<Example> entries;
  std::vector<std::vector<std::size_t>> sources;  // input indices packed into each entry
  std::size_t skipped = 0;
};

// 0 when rate == 0 or nothing is maskable, else max(1, round(rate * n_maskable)).
std::size_t mask_count(std::size_t n_maskable, double rate);

// Uniform sampling without replacement over the non-special token positions.
MaskPlan select_mask_positions(const TokenSeq& seq, double rate, Rng& rng);
// Same rule over phones; boundary and special phones are never masked.
MaskPlan select_phone_positions(const PhoneSeq& phones, double rate, Rng& rng);

// StructuralError when a position is out of range.
TokenSeq apply_mask(const TokenSeq& y, const MaskPlan& m);
PhoneSeq apply_phone_mask(const PhoneSeq& p, const MaskPlan& m);

// Draws y_corrupt from per-position logits (rows aligned with y). Temperature 0
// takes the argmax; the draw is over the full vocabulary.
CorruptionSample sample_from_logits(const TokenSeq& y, const TokenSeq& y_masked, const MaskPlan& m,
                                    const nn::Matrix& logits, double temperature, Rng& rng);

// ConfigError when gen has no LM head.
CorruptionSample generator_sample(const nn::EncoderModel& gen, const TokenSeq& y,
                                  const TokenSeq& y_masked, const MaskPlan& m, double temperature,
                                  Rng& rng);

// Sum over m of -log p_G(y_i | y_masked). Empty m gives 0 and bumps the
// "pretrain.empty_mask" counter.
double mlm_loss(const nn::EncoderModel& gen, const TokenSeq& y, const TokenSeq& y_masked,
                const MaskPlan& m);

// Sum over all positions of BCE(D_i, replaced_i).
double disc_loss(const nn::EncoderModel& disc, const CorruptionSample& sample);

// Masks words and phones, then re-samples the masked words from the CMLM given
// both masked streams.
CorruptionSample pelectra_corrupt(const nn::CmlmModel& gen, const TokenSeq& words,
                                  const PhoneSeq& phones, double word_rate, double phone_rate,
                                  double temperature, Rng& rng);

// Phone edit distance between original and replacement surface, for every
// word containing a replaced token.
std::vector<std::size_t> replacement_phone_distances(const CorruptionSample& sample,
                                                     const corpus::MergeTable& merges);

// Greedy packing in input order; a sentence is never split. Oversize inputs
// are skipped and counted under "pretrain.oversize_skipped".
PretrainBatch pack_sequences(std::span<const Example> sentences, std::size_t max_tokens,
                             std::size_t max_phones);

struct PretrainConfig {
  double mask_rate = 0.15;
  double phone_mask_rate = 0.30;
  double lambda_d = 50.0;
  double temperature = 1.0;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.1;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
  std::size_t pack_len = 64;   // tokens per packed sequence; 0 disables packing
  std::uint64_t seed = 1;

  void validate() const;  // ConfigError naming the field
};

struct StepLosses {
  double gen = 0.0;   // mean over sequences of L_G
  double disc = 0.0;  // mean over sequences of L_D
};

// Gradients of L_G (into g_gen) and lambda_d * L_D (into g_disc), averaged over
// the batch. Sampled tokens are hard decisions, so nothing flows from L_D into
// the generator.
StepLosses electra_gradients(const nn::EncoderModel& gen, const nn::EncoderModel& disc,
                             std::span<const Example> batch, const PretrainConfig& cfg, Rng& rng,
                             nn::Gradients& g_gen, nn::Gradients& g_disc);
StepLosses electra_step(nn::EncoderModel& gen, nn::EncoderModel& disc,
                        std::span<const Example> batch, const PretrainConfig& cfg,
                        nn::AdamOptimizer& gen_opt, nn::AdamOptimizer& disc_opt, Rng& rng);

StepLosses pelectra_gradients(const nn::CmlmModel& gen, const nn::EncoderModel& disc,
                              std::span<const Example> batch, const PretrainConfig& cfg, Rng& rng,
                              nn::Gradients& g_gen, nn::Gradients& g_disc);
StepLosses pelectra_step(nn::CmlmModel& gen, nn::EncoderModel& disc, std::span<const Example> batch,
                         const PretrainConfig& cfg, nn::AdamOptimizer& gen_opt,
                         nn::AdamOptimizer& disc_opt, Rng& rng);

struct LossRow {
  std::size_t step = 0;
  double gen = 0.0;
  double disc = 0.0;
};

std::vector<Example> make_examples(std::span<const corpus::Sentence> sentences,
                                   const corpus::MergeTable& merges, const corpus::Lexicon& lexicon);

// Full training loops over packed data; batches are drawn epoch-wise from a
// seeded shuffle.
std::vector<LossRow> train_electra(nn::EncoderModel& gen, nn::EncoderModel& disc,
                                   std::span<const Example> data, const PretrainConfig& cfg);
std::vector<LossRow> train_pelectra(nn::CmlmModel& gen, nn::EncoderModel& disc,
                                    std::span<const Example> data, const PretrainConfig& cfg);
// Plain masked LM (the BERT baseline); disc column stays 0.
std::vector<LossRow> train_mlm(nn::EncoderModel& bert, std::span<const Example> data,
                               const PretrainConfig& cfg);
// Left-to-right LM on unpacked sentences; loss is the mean per-sequence NLL.
std::vector<LossRow> train_causal(nn::CausalLmModel& lm, std::span<const Example> data,
                                  const PretrainConfig& cfg);

// CSV header: step,L_G,L_D
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRow> rows);

}  // namespace rtd::pretrain
