#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtd/common/rng.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/corpus/lexicon.hpp"
#include "rtd/nn/matrix.hpp"
#include "rtd/nn/parameters.hpp"
#include "rtd/nn/tape.hpp"

namespace rtd::nn {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t hidden = 64;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_len = 128;
  std::size_t vocab_size = 0;
  double dropout = 0.1;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct AttentionParams {
  ParamId wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockParams {
  ParamId ln1_g, ln1_b;
  AttentionParams self_attn;
  std::optional<ParamId> lnc_g, lnc_b;
  std::optional<AttentionParams> cross_attn;
  ParamId ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Token + learned absolute position embeddings, pre-norm blocks, final norm.
struct StackParams {
  ParamId token_emb, pos_emb;
  std::vector<BlockParams> blocks;
  ParamId lnf_g, lnf_b;
};

struct HeadParams {
  ParamId weight, bias;
};

// Bidirectional encoder with an optional LM head (projection to the vocabulary
// plus softmax) and an optional discriminator head (projection to a scalar plus
// sigmoid).
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(const EncoderConfig& config, bool with_lm_head, bool with_disc_head,
               std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  bool has_lm_head() const { return lm_head_.has_value(); }
  bool has_disc_head() const { return disc_head_.has_value(); }
  const std::optional<HeadParams>& lm_head_params() const { return lm_head_; }
  const std::optional<HeadParams>& disc_head_params() const { return disc_head_; }
  const StackParams& stack() const { return stack_; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Adds a discriminator head; kZeros gives D == 0.5 everywhere.
  void add_disc_head(Init init, std::uint64_t seed);

 private:
  EncoderConfig config_;
  ParameterSet params_;
  StackParams stack_{};
  std::optional<HeadParams> lm_head_;
  std::optional<HeadParams> disc_head_;
};

// Left-to-right Transformer LM: causal self-attention, [CLS] as start symbol.
class CausalLmModel {
 public:
  CausalLmModel() = default;
  CausalLmModel(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const StackParams& stack() const { return stack_; }
  const HeadParams& lm_head_params() const { return lm_head_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  EncoderConfig config_;
  ParameterSet params_;
  StackParams stack_{};
  HeadParams lm_head_{};
};

struct CmlmConfig {
  EncoderConfig encoder;  // over phones; vocab_size = phone inventory
  EncoderConfig decoder;  // over subword tokens
  void validate() const;
  bool operator==(const CmlmConfig&) const = default;
};

// Phone-to-word conditional masked LM: a phone encoder, and a non-causal word
// decoder whose blocks cross-attend to the full phone encoding. Both streams add
// a shared word-index embedding so decoder positions can locate their phones.
class CmlmModel {
 public:
  CmlmModel() = default;
  CmlmModel(const CmlmConfig& config, std::uint64_t seed);

  const CmlmConfig& config() const { return config_; }
  const StackParams& encoder_stack() const { return encoder_; }
  const StackParams& decoder_stack() const { return decoder_; }
  ParamId word_index_emb() const { return word_index_emb_; }
  const HeadParams& lm_head_params() const { return lm_head_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  CmlmConfig config_;
  ParameterSet params_;
  StackParams encoder_{};
  StackParams decoder_{};
  ParamId word_index_emb_ = 0;
  HeadParams lm_head_{};
};

// Forward-pass instrumentation: every full model evaluation built below counts
// as one pass on the calling thread.
std::uint64_t forward_pass_count();

// ---- Tape-level builders (used for training and by the inference wrappers).

// rng may be null when train is false.
Tape::Node encoder_hidden(const EncoderModel& model, Tape& tape, std::span<const int> tokens,
                          bool train, Rng* rng);
Tape::Node lm_logits(const EncoderModel& model, Tape& tape, Tape::Node hidden);
Tape::Node disc_logits(const EncoderModel& model, Tape& tape, Tape::Node hidden);

// Logits (L, V) where row i predicts tokens[i] from [CLS], tokens[0..i-1].
Tape::Node causal_logits(const CausalLmModel& model, Tape& tape, std::span<const int> tokens,
                         bool train, Rng* rng);

// Logits (L, V) over word tokens at every decoder position. Cross-attention
// from a token reaches only the phones of the same word.
Tape::Node cmlm_logits(const CmlmModel& model, Tape& tape, const corpus::PhoneSeq& phones,
                       const corpus::TokenSeq& words, bool train, Rng* rng);

// ---- Inference API.

Matrix encoder_forward(const EncoderModel& model, const corpus::TokenSeq& seq, bool train_mode,
                       Rng* rng);
// Row-normalized distributions over the vocabulary.
Matrix lm_head(const EncoderModel& model, const Matrix& hidden);
// D(i) in (0, 1) per position.
std::vector<double> disc_head(const EncoderModel& model, const Matrix& hidden);

Matrix causal_forward(const CausalLmModel& model, const corpus::TokenSeq& seq);
Matrix cmlm_forward(const CmlmModel& model, const corpus::PhoneSeq& phones_masked,
                    const corpus::TokenSeq& words_masked);

// Row softmax with 64-bit accumulation.
Matrix softmax_rows(const Matrix& logits);

}  // namespace rtd::nn
