#include "rtd/nn/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rtd/common/errors.hpp"

namespace rtd::nn {

namespace {

thread_local std::uint64_t tls_forward_passes = 0;

AttentionParams make_attention(ParameterSet& ps, const std::string& prefix, std::size_t h,
                               Rng& rng) {
  AttentionParams a{};
  a.wq = ps.add(prefix + ".wq", h, h, Init::kXavier, rng);
  a.bq = ps.add(prefix + ".bq", 1, h, Init::kZeros, rng);
  a.wk = ps.add(prefix + ".wk", h, h, Init::kXavier, rng);
  a.bk = ps.add(prefix + ".bk", 1, h, Init::kZeros, rng);
  a.wv = ps.add(prefix + ".wv", h, h, Init::kXavier, rng);
  a.bv = ps.add(prefix + ".bv", 1, h, Init::kZeros, rng);
  a.wo = ps.add(prefix + ".wo", h, h, Init::kXavier, rng);
  a.bo = ps.add(prefix + ".bo", 1, h, Init::kZeros, rng);
  return a;
}

StackParams make_stack(ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg,
                       bool cross, Rng& rng) {
  const std::size_t h = cfg.hidden;
  StackParams s{};
  s.token_emb = ps.add(prefix + ".token_emb", cfg.vocab_size, h, Init::kNormal002, rng);
  s.pos_emb = ps.add(prefix + ".pos_emb", cfg.max_len, h, Init::kNormal002, rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    BlockParams b{};
    b.ln1_g = ps.add(p + ".ln1.gamma", 1, h, Init::kOnes, rng);
    b.ln1_b = ps.add(p + ".ln1.beta", 1, h, Init::kZeros, rng);
    b.self_attn = make_attention(ps, p + ".self_attn", h, rng);
    if (cross) {
      b.lnc_g = ps.add(p + ".ln_cross.gamma", 1, h, Init::kOnes, rng);
      b.lnc_b = ps.add(p + ".ln_cross.beta", 1, h, Init::kZeros, rng);
      b.cross_attn = make_attention(ps, p + ".cross_attn", h, rng);
    }
    b.ln2_g = ps.add(p + ".ln2.gamma", 1, h, Init::kOnes, rng);
    b.ln2_b = ps.add(p + ".ln2.beta", 1, h, Init::kZeros, rng);
    b.ffn_w1 = ps.add(p + ".ffn.w1", h, h * cfg.ffn_mult, Init::kXavier, rng);
    b.ffn_b1 = ps.add(p + ".ffn.b1", 1, h * cfg.ffn_mult, Init::kZeros, rng);
    b.ffn_w2 = ps.add(p + ".ffn.w2", h * cfg.ffn_mult, h, Init::kXavier, rng);
    b.ffn_b2 = ps.add(p + ".ffn.b2", 1, h, Init::kZeros, rng);
    s.blocks.push_back(b);
  }
  s.lnf_g = ps.add(prefix + ".ln_final.gamma", 1, h, Init::kOnes, rng);
  s.lnf_b = ps.add(prefix + ".ln_final.beta", 1, h, Init::kZeros, rng);
  return s;
}

Tape::Node attention_block(Tape& tape, const AttentionParams& a, Tape::Node query_in,
                           Tape::Node memory, std::size_t heads, bool causal,
                           std::span<const Tape::KeyRange> ranges = {}) {
  const auto q = tape.linear(query_in, a.wq, a.bq);
  const auto k = tape.linear(memory, a.wk, a.bk);
  const auto v = tape.linear(memory, a.wv, a.bv);
  const auto att = ranges.empty() ? tape.attention(q, k, v, heads, causal) : tape.attention(q, k, v, heads, ranges);
  return tape.linear(att, a.wo, a.bo);
}

Tape::Node maybe_dropout(Tape& tape, Tape::Node x, double rate, bool train, Rng* rng) {
  if (!train || rate <= 0.0) return x;
  if (rng == nullptr) throw StateError("train mode needs a random stream");
  return tape.dropout(x, rate, *rng);
}

// Runs the blocks and final norm over already-embedded input x. cross_ranges
// restricts which memory rows each row may attend to; empty means all.
Tape::Node run_stack(Tape& tape, const StackParams& s, const EncoderConfig& cfg, Tape::Node x,
                     std::optional<Tape::Node> memory, bool causal, bool train, Rng* rng,
                     std::span<const Tape::KeyRange> cross_ranges = {}) {
  Tape::Node h = x;
  for (const auto& b : s.blocks) {
    const auto a = tape.layer_norm(h, b.ln1_g, b.ln1_b);
    auto o = attention_block(tape, b.self_attn, a, a, cfg.n_heads, causal);
    h = tape.add(h, maybe_dropout(tape, o, cfg.dropout, train, rng));
    if (b.cross_attn) {
      const auto c = tape.layer_norm(h, *b.lnc_g, *b.lnc_b);
      o = attention_block(tape, *b.cross_attn, c, *memory, cfg.n_heads, false, cross_ranges);
      h = tape.add(h, maybe_dropout(tape, o, cfg.dropout, train, rng));
    }
    const auto f_in = tape.layer_norm(h, b.ln2_g, b.ln2_b);
    const auto f = tape.linear(tape.gelu(tape.linear(f_in, b.ffn_w1, b.ffn_b1)), b.ffn_w2,
                               b.ffn_b2);
    h = tape.add(h, maybe_dropout(tape, f, cfg.dropout, train, rng));
  }
  return tape.layer_norm(h, s.lnf_g, s.lnf_b);
}

Tape::Node embed(Tape& tape, const StackParams& s, std::span<const int> ids) {
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  return tape.add(tape.embedding(s.token_emb, ids), tape.embedding(s.pos_emb, positions));
}

void check_length(std::size_t len, std::size_t max_len, const char* what) {
  if (len > max_len) {
    throw LengthError(std::string(what) + " length " + std::to_string(len) + " exceeds max_len " +
                      std::to_string(max_len));
  }
}

}  // namespace

void EncoderConfig::validate() const {
  auto need = [](bool ok, const char* field, const std::string& msg) {
    if (!ok) throw ConfigError(std::string(field) + ": " + msg);
  };
  need(n_layers >= 1, "n_layers", "must be >= 1");
  need(hidden >= 1, "hidden", "must be >= 1");
  need(n_heads >= 1, "n_heads", "must be >= 1");
  need(hidden % std::max<std::size_t>(n_heads, 1) == 0, "hidden", "must be divisible by n_heads");
  need(ffn_mult >= 1, "ffn_mult", "must be >= 1");
  need(max_len >= 1, "max_len", "must be >= 1");
  need(vocab_size >= 1, "vocab_size", "must be >= 1");
  need(dropout >= 0.0 && dropout < 1.0, "dropout", "must be in [0, 1)");
}

void CmlmConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.hidden != decoder.hidden) {
    throw ConfigError("cmlm: encoder and decoder hidden sizes must match");
  }
}

EncoderModel::EncoderModel(const EncoderConfig& config, bool with_lm_head, bool with_disc_head,
                           std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  stack_ = make_stack(params_, "encoder", config_, false, rng);
  if (with_lm_head) {
    lm_head_ = HeadParams{
        params_.add("lm_head.weight", config_.hidden, config_.vocab_size, Init::kXavier, rng),
        params_.add("lm_head.bias", 1, config_.vocab_size, Init::kZeros, rng)};
  }
  if (with_disc_head) {
    disc_head_ = HeadParams{params_.add("disc_head.weight", config_.hidden, 1, Init::kXavier, rng),
                            params_.add("disc_head.bias", 1, 1, Init::kZeros, rng)};
  }
}

void EncoderModel::add_disc_head(Init init, std::uint64_t seed) {
  if (disc_head_) throw ConfigError("discriminator head already present");
  Rng rng(seed);
  disc_head_ = HeadParams{params_.add("disc_head.weight", config_.hidden, 1, init, rng),
                          params_.add("disc_head.bias", 1, 1, Init::kZeros, rng)};
}

CausalLmModel::CausalLmModel(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  stack_ = make_stack(params_, "causal", config_, false, rng);
  lm_head_ = HeadParams{
      params_.add("lm_head.weight", config_.hidden, config_.vocab_size, Init::kXavier, rng),
      params_.add("lm_head.bias", 1, config_.vocab_size, Init::kZeros, rng)};
}

CmlmModel::CmlmModel(const CmlmConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  encoder_ = make_stack(params_, "phone_encoder", config_.encoder, false, rng);
  decoder_ = make_stack(params_, "word_decoder", config_.decoder, true, rng);
  word_index_emb_ = params_.add("word_index_emb", config_.decoder.max_len, config_.decoder.hidden,
                                Init::kNormal002, rng);
  lm_head_ = HeadParams{params_.add("lm_head.weight", config_.decoder.hidden,
                                    config_.decoder.vocab_size, Init::kXavier, rng),
                        params_.add("lm_head.bias", 1, config_.decoder.vocab_size, Init::kZeros,
                                    rng)};
}

std::uint64_t forward_pass_count() { return tls_forward_passes; }

Tape::Node encoder_hidden(const EncoderModel& model, Tape& tape, std::span<const int> tokens,
                          bool train, Rng* rng) {
  const auto& cfg = model.config();
  check_length(tokens.size(), cfg.max_len, "sequence");
  ++tls_forward_passes;
  auto x = maybe_dropout(tape, embed(tape, model.stack(), tokens), cfg.dropout, train, rng);
  return run_stack(tape, model.stack(), cfg, x, std::nullopt, false, train, rng);
}

Tape::Node lm_logits(const EncoderModel& model, Tape& tape, Tape::Node hidden) {
  if (!model.has_lm_head()) throw ConfigError("model has no LM head");
  return tape.linear(hidden, model.lm_head_params()->weight, model.lm_head_params()->bias);
}

Tape::Node disc_logits(const EncoderModel& model, Tape& tape, Tape::Node hidden) {
  if (!model.has_disc_head()) throw ConfigError("model has no discriminator head");
  return tape.linear(hidden, model.disc_head_params()->weight, model.disc_head_params()->bias);
}

Tape::Node causal_logits(const CausalLmModel& model, Tape& tape, std::span<const int> tokens,
                         bool train, Rng* rng) {
  const auto& cfg = model.config();
  check_length(tokens.size(), cfg.max_len, "sequence");
  ++tls_forward_passes;
  std::vector<int> shifted;
  shifted.reserve(tokens.size());
  if (!tokens.empty()) {
    shifted.push_back(corpus::kClsId);
    shifted.insert(shifted.end(), tokens.begin(), tokens.end() - 1);
  }
  auto x = maybe_dropout(tape, embed(tape, model.stack(), shifted), cfg.dropout, train, rng);
  const auto h = run_stack(tape, model.stack(), cfg, x, std::nullopt, true, train, rng);
  return tape.linear(h, model.lm_head_params().weight, model.lm_head_params().bias);
}

Tape::Node cmlm_logits(const CmlmModel& model, Tape& tape, const corpus::PhoneSeq& phones,
                       const corpus::TokenSeq& words, bool train, Rng* rng) {
  const auto& cfg = model.config();
  check_length(phones.size(), cfg.encoder.max_len, "phone sequence");
  check_length(words.size(), cfg.decoder.max_len, "word sequence");
  ++tls_forward_passes;

  const auto phone_words = corpus::phone_word_index(phones);
  std::vector<int> token_words(words.size(), 0);
  for (std::size_t w = 0; w < words.word_spans.size(); ++w) {
    for (std::size_t i = words.word_spans[w].first; i < words.word_spans[w].second; ++i) {
      token_words[i] = static_cast<int>(w);
    }
  }
  const std::size_t table_rows = cfg.decoder.max_len;
  for (int w : phone_words) {
    if (static_cast<std::size_t>(w) >= table_rows) throw LengthError("too many words in phone sequence");
  }
  // Each word token reads only the phones of its own word. Word indices are
  // non-decreasing in both streams, so every word owns one contiguous block.
  std::vector<Tape::KeyRange> word_phones(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto lo = std::lower_bound(phone_words.begin(), phone_words.end(), token_words[i]);
    const auto hi = std::upper_bound(lo, phone_words.end(), token_words[i]);
    word_phones[i] = {static_cast<std::size_t>(lo - phone_words.begin()),
                      static_cast<std::size_t>(hi - phone_words.begin())};
  }

  auto px = tape.add(embed(tape, model.encoder_stack(), phones.phones),
                     tape.embedding(model.word_index_emb(), phone_words));
  px = maybe_dropout(tape, px, cfg.encoder.dropout, train, rng);
  const auto memory =
      run_stack(tape, model.encoder_stack(), cfg.encoder, px, std::nullopt, false, train, rng);

  auto wx = tape.add(embed(tape, model.decoder_stack(), words.tokens),
                     tape.embedding(model.word_index_emb(), token_words));
  wx = maybe_dropout(tape, wx, cfg.decoder.dropout, train, rng);
  const auto h = run_stack(tape, model.decoder_stack(), cfg.decoder, wx, memory, false, train, rng, word_phones);
  return tape.linear(h, model.lm_head_params().weight, model.lm_head_params().bias);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto z = logits.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    auto o = out.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) {
      o[j] = std::exp(z[j] - mx);
      sum += o[j];
    }
    for (auto& v : o) v /= sum;
  }
  return out;
}

Matrix encoder_forward(const EncoderModel& model, const corpus::TokenSeq& seq, bool train_mode,
                       Rng* rng) {
  if (seq.empty()) return Matrix(0, model.config().hidden);
  Tape tape(model.params());
  return tape.value(encoder_hidden(model, tape, seq.tokens, train_mode, rng));
}

Matrix lm_head(const EncoderModel& model, const Matrix& hidden) {
  if (!model.has_lm_head()) throw ConfigError("model has no LM head");
  Tape tape(model.params());
  return softmax_rows(tape.value(lm_logits(model, tape, tape.constant(hidden))));
}

std::vector<double> disc_head(const EncoderModel& model, const Matrix& hidden) {
  if (!model.has_disc_head()) throw ConfigError("model has no discriminator head");
  Tape tape(model.params());
  const Matrix& z = tape.value(disc_logits(model, tape, tape.constant(hidden)));
  std::vector<double> out(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) {
    const double v = z.data[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return out;
}

Matrix causal_forward(const CausalLmModel& model, const corpus::TokenSeq& seq) {
  if (seq.empty()) throw LengthError("causal_forward needs at least one token");
  Tape tape(model.params());
  return softmax_rows(tape.value(causal_logits(model, tape, seq.tokens, false, nullptr)));
}

Matrix cmlm_forward(const CmlmModel& model, const corpus::PhoneSeq& phones_masked,
                    const corpus::TokenSeq& words_masked) {
  Tape tape(model.params());
  return softmax_rows(
      tape.value(cmlm_logits(model, tape, phones_masked, words_masked, false, nullptr)));
}

}  // namespace rtd::nn
