#include "rtd/pretrain/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "rtd/common/counters.hpp"
#include "rtd/common/errors.hpp"
#include "rtd/nn/tape.hpp"

namespace rtd::pretrain {

namespace {

void check_rate(double rate, const char* what) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError(std::string(what) + " must lie in [0, 1], got " + std::to_string(rate));
  }
}

MaskPlan sample_plan(const std::vector<std::size_t>& maskable, double rate, Rng& rng) {
  MaskPlan plan;
  plan.rate = rate;
  const std::size_t k = mask_count(maskable.size(), rate);
  auto pool = maskable;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_int(pool.size() - i)]);
  }
  plan.positions.assign(pool.begin(), pool.begin() + static_cast<long>(k));
  std::sort(plan.positions.begin(), plan.positions.end());
  return plan;
}

std::vector<int> masked_targets(const TokenSeq& y, const MaskPlan& m) {
  std::vector<int> t;
  t.reserve(m.positions.size());
  for (auto i : m.positions) t.push_back(y.tokens[i]);
  return t;
}

std::vector<double> replaced_targets(const CorruptionSample& s) {
  std::vector<double> t(s.replaced.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = s.replaced[i] ? 1.0 : 0.0;
  return t;
}

// L_D on a recording tape; returns the unscaled loss value.
double disc_backward(const nn::EncoderModel& disc, const CorruptionSample& sample, double weight,
                     Rng& rng, nn::Gradients& g_disc) {
  nn::Tape tape(disc.params(), &g_disc);
  const auto h = nn::encoder_hidden(disc, tape, sample.y_corrupt.tokens, true, &rng);
  const auto targets = replaced_targets(sample);
  const std::vector<double> ones(targets.size(), 1.0);
  const auto loss = tape.sigmoid_bce(nn::disc_logits(disc, tape, h), targets, ones);
  const double value = tape.value(loss)(0, 0);
  tape.backward(tape.scale(loss, weight));
  return value;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

// Epoch-wise batch drawer over a fixed pool.
class BatchDrawer {
 public:
  BatchDrawer(std::span<const Example> pool, std::uint64_t seed) : pool_(pool), rng_(seed) {
    if (pool_.empty()) throw InputError("no pre-training sequences left after packing");
  }
  std::vector<Example> next(std::size_t size) {
    std::vector<Example> batch;
    while (batch.size() < size) {
      if (cursor_ == order_.size()) {
        order_ = shuffled(pool_.size(), rng_);
        cursor_ = 0;
      }
      batch.push_back(pool_[order_[cursor_++]]);
    }
    return batch;
  }

 private:
  std::span<const Example> pool_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

std::vector<Example> training_pool(std::span<const Example> data, const PretrainConfig& cfg,
                                   std::size_t max_tokens, std::size_t max_phones) {
  if (cfg.pack_len == 0) {
    std::vector<Example> out;
    for (const auto& ex : data) {
      if (ex.words.size() == 0 || ex.words.size() > max_tokens || ex.phones.size() > max_phones) {
        Counters::global().increment("pretrain.oversize_skipped");
        continue;
      }
      out.push_back(ex);
    }
    return out;
  }
  if (cfg.pack_len > max_tokens) {
    throw ConfigError("pack_len " + std::to_string(cfg.pack_len) + " exceeds model max_len " +
                      std::to_string(max_tokens));
  }
  return pack_sequences(data, cfg.pack_len, max_phones).entries;
}

void update(nn::ParameterSet& params, nn::Gradients& grads, nn::AdamOptimizer& opt,
            double max_norm) {
  nn::clip_grad_norm(grads, max_norm);
  opt.step(params, grads);
}

}  // namespace

std::size_t mask_count(std::size_t n_maskable, double rate) {
  check_rate(rate, "mask rate");
  if (rate == 0.0 || n_maskable == 0) return 0;
  const auto k = static_cast<std::size_t>(std::lround(rate * static_cast<double>(n_maskable)));
  return std::clamp<std::size_t>(k, 1, n_maskable);
}

MaskPlan select_mask_positions(const TokenSeq& seq, double rate, Rng& rng) {
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!corpus::MergeTable::is_special(seq.tokens[i])) maskable.push_back(i);
  }
  return sample_plan(maskable, rate, rng);
}

MaskPlan select_phone_positions(const PhoneSeq& phones, double rate, Rng& rng) {
  const auto& inv = corpus::PhoneInventory::standard();
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    if (!inv.is_special(phones.phones[i])) maskable.push_back(i);
  }
  return sample_plan(maskable, rate, rng);
}

TokenSeq apply_mask(const TokenSeq& y, const MaskPlan& m) {
  TokenSeq out = y;
  for (auto i : m.positions) {
    if (i >= y.size()) {
      throw StructuralError("mask position " + std::to_string(i) + " outside sequence of length " +
                            std::to_string(y.size()));
    }
    out.tokens[i] = corpus::kMaskId;
  }
  return out;
}

PhoneSeq apply_phone_mask(const PhoneSeq& p, const MaskPlan& m) {
  PhoneSeq out = p;
  for (auto i : m.positions) {
    if (i >= p.size()) throw StructuralError("phone mask position out of range");
    out.phones[i] = corpus::PhoneInventory::kMask;
  }
  return out;
}

CorruptionSample sample_from_logits(const TokenSeq& y, const TokenSeq& y_masked, const MaskPlan& m,
                                    const nn::Matrix& logits, double temperature, Rng& rng) {
  if (logits.rows != y.size()) throw StructuralError("logit rows do not match sequence length");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  CorruptionSample s;
  s.y = y;
  s.y_masked = y_masked;
  s.m = m;
  s.y_corrupt = y;
  std::vector<double> weights(logits.cols);
  for (auto i : m.positions) {
    const auto z = logits.row(i);
    std::size_t pick = 0;
    if (temperature == 0.0) {
      pick = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    } else {
      const double mx = *std::max_element(z.begin(), z.end());
      for (std::size_t v = 0; v < z.size(); ++v) weights[v] = std::exp((z[v] - mx) / temperature);
      pick = rng.categorical(weights);
    }
    s.y_corrupt.tokens[i] = static_cast<int>(pick);
  }
  s.replaced.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) s.replaced[i] = s.y_corrupt.tokens[i] != y.tokens[i];
  return s;
}

CorruptionSample generator_sample(const nn::EncoderModel& gen, const TokenSeq& y,
                                  const TokenSeq& y_masked, const MaskPlan& m, double temperature,
                                  Rng& rng) {
  if (!gen.has_lm_head()) throw ConfigError("generator has no LM head");
  nn::Tape tape(gen.params());
  const auto logits =
      nn::lm_logits(gen, tape, nn::encoder_hidden(gen, tape, y_masked.tokens, false, nullptr));
  return sample_from_logits(y, y_masked, m, tape.value(logits), temperature, rng);
}

double mlm_loss(const nn::EncoderModel& gen, const TokenSeq& y, const TokenSeq& y_masked,
                const MaskPlan& m) {
  if (m.empty()) {
    Counters::global().increment("pretrain.empty_mask");
    return 0.0;
  }
  nn::Tape tape(gen.params());
  const auto logits =
      nn::lm_logits(gen, tape, nn::encoder_hidden(gen, tape, y_masked.tokens, false, nullptr));
  const auto targets = masked_targets(y, m);
  return tape.value(tape.softmax_cross_entropy(logits, m.positions, targets))(0, 0);
}

double disc_loss(const nn::EncoderModel& disc, const CorruptionSample& sample) {
  nn::Tape tape(disc.params());
  const auto h = nn::encoder_hidden(disc, tape, sample.y_corrupt.tokens, false, nullptr);
  const auto targets = replaced_targets(sample);
  const std::vector<double> ones(targets.size(), 1.0);
  return tape.value(tape.sigmoid_bce(nn::disc_logits(disc, tape, h), targets, ones))(0, 0);
}

CorruptionSample pelectra_corrupt(const nn::CmlmModel& gen, const TokenSeq& words,
                                  const PhoneSeq& phones, double word_rate, double phone_rate,
                                  double temperature, Rng& rng) {
  const auto m = select_mask_positions(words, word_rate, rng);
  const auto y_masked = apply_mask(words, m);
  const auto p_masked = apply_phone_mask(phones, select_phone_positions(phones, phone_rate, rng));
  nn::Tape tape(gen.params());
  const auto logits = nn::cmlm_logits(gen, tape, p_masked, y_masked, false, nullptr);
  auto s = sample_from_logits(words, y_masked, m, tape.value(logits), temperature, rng);
  s.phones_masked = p_masked;
  return s;
}

std::vector<std::size_t> replacement_phone_distances(const CorruptionSample& sample,
                                                     const corpus::MergeTable& merges) {
  auto surface = [&](const TokenSeq& seq, std::size_t b, std::size_t e) {
    std::string s;
    for (std::size_t i = b; i < e; ++i) {
      const int t = seq.tokens[i];
      if (corpus::MergeTable::is_special(t)) continue;
      for (char c : merges.token(t)) {
        if (c != corpus::kBoundaryMarker) s.push_back(c);
      }
    }
    return s;
  };
  std::vector<std::size_t> out;
  for (const auto& [b, e] : sample.y.word_spans) {
    bool changed = false;
    for (std::size_t i = b; i < e; ++i) changed = changed || sample.replaced[i];
    if (!changed) continue;
    out.push_back(corpus::phone_distance(surface(sample.y, b, e), surface(sample.y_corrupt, b, e)));
  }
  return out;
}

PretrainBatch pack_sequences(std::span<const Example> sentences, std::size_t max_tokens,
                             std::size_t max_phones) {
  PretrainBatch batch;
  Example cur;
  std::vector<std::size_t> cur_src;
  auto flush = [&] {
    if (cur_src.empty()) return;
    batch.entries.push_back(std::move(cur));
    batch.sources.push_back(std::move(cur_src));
    cur = Example{};
    cur_src.clear();
  };
  for (std::size_t idx = 0; idx < sentences.size(); ++idx) {
    const auto& s = sentences[idx];
    if (s.words.size() == 0 || s.words.size() > max_tokens || s.phones.size() > max_phones) {
      ++batch.skipped;
      Counters::global().increment("pretrain.oversize_skipped");
      continue;
    }
    const std::size_t extra_phone = cur_src.empty() ? 0 : 1;
    if (!cur_src.empty() && (cur.words.size() + s.words.size() > max_tokens ||
                             cur.phones.size() + extra_phone + s.phones.size() > max_phones)) {
      flush();
    }
    const std::size_t offset = cur.words.size();
    cur.words.tokens.insert(cur.words.tokens.end(), s.words.tokens.begin(), s.words.tokens.end());
    for (const auto& [b, e] : s.words.word_spans) cur.words.word_spans.emplace_back(b + offset, e + offset);
    if (!cur_src.empty()) cur.phones.phones.push_back(corpus::PhoneInventory::kBoundary);
    cur.phones.phones.insert(cur.phones.phones.end(), s.phones.phones.begin(), s.phones.phones.end());
    cur_src.push_back(idx);
  }
  flush();
  return batch;
}

void PretrainConfig::validate() const {
  check_rate(mask_rate, "mask_rate");
  check_rate(phone_mask_rate, "phone_mask_rate");
  if (!(lambda_d >= 0.0)) throw ConfigError("lambda_d must be >= 0");
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in [0, 1)");
  }
}

StepLosses electra_gradients(const nn::EncoderModel& gen, const nn::EncoderModel& disc,
                             std::span<const Example> batch, const PretrainConfig& cfg, Rng& rng,
                             nn::Gradients& g_gen, nn::Gradients& g_disc) {
  StepLosses out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto m = select_mask_positions(ex.words, cfg.mask_rate, rng);
    const auto y_masked = apply_mask(ex.words, m);
    nn::Matrix logits;
    {
      nn::Tape tape(gen.params(), &g_gen);
      const auto lg = nn::lm_logits(gen, tape, nn::encoder_hidden(gen, tape, y_masked.tokens, true, &rng));
      logits = tape.value(lg);
      if (!m.empty()) {
        const auto targets = masked_targets(ex.words, m);
        const auto loss = tape.softmax_cross_entropy(lg, m.positions, targets);
        out.gen += tape.value(loss)(0, 0) * inv;
        tape.backward(tape.scale(loss, inv));
      } else {
        Counters::global().increment("pretrain.empty_mask");
      }
    }
    const auto sample = sample_from_logits(ex.words, y_masked, m, logits, cfg.temperature, rng);
    out.disc += disc_backward(disc, sample, cfg.lambda_d * inv, rng, g_disc) * inv;
  }
  return out;
}

StepLosses electra_step(nn::EncoderModel& gen, nn::EncoderModel& disc,
                        std::span<const Example> batch, const PretrainConfig& cfg,
                        nn::AdamOptimizer& gen_opt, nn::AdamOptimizer& disc_opt, Rng& rng) {
  nn::Gradients g_gen(gen.params()), g_disc(disc.params());
  const auto losses = electra_gradients(gen, disc, batch, cfg, rng, g_gen, g_disc);
  update(gen.params(), g_gen, gen_opt, cfg.max_grad_norm);
  update(disc.params(), g_disc, disc_opt, cfg.max_grad_norm);
  return losses;
}

StepLosses pelectra_gradients(const nn::CmlmModel& gen, const nn::EncoderModel& disc,
                              std::span<const Example> batch, const PretrainConfig& cfg, Rng& rng,
                              nn::Gradients& g_gen, nn::Gradients& g_disc) {
  StepLosses out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto m = select_mask_positions(ex.words, cfg.mask_rate, rng);
    const auto y_masked = apply_mask(ex.words, m);
    const auto p_masked =
        apply_phone_mask(ex.phones, select_phone_positions(ex.phones, cfg.phone_mask_rate, rng));
    nn::Matrix logits;
    {
      nn::Tape tape(gen.params(), &g_gen);
      const auto lg = nn::cmlm_logits(gen, tape, p_masked, y_masked, true, &rng);
      logits = tape.value(lg);
      if (!m.empty()) {
        const auto targets = masked_targets(ex.words, m);
        const auto loss = tape.softmax_cross_entropy(lg, m.positions, targets);
        out.gen += tape.value(loss)(0, 0) * inv;
        tape.backward(tape.scale(loss, inv));
      } else {
        Counters::global().increment("pretrain.empty_mask");
      }
    }
    auto sample = sample_from_logits(ex.words, y_masked, m, logits, cfg.temperature, rng);
    sample.phones_masked = p_masked;
    out.disc += disc_backward(disc, sample, cfg.lambda_d * inv, rng, g_disc) * inv;
  }
  return out;
}

StepLosses pelectra_step(nn::CmlmModel& gen, nn::EncoderModel& disc, std::span<const Example> batch,
                         const PretrainConfig& cfg, nn::AdamOptimizer& gen_opt,
                         nn::AdamOptimizer& disc_opt, Rng& rng) {
  nn::Gradients g_gen(gen.params()), g_disc(disc.params());
  const auto losses = pelectra_gradients(gen, disc, batch, cfg, rng, g_gen, g_disc);
  update(gen.params(), g_gen, gen_opt, cfg.max_grad_norm);
  update(disc.params(), g_disc, disc_opt, cfg.max_grad_norm);
  return losses;
}

std::vector<Example> make_examples(std::span<const corpus::Sentence> sentences,
                                   const corpus::MergeTable& merges, const corpus::Lexicon& lexicon) {
  std::vector<Example> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    out.push_back({corpus::tokenize(s, merges), corpus::words_to_phones(s, lexicon)});
  }
  return out;
}

std::vector<LossRow> train_electra(nn::EncoderModel& gen, nn::EncoderModel& disc,
                                   std::span<const Example> data, const PretrainConfig& cfg) {
  cfg.validate();
  const auto pool = training_pool(data, cfg, std::min(gen.config().max_len, disc.config().max_len),
                                  std::numeric_limits<std::size_t>::max());
  const nn::LinearSchedule sched{cfg.steps, cfg.peak_lr, cfg.warmup_fraction};
  nn::AdamOptimizer gen_opt(gen.params(), sched), disc_opt(disc.params(), sched);
  BatchDrawer drawer(pool, derive_seed(cfg.seed, "electra.batches"));
  Rng rng(derive_seed(cfg.seed, "electra.corrupt"));
  std::vector<LossRow> log;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = drawer.next(cfg.batch_size);
    const auto l = electra_step(gen, disc, batch, cfg, gen_opt, disc_opt, rng);
    log.push_back({step, l.gen, l.disc});
  }
  return log;
}

std::vector<LossRow> train_pelectra(nn::CmlmModel& gen, nn::EncoderModel& disc,
                                    std::span<const Example> data, const PretrainConfig& cfg) {
  cfg.validate();
  const auto& gc = gen.config();
  const auto pool = training_pool(data, cfg, std::min(gc.decoder.max_len, disc.config().max_len),
                                  gc.encoder.max_len);
  const nn::LinearSchedule sched{cfg.steps, cfg.peak_lr, cfg.warmup_fraction};
  nn::AdamOptimizer gen_opt(gen.params(), sched), disc_opt(disc.params(), sched);
  BatchDrawer drawer(pool, derive_seed(cfg.seed, "pelectra.batches"));
  Rng rng(derive_seed(cfg.seed, "pelectra.corrupt"));
  std::vector<LossRow> log;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = drawer.next(cfg.batch_size);
    const auto l = pelectra_step(gen, disc, batch, cfg, gen_opt, disc_opt, rng);
    log.push_back({step, l.gen, l.disc});
  }
  return log;
}

std::vector<LossRow> train_mlm(nn::EncoderModel& bert, std::span<const Example> data,
                               const PretrainConfig& cfg) {
  cfg.validate();
  if (!bert.has_lm_head()) throw ConfigError("masked LM training needs an LM head");
  const auto pool = training_pool(data, cfg, bert.config().max_len, std::numeric_limits<std::size_t>::max());
  const nn::LinearSchedule sched{cfg.steps, cfg.peak_lr, cfg.warmup_fraction};
  nn::AdamOptimizer opt(bert.params(), sched);
  BatchDrawer drawer(pool, derive_seed(cfg.seed, "mlm.batches"));
  Rng rng(derive_seed(cfg.seed, "mlm.mask"));
  std::vector<LossRow> log;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = drawer.next(cfg.batch_size);
    const double inv = 1.0 / static_cast<double>(batch.size());
    nn::Gradients grads(bert.params());
    double total = 0.0;
    for (const auto& ex : batch) {
      const auto m = select_mask_positions(ex.words, cfg.mask_rate, rng);
      if (m.empty()) {
        Counters::global().increment("pretrain.empty_mask");
        continue;
      }
      const auto y_masked = apply_mask(ex.words, m);
      nn::Tape tape(bert.params(), &grads);
      const auto lg = nn::lm_logits(bert, tape, nn::encoder_hidden(bert, tape, y_masked.tokens, true, &rng));
      const auto targets = masked_targets(ex.words, m);
      const auto loss = tape.softmax_cross_entropy(lg, m.positions, targets);
      total += tape.value(loss)(0, 0) * inv;
      tape.backward(tape.scale(loss, inv));
    }
    update(bert.params(), grads, opt, cfg.max_grad_norm);
    log.push_back({step, total, 0.0});
  }
  return log;
}

std::vector<LossRow> train_causal(nn::CausalLmModel& lm, std::span<const Example> data,
                                  const PretrainConfig& cfg) {
  cfg.validate();
  auto unpacked = cfg;
  unpacked.pack_len = 0;
  const auto pool = training_pool(data, unpacked, lm.config().max_len, std::numeric_limits<std::size_t>::max());
  const nn::LinearSchedule sched{cfg.steps, cfg.peak_lr, cfg.warmup_fraction};
  nn::AdamOptimizer opt(lm.params(), sched);
  BatchDrawer drawer(pool, derive_seed(cfg.seed, "causal.batches"));
  Rng rng(derive_seed(cfg.seed, "causal.dropout"));
  std::vector<LossRow> log;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = drawer.next(cfg.batch_size);
    const double inv = 1.0 / static_cast<double>(batch.size());
    nn::Gradients grads(lm.params());
    double total = 0.0;
    for (const auto& ex : batch) {
      nn::Tape tape(lm.params(), &grads);
      const auto lg = nn::causal_logits(lm, tape, ex.words.tokens, true, &rng);
      std::vector<std::size_t> rows(ex.words.size());
      std::iota(rows.begin(), rows.end(), 0);
      const auto loss = tape.softmax_cross_entropy(lg, rows, ex.words.tokens);
      total += tape.value(loss)(0, 0) * inv;
      tape.backward(tape.scale(loss, inv));
    }
    update(lm.params(), grads, opt, cfg.max_grad_norm);
    log.push_back({step, total, 0.0});
  }
  return log;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "step,L_G,L_D\n";
  out.precision(10);
  for (const auto& r : rows) out << r.step << ',' << r.gen << ',' << r.disc << '\n';
}

}  // namespace rtd::pretrain
