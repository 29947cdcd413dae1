#include "rtd/finetune/finetune.hpp"

#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "rtd/common/counters.hpp"
#include "rtd/common/errors.hpp"
#include "rtd/nn/tape.hpp"

namespace rtd::finetune {

namespace {

std::vector<double> targets_of(const LabeledHypothesis& ex, std::vector<double>& weights) {
  std::vector<double> t(ex.token_labels.size(), 0.0);
  weights.assign(ex.token_labels.size(), 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (ex.token_labels[i] == kIgnored) continue;
    t[i] = ex.token_labels[i] == kIncorrect ? 1.0 : 0.0;
    weights[i] = 1.0;
  }
  return t;
}

}  // namespace

std::vector<int> label_words(const Alignment& alignment, std::size_t hyp_len) {
  std::vector<int> labels(hyp_len, kCorrect);
  std::size_t seen = 0;
  for (const auto& op : alignment.ops) {
    if (!op.hyp_index) continue;
    if (*op.hyp_index >= hyp_len) throw StructuralError("alignment refers past the hypothesis end");
    labels[*op.hyp_index] = op.kind == OpKind::kMatch ? kCorrect : kIncorrect;
    ++seen;
  }
  if (seen != hyp_len) throw StructuralError("alignment does not cover the hypothesis");
  return labels;
}

std::vector<int> project_labels_to_tokens(std::span<const int> word_labels,
                                          const corpus::TokenSeq& seq) {
  if (word_labels.size() != seq.word_spans.size()) {
    throw StructuralError(std::to_string(word_labels.size()) + " word labels for " +
                          std::to_string(seq.word_spans.size()) + " word spans");
  }
  std::vector<int> out(seq.size(), kIgnored);
  for (std::size_t w = 0; w < word_labels.size(); ++w) {
    const auto [b, e] = seq.word_spans[w];
    if (b > e || e > seq.size()) throw StructuralError("word span out of range");
    for (std::size_t i = b; i < e; ++i) {
      out[i] = corpus::MergeTable::is_special(seq.tokens[i]) ? kIgnored : word_labels[w];
    }
  }
  return out;
}

std::vector<LabeledHypothesis> build_finetune_set(std::span<const asr::NBestList> lists,
                                                  std::size_t k, const corpus::MergeTable& merges) {
  std::vector<LabeledHypothesis> out;
  for (const auto& l : lists) {
    if (!l.reference) {
      Counters::global().increment("finetune.missing_reference");
      continue;
    }
    for (std::size_t r = 0; r < std::min(k, l.hyps.size()); ++r) {
      LabeledHypothesis ex;
      ex.utt_id = l.utt_id;
      ex.hyp_rank = r;
      ex.words = l.hyps[r].words;
      ex.word_labels = label_words(align(*l.reference, ex.words), ex.words.size());
      ex.tokens = corpus::tokenize(ex.words, merges);
      ex.token_labels = project_labels_to_tokens(ex.word_labels, ex.tokens);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

void FinetuneConfig::validate() const {
  if (k < 1) throw ConfigError("finetune.k must be >= 1");
  if (steps < 1) throw ConfigError("finetune.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("finetune.batch_size must be >= 1");
  if (!(peak_lr > 0.0)) throw ConfigError("finetune.peak_lr must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("finetune.warmup_fraction must lie in [0, 1)");
  }
}

double hypothesis_loss(const nn::EncoderModel& model, const LabeledHypothesis& example) {
  nn::Tape tape(model.params());
  std::vector<double> weights;
  const auto targets = targets_of(example, weights);
  const auto h = nn::encoder_hidden(model, tape, example.tokens.tokens, false, nullptr);
  return tape.value(tape.sigmoid_bce(nn::disc_logits(model, tape, h), targets, weights))(0, 0);
}

double mean_loss(const nn::EncoderModel& model, std::span<const LabeledHypothesis> set) {
  if (set.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : set) total += hypothesis_loss(model, ex);
  return total / static_cast<double>(set.size());
}

double finetune_gradients(const nn::EncoderModel& model, std::span<const LabeledHypothesis> batch,
                          bool train, Rng* rng, nn::Gradients& grads) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    nn::Tape tape(model.params(), &grads);
    std::vector<double> weights;
    const auto targets = targets_of(ex, weights);
    const auto h = nn::encoder_hidden(model, tape, ex.tokens.tokens, train, rng);
    const auto loss = tape.sigmoid_bce(nn::disc_logits(model, tape, h), targets, weights);
    total += tape.value(loss)(0, 0) * inv;
    tape.backward(tape.scale(loss, inv));
  }
  return total;
}

double finetune_step(nn::EncoderModel& model, std::span<const LabeledHypothesis> batch,
                     nn::AdamOptimizer& optimizer, double max_grad_norm, Rng& rng) {
  if (!model.has_disc_head()) throw ConfigError("fine-tuning needs a discriminator head");
  nn::Gradients grads(model.params());
  const double loss = finetune_gradients(model, batch, true, &rng, grads);
  nn::clip_grad_norm(grads, max_grad_norm);
  optimizer.step(model.params(), grads);
  return loss;
}

nn::EncoderModel attach_new_disc_head(const nn::EncoderModel& bert, nn::Init init,
                                      std::uint64_t seed) {
  nn::EncoderModel out = bert;
  out.add_disc_head(init, seed);
  return out;
}

std::vector<double> train_finetune(nn::EncoderModel& model, std::span<const LabeledHypothesis> set,
                                   const FinetuneConfig& cfg) {
  cfg.validate();
  if (set.empty()) throw InputError("empty fine-tuning set");
  nn::AdamOptimizer opt(model.params(), nn::LinearSchedule{cfg.steps, cfg.peak_lr, cfg.warmup_fraction});
  Rng order_rng(derive_seed(cfg.seed, "finetune.batches"));
  Rng rng(derive_seed(cfg.seed, "finetune.dropout"));
  std::vector<std::size_t> order(set.size());
  std::size_t cursor = order.size();
  std::vector<double> log;
  std::vector<LabeledHypothesis> batch;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
        cursor = 0;
      }
      batch.push_back(set[order[cursor++]]);
    }
    log.push_back(finetune_step(model, batch, opt, cfg.max_grad_norm, rng));
  }
  return log;
}

void write_labeled(const std::filesystem::path& path, std::span<const LabeledHypothesis> set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& ex : set) {
    nlohmann::json j = {{"utt_id", ex.utt_id},
                        {"hyp_rank", ex.hyp_rank},
                        {"words", ex.words},
                        {"word_labels", ex.word_labels},
                        {"token_labels", ex.token_labels}};
    out << j.dump() << '\n';
  }
}

}  // namespace rtd::finetune
