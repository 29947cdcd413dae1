#include "rtd/confidence/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "rtd/common/errors.hpp"
#include "rtd/common/parallel.hpp"
#include "rtd/finetune/align.hpp"
#include "rtd/metrics/metrics.hpp"

namespace rtd::confidence {

namespace {

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("confidence.gamma must lie in [0, 1]");
}

std::vector<int> correctness(const corpus::Sentence& ref, const corpus::Sentence& hyp) {
  std::vector<int> out(hyp.size(), 0);
  for (const auto& op : finetune::align(ref, hyp).ops) {
    if (op.hyp_index) out[*op.hyp_index] = op.kind == finetune::OpKind::kMatch ? 1 : 0;
  }
  return out;
}

}  // namespace

void ConfidenceConfig::validate() const { check_gamma(gamma); }

std::vector<double> token_confidence(const nn::EncoderModel& model, const corpus::TokenSeq& seq) {
  if (!model.has_disc_head()) throw ConfigError("token confidence needs a discriminator head");
  if (seq.empty()) return {};
  auto c = nn::disc_head(model, nn::encoder_forward(model, seq, false, nullptr));
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = corpus::MergeTable::is_special(seq.tokens[i]) ? std::numeric_limits<double>::quiet_NaN()
                                                          : 1.0 - c[i];
  }
  return c;
}

std::vector<double> word_confidence(std::span<const double> token_c,
                                    std::span<const std::pair<std::size_t, std::size_t>> spans) {
  std::vector<double> out;
  out.reserve(spans.size());
  for (const auto& [b, e] : spans) {
    if (b >= e || e > token_c.size()) {
      throw StructuralError("word span [" + std::to_string(b) + ", " + std::to_string(e) +
                            ") does not fit " + std::to_string(token_c.size()) + " tokens");
    }
    double m = 1.0;
    for (std::size_t i = b; i < e; ++i) {
      if (std::isnan(token_c[i])) throw StructuralError("word span covers a special token");
      m = std::min(m, token_c[i]);
    }
    out.push_back(m);
  }
  return out;
}

std::vector<double> interpolate(std::span<const double> p_word, std::span<const double> c_word,
                                double gamma) {
  check_gamma(gamma);
  if (p_word.size() != c_word.size()) {
    throw InputError(std::to_string(p_word.size()) + " posteriors for " +
                     std::to_string(c_word.size()) + " word confidences");
  }
  std::vector<double> out(p_word.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Endpoints return the inputs bit-exactly.
    out[i] = gamma == 0.0 ? p_word[i] : gamma == 1.0 ? c_word[i] : (1.0 - gamma) * p_word[i] + gamma * c_word[i];
  }
  return out;
}

std::vector<WordConfidence> score_top1(std::span<const asr::NBestList> lists,
                                       const nn::EncoderModel& model,
                                       const corpus::MergeTable& merges, double gamma,
                                       std::size_t workers) {
  check_gamma(gamma);
  std::vector<WordConfidence> out(lists.size());
  parallel_for(lists.size(), workers, [&](std::size_t i) {
    const auto& l = lists[i];
    if (l.hyps.empty()) throw InputError("list " + l.utt_id + " has no hypotheses");
    const auto& top = l.hyps.front();
    if (top.word_post.size() != top.words.size()) {
      throw StructuralError("list " + l.utt_id + " lacks word posteriors for its top hypothesis");
    }
    WordConfidence& w = out[i];
    w.utt_id = l.utt_id;
    w.words = top.words;
    w.p_word = top.word_post;
    const auto seq = corpus::tokenize(top.words, merges);
    w.c_word = word_confidence(token_confidence(model, seq), seq.word_spans);
    w.c_prime = interpolate(w.p_word, w.c_word, gamma);
    if (l.reference) w.labels = correctness(*l.reference, top.words);
  });
  return out;
}

void set_gamma(std::span<WordConfidence> set, double gamma) {
  for (auto& w : set) w.c_prime = interpolate(w.p_word, w.c_word, gamma);
}

ConfidenceMetrics evaluate_confidence(std::span<const double> scores, std::span<const int> correct) {
  return {metrics::roc_auc(scores, correct), metrics::nce(scores, correct)};
}

ConfidenceMetrics evaluate_set(std::span<const WordConfidence> set, Source source) {
  std::vector<double> scores;
  std::vector<int> targets;
  for (const auto& w : set) {
    if (!w.labels) throw InputError("utterance " + w.utt_id + " has no labels");
    const auto& s = source == Source::kPWord ? w.p_word : source == Source::kCWord ? w.c_word : w.c_prime;
    scores.insert(scores.end(), s.begin(), s.end());
    targets.insert(targets.end(), w.labels->begin(), w.labels->end());
  }
  return evaluate_confidence(scores, targets);
}

std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(0.05 * i);
  return g;
}

GammaResult tune_gamma(std::span<const WordConfidence> dev, std::span<const double> grid) {
  if (grid.empty()) throw InputError("gamma grid must be non-empty");
  std::vector<WordConfidence> work(dev.begin(), dev.end());
  GammaResult best;
  bool first = true;
  for (double g : grid) {
    set_gamma(work, g);
    const auto m = evaluate_set(work, Source::kCPrime);
    if (first || m.nce > best.nce || (m.nce == best.nce && g < best.gamma)) {
      best = {g, m.nce, m.auc};
      first = false;
    }
  }
  return best;
}

void write_confidence_jsonl(const std::filesystem::path& path, std::span<const WordConfidence> set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& w : set) {
    nlohmann::json j = {{"utt_id", w.utt_id},
                        {"words", w.words},
                        {"p_word", w.p_word},
                        {"c_word", w.c_word},
                        {"c_prime", w.c_prime}};
    if (w.labels) j["labels"] = *w.labels;
    out << j.dump() << '\n';
  }
}

}  // namespace rtd::confidence
