#include "rtd/rescore/rescore.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "rtd/common/errors.hpp"
#include "rtd/common/parallel.hpp"
#include "rtd/finetune/align.hpp"
#include "rtd/nn/tape.hpp"

namespace rtd::rescore {

namespace {

double log_softmax_at(std::span<const double> z, std::size_t k) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  return z[k] - mx - std::log(sum);
}

void require_tokens(const corpus::TokenSeq& seq) {
  if (seq.empty()) throw LengthError("cannot score an empty token sequence");
}

std::size_t length_of(const ScoredList& l, std::size_t r, LengthUnit unit) {
  return unit == LengthUnit::kTokens ? l.token_length[r] : l.word_length[r];
}

}  // namespace

std::string to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::kAutoregressive: return "autoregressive";
    case ScorerKind::kBertPll: return "bert_pll";
    case ScorerKind::kElectra: return "electra_count";
  }
  return "unknown";
}

ScorerKind scorer_kind_from_string(const std::string& name) {
  if (name == "autoregressive") return ScorerKind::kAutoregressive;
  if (name == "bert_pll") return ScorerKind::kBertPll;
  if (name == "electra_count") return ScorerKind::kElectra;
  throw ConfigError("unknown scorer kind '" + name + "'");
}

void RescoreConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("rescore.alpha must be >= 0");
  if (!std::isfinite(beta)) throw ConfigError("rescore.beta must be finite");
}

RescoreConfig RescoreConfig::defaults_for(ScorerKind kind) {
  RescoreConfig c;
  if (kind == ScorerKind::kElectra) {
    c.alpha = 9.0;
    c.beta = 0.0;
  } else {
    c.alpha = 0.5;
    c.beta = 1.0;
  }
  return c;
}

LmScore score_lm_autoregressive(const nn::CausalLmModel& model, const corpus::TokenSeq& seq) {
  require_tokens(seq);
  const auto before = nn::forward_pass_count();
  nn::Tape tape(model.params());
  const nn::Matrix& z = tape.value(nn::causal_logits(model, tape, seq.tokens, false, nullptr));
  LmScore out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    out.score += log_softmax_at(z.row(i), static_cast<std::size_t>(seq.tokens[i]));
  }
  out.passes = nn::forward_pass_count() - before;
  return out;
}

LmScore score_lm_bert_pll(const nn::EncoderModel& model, const corpus::TokenSeq& seq) {
  require_tokens(seq);
  if (!model.has_lm_head()) throw ConfigError("BERT pseudo-likelihood needs an LM head");
  const auto before = nn::forward_pass_count();
  LmScore out;
  std::vector<int> masked = seq.tokens;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    masked[i] = corpus::kMaskId;
    nn::Tape tape(model.params());
    const nn::Matrix& h = tape.value(nn::encoder_hidden(model, tape, masked, false, nullptr));
    nn::Matrix row(1, h.cols);
    std::copy(h.row(i).begin(), h.row(i).end(), row.row(0).begin());
    const nn::Matrix& z = tape.value(nn::lm_logits(model, tape, tape.constant(std::move(row))));
    out.score += log_softmax_at(z.row(0), static_cast<std::size_t>(seq.tokens[i]));
    masked[i] = seq.tokens[i];
  }
  out.passes = nn::forward_pass_count() - before;
  return out;
}

LmScore score_lm_electra(const nn::EncoderModel& model, const corpus::TokenSeq& seq) {
  require_tokens(seq);
  if (!model.has_disc_head()) throw ConfigError("ELECTRA scoring needs a discriminator head");
  const auto before = nn::forward_pass_count();
  const auto d = nn::disc_head(model, nn::encoder_forward(model, seq, false, nullptr));
  LmScore out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!corpus::MergeTable::is_special(seq.tokens[i])) out.score -= d[i];
  }
  out.passes = nn::forward_pass_count() - before;
  return out;
}

Scorer Scorer::autoregressive(const nn::CausalLmModel& model) {
  Scorer s;
  s.kind_ = ScorerKind::kAutoregressive;
  s.causal_ = &model;
  return s;
}

Scorer Scorer::bert_pll(const nn::EncoderModel& model) {
  if (!model.has_lm_head()) throw ConfigError("bert_pll scorer needs a model with an LM head");
  Scorer s;
  s.kind_ = ScorerKind::kBertPll;
  s.encoder_ = &model;
  return s;
}

Scorer Scorer::electra(const nn::EncoderModel& model) {
  if (!model.has_disc_head()) throw ConfigError("electra_count scorer needs a discriminator head");
  Scorer s;
  s.kind_ = ScorerKind::kElectra;
  s.encoder_ = &model;
  return s;
}

LmScore Scorer::operator()(const corpus::TokenSeq& seq) const {
  switch (kind_) {
    case ScorerKind::kAutoregressive: return score_lm_autoregressive(*causal_, seq);
    case ScorerKind::kBertPll: return score_lm_bert_pll(*encoder_, seq);
    case ScorerKind::kElectra: return score_lm_electra(*encoder_, seq);
  }
  throw StateError("scorer has no kind");
}

double combined_score(const asr::Hypothesis& hyp, double score_lm, std::size_t length,
                      const RescoreConfig& cfg) {
  return hyp.asr_log_prob + cfg.alpha * score_lm + cfg.beta * static_cast<double>(length);
}

ScoredList score_list(const asr::NBestList& list, const Scorer& scorer,
                      const corpus::MergeTable& merges) {
  ScoredList out;
  out.utt_id = list.utt_id;
  for (const auto& h : list.hyps) {
    const auto seq = corpus::tokenize(h.words, merges);
    const auto s = scorer(seq);
    out.asr_log_prob.push_back(h.asr_log_prob);
    out.score_lm.push_back(s.score);
    out.token_length.push_back(seq.size());
    out.word_length.push_back(h.words.size());
    out.passes.push_back(s.passes);
  }
  return out;
}

std::vector<ScoredList> score_lists(std::span<const asr::NBestList> lists, const Scorer& scorer,
                                    const corpus::MergeTable& merges, std::size_t workers) {
  std::vector<ScoredList> out(lists.size());
  parallel_for(lists.size(), workers, [&](std::size_t i) { out[i] = score_list(lists[i], scorer, merges); });
  return out;
}

ScoredHypothesis select_hypothesis(const ScoredList& list, const RescoreConfig& cfg) {
  if (list.size() == 0) throw InputError("cannot select from an empty list " + list.utt_id);
  ScoredHypothesis best;
  for (std::size_t r = 0; r < list.size(); ++r) {
    const double c = list.asr_log_prob[r] + cfg.alpha * list.score_lm[r] +
                     cfg.beta * static_cast<double>(length_of(list, r, cfg.length_unit));
    const bool better = r == 0 || c > best.combined ||
                        (c == best.combined && list.asr_log_prob[r] > list.asr_log_prob[best.rank]);
    if (better) best = {r, list.score_lm[r], c, list.passes[r]};
  }
  return best;
}

std::vector<ScoredHypothesis> select_all(std::span<const ScoredList> lists, const RescoreConfig& cfg) {
  std::vector<ScoredHypothesis> out;
  out.reserve(lists.size());
  for (const auto& l : lists) out.push_back(select_hypothesis(l, cfg));
  return out;
}

std::size_t oracle_select(const asr::NBestList& list) {
  if (!list.reference) throw InputError("oracle selection needs a reference for " + list.utt_id);
  if (list.hyps.empty()) throw InputError("cannot select from an empty list " + list.utt_id);
  std::size_t best = 0, best_err = 0;
  for (std::size_t r = 0; r < list.hyps.size(); ++r) {
    const std::size_t e = finetune::align(*list.reference, list.hyps[r].words).cost();
    if (r == 0 || e < best_err ||
        (e == best_err && list.hyps[r].asr_log_prob > list.hyps[best].asr_log_prob)) {
      best = r;
      best_err = e;
    }
  }
  return best;
}

std::vector<std::vector<metrics::WerBreakdown>> hypothesis_wers(std::span<const asr::NBestList> lists) {
  std::vector<std::vector<metrics::WerBreakdown>> out;
  out.reserve(lists.size());
  for (const auto& l : lists) {
    if (!l.reference) throw InputError("list " + l.utt_id + " has no reference");
    auto& row = out.emplace_back();
    for (const auto& h : l.hyps) row.push_back(metrics::wer(*l.reference, h.words));
  }
  return out;
}

double selection_wer(std::span<const std::vector<metrics::WerBreakdown>> wers,
                     std::span<const std::size_t> ranks) {
  if (wers.size() != ranks.size()) throw InputError("one selected rank per list is required");
  std::vector<metrics::WerBreakdown> chosen;
  chosen.reserve(ranks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) chosen.push_back(wers[i].at(ranks[i]));
  return metrics::corpus_wer(chosen);
}

double baseline_wer(std::span<const asr::NBestList> lists) {
  const auto wers = hypothesis_wers(lists);
  return selection_wer(wers, std::vector<std::size_t>(lists.size(), 0));
}

double oracle_wer(std::span<const asr::NBestList> lists) {
  const auto wers = hypothesis_wers(lists);
  std::vector<std::size_t> ranks;
  for (const auto& l : lists) ranks.push_back(oracle_select(l));
  return selection_wer(wers, ranks);
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 8; ++i) g.push_back(0.25 * i);
  for (int a = 3; a <= 12; ++a) g.push_back(a);
  return g;
}

std::vector<double> default_beta_grid() { return {0.0, 0.5, 1.0, 1.5, 2.0}; }

TuneResult tune_alpha_beta(std::span<const asr::NBestList> lists,
                           std::span<const ScoredList> scored, std::span<const double> alphas,
                           std::span<const double> betas, LengthUnit unit) {
  if (alphas.empty() || betas.empty()) throw InputError("alpha and beta grids must be non-empty");
  if (lists.size() != scored.size()) throw InputError("scored lists do not match the n-best lists");
  const auto wers = hypothesis_wers(lists);
  std::size_t words = 0;
  for (const auto& row : wers) words += row.empty() ? 0 : row.front().ref_word_count;

  TuneResult best;
  std::size_t best_errors = std::numeric_limits<std::size_t>::max();
  for (double a : alphas) {
    for (double b : betas) {
      RescoreConfig cfg;
      cfg.alpha = a;
      cfg.beta = b;
      cfg.length_unit = unit;
      std::size_t errors = 0;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        errors += wers[i].at(select_hypothesis(scored[i], cfg).rank).errors();
      }
      const bool better = errors < best_errors ||
                          (errors == best_errors && (a < best.alpha || (a == best.alpha && b < best.beta)));
      if (better) {
        best_errors = errors;
        best.alpha = a;
        best.beta = b;
      }
    }
  }
  if (words == 0) throw UndefinedMetricError("tuning set has no reference words");
  best.wer = static_cast<double>(best_errors) / static_cast<double>(words);
  return best;
}

std::vector<BenchmarkRow> benchmark_scorers(std::span<const NamedScorer> scorers,
                                            std::span<const asr::NBestList> sample,
                                            const corpus::MergeTable& merges,
                                            std::size_t repetitions) {
  if (repetitions < 1) throw ConfigError("benchmark repetitions must be >= 1");
  std::vector<corpus::TokenSeq> seqs;
  for (const auto& l : sample) {
    for (const auto& h : l.hyps) seqs.push_back(corpus::tokenize(h.words, merges));
  }
  if (seqs.empty()) throw InputError("benchmark sample has no hypotheses");

  std::vector<BenchmarkRow> rows;
  double ar_ms = 0.0;
  for (const auto& ns : scorers) {
    std::size_t passes = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      for (const auto& s : seqs) passes += ns.scorer(s).passes;
    }
    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
    const double n = static_cast<double>(seqs.size() * repetitions);
    BenchmarkRow row;
    row.scorer = ns.name;
    row.mean_passes = static_cast<double>(passes) / n;
    row.wall_ms_per_hyp = dt.count() / n;
    if (ns.scorer.kind() == ScorerKind::kAutoregressive && ar_ms == 0.0) ar_ms = row.wall_ms_per_hyp;
    rows.push_back(row);
  }
  if (ar_ms > 0.0) {
    for (auto& r : rows) r.ratio_vs_autoregressive = r.wall_ms_per_hyp / ar_ms;
  }
  return rows;
}

void write_benchmark_csv(const std::filesystem::path& path, std::span<const BenchmarkRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(6);
  out << "scorer,mean_passes,wall_ms_per_hyp,ratio_vs_autoregressive\n";
  for (const auto& r : rows) {
    out << r.scorer << ',' << r.mean_passes << ',' << r.wall_ms_per_hyp << ',' << r.ratio_vs_autoregressive << '\n';
  }
}

void write_rescore_jsonl(const std::filesystem::path& path, std::span<const ScoredList> lists,
                         std::span<const ScoredHypothesis> chosen) {
  if (lists.size() != chosen.size()) throw InputError("one selection per list is required");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const nlohmann::json j = {{"utt_id", lists[i].utt_id},
                              {"chosen_rank", chosen[i].rank},
                              {"combined", chosen[i].combined},
                              {"score_lm", chosen[i].score_lm},
                              {"passes", chosen[i].passes}};
    out << j.dump() << '\n';
  }
}

}  // namespace rtd::rescore
