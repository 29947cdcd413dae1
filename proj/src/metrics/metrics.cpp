#include "rtd/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "rtd/common/errors.hpp"
#include "rtd/finetune/align.hpp"

namespace rtd::metrics {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(10);
  return out;
}

std::size_t count_positives(std::span<const double> scores, std::span<const int> targets) {
  if (scores.size() != targets.size()) {
    throw InputError(std::to_string(scores.size()) + " scores for " +
                     std::to_string(targets.size()) + " targets");
  }
  std::size_t positives = 0;
  for (int t : targets) {
    if (t != 0 && t != 1) throw InputError("targets must be 0 or 1");
    positives += t == 1;
  }
  return positives;
}

}  // namespace

double WerBreakdown::wer() const {
  if (ref_word_count == 0) throw UndefinedMetricError("WER of an empty reference");
  return static_cast<double>(errors()) / static_cast<double>(ref_word_count);
}

WerBreakdown wer(std::span<const corpus::Word> ref, std::span<const corpus::Word> hyp) {
  if (ref.empty()) throw UndefinedMetricError("WER of an empty reference");
  const auto a = finetune::align(ref, hyp);
  WerBreakdown b;
  b.substitutions = a.count(finetune::OpKind::kSubstitute);
  b.insertions = a.count(finetune::OpKind::kInsert);
  b.deletions = a.count(finetune::OpKind::kDelete);
  b.ref_word_count = ref.size();
  return b;
}

double corpus_wer(std::span<const WerBreakdown> parts) {
  if (parts.empty()) throw InputError("corpus WER of no utterances");
  std::size_t errors = 0, words = 0;
  for (const auto& p : parts) {
    errors += p.errors();
    words += p.ref_word_count;
  }
  if (words == 0) throw UndefinedMetricError("corpus WER with no reference words");
  return static_cast<double>(errors) / static_cast<double>(words);
}

double roc_auc(std::span<const double> scores, std::span<const int> targets) {
  const std::size_t n_pos = count_positives(scores, targets);
  const std::size_t n_neg = targets.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over tie groups (Mann-Whitney U).
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (targets[order[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double nce(std::span<const double> scores, std::span<const int> targets) {
  const std::size_t n_pos = count_positives(scores, targets);
  if (n_pos == 0 || n_pos == targets.size()) throw UndefinedMetricError("NCE needs both classes");
  const double n = static_cast<double>(targets.size());
  const double p = static_cast<double>(n_pos) / n;
  const double h_t = n * (-p * std::log(p) - (1.0 - p) * std::log(1.0 - p));
  double h_tc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double c = std::clamp(scores[i], kNceEpsilon, 1.0 - kNceEpsilon);
    h_tc -= targets[i] == 1 ? std::log(c) : std::log(1.0 - c);
  }
  return (h_t - h_tc) / h_t;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InputError("pearson: length mismatch");
  if (xs.size() < 2) throw UndefinedMetricError("pearson needs at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("pearson with zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<ScoreErrorRow> score_error_table(std::span<const asr::NBestList> lists,
                                             const HypothesisScorer& score_lm) {
  std::vector<ScoreErrorRow> rows;
  for (const auto& l : lists) {
    if (!l.reference) throw InputError("list " + l.utt_id + " has no reference");
    for (std::size_t r = 0; r < l.hyps.size(); ++r) {
      const auto a = finetune::align(*l.reference, l.hyps[r].words);
      rows.push_back({-score_lm(l, r), a.cost()});
    }
  }
  return rows;
}

std::map<std::size_t, double> mean_by_error_count(std::span<const ScoreErrorRow> rows) {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    auto& [sum, n] = acc[r.errors];
    sum += r.neg_score;
    ++n;
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

double score_error_pearson(std::span<const ScoreErrorRow> rows) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    xs.push_back(r.neg_score);
    ys.push_back(static_cast<double>(r.errors));
  }
  return pearson(xs, ys);
}

void write_score_error_csv(const std::filesystem::path& path, std::span<const ScoreErrorRow> rows) {
  auto out = open_out(path);
  out << "neg_score_lm,errors\n";
  for (const auto& r : rows) out << r.neg_score << ',' << r.errors << '\n';
}

void write_error_means_csv(const std::filesystem::path& path, std::span<const ScoreErrorRow> rows) {
  auto out = open_out(path);
  out << "errors,mean_neg_score_lm,count\n";
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : rows) ++counts[r.errors];
  for (const auto& [k, mean] : mean_by_error_count(rows)) out << k << ',' << mean << ',' << counts[k] << '\n';
}

void write_summary_json(const std::filesystem::path& path, const Summary& s) {
  auto out = open_out(path);
  out << nlohmann::json{{"wer", s.wer}, {"auc", s.auc}, {"nce", s.nce}, {"pearson", s.pearson}}.dump(2) << '\n';
}

}  // namespace rtd::metrics
