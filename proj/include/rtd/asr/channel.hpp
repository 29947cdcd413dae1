#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtd/common/rng.hpp"
#include "rtd/corpus/lexicon.hpp"

namespace rtd::asr {

using corpus::Sentence;
using corpus::Word;

struct ChannelConfig {
  double p_sub = 0.08;
  double p_ins = 0.02;
  double p_del = 0.02;
  double tau = 1.0;
  std::size_t n_best = 50;
  std::size_t k_nearest = 10;
  // Hypotheses are corruptions of a latent evidence sequence; positions the
  // evidence got wrong, plus a share of clean ones, are ambiguous and have their
  // edit probabilities multiplied by ambiguity_boost.
  double ambiguity_boost = 4.0;
  double clean_ambiguity = 0.08;
  std::size_t attempts_per_hyp = 20;

  void validate() const;  // ConfigError naming the field
};

struct Substitute {
  Word word;
  double weight = 0.0;
  std::size_t distance = 0;
};

// For each word, the k nearest other words by phone edit distance (ties by
// spelling) with weights proportional to exp(-d / tau).
class ConfusionTable {
 public:
  ConfusionTable() = default;
  explicit ConfusionTable(std::map<Word, std::vector<Substitute>> entries)
      : entries_(std::move(entries)) {}

  // Empty for words without candidates or outside the table.
  std::span<const Substitute> substitutes(const Word& word) const;
  const std::map<Word, std::vector<Substitute>>& entries() const { return entries_; }

 private:
  std::map<Word, std::vector<Substitute>> entries_;
};

// ConfigError when tau <= 0. A single-word lexicon yields empty substitute
// sets and bumps "asr.no_substitutes".
ConfusionTable build_confusion_table(const corpus::Lexicon& lexicon, double tau,
                                     std::size_t k_nearest);

// Edit probabilities at one reference position.
struct EditProbs {
  double sub = 0.0;
  double del = 0.0;
  double ins = 0.0;
};

enum class EditKind { kKeep, kSubstitute, kDelete };

// What the channel did with one reference word.
struct Edit {
  EditKind kind = EditKind::kKeep;
  Word output;                   // substitute word (kSubstitute only)
  std::optional<Word> inserted;  // confusable inserted after this position
  bool operator==(const Edit&) const = default;
};

struct Corruption {
  Sentence words;
  double log_prob = 0.0;
  std::vector<Edit> edits;  // one per reference word
};

// Per word: substitute with probs.sub (from the table), delete with probs.del,
// keep otherwise; then insert a confusable of the reference word with
// probs.ins. A word without substitutes can be neither substituted nor
// followed by an insertion.
Corruption corrupt_with(std::span<const Word> ref, std::span<const EditProbs> probs,
                        const ConfusionTable& table, Rng& rng);
Corruption corrupt_utterance(std::span<const Word> ref, const ChannelConfig& cfg,
                             const ConfusionTable& table, Rng& rng);

// Exact log-probability of an edit sequence; corrupt_with reports the same value.
double edit_log_prob(std::span<const Word> ref, std::span<const EditProbs> probs,
                     const ConfusionTable& table, std::span<const Edit> edits);
Sentence apply_edits(std::span<const Word> ref, std::span<const Edit> edits);

struct Hypothesis {
  Sentence words;
  double asr_log_prob = 0.0;
  std::vector<double> word_post;
  bool operator==(const Hypothesis&) const = default;
};

struct NBestList {
  std::string utt_id;
  std::optional<Sentence> reference;
  std::vector<Hypothesis> hyps;  // sorted by asr_log_prob, descending
  bool operator==(const NBestList&) const = default;
};

// Internals of one generate_nbest call, for verification.
struct NBestTrace {
  Corruption evidence;                 // stage 1: reference -> evidence
  std::vector<EditProbs> stage2;       // per evidence position
  std::vector<std::vector<Edit>> edits;  // stage 2 edits of each kept hypothesis
};

// Draws corruptions of the evidence until n_best distinct non-empty hypotheses
// are collected or attempts_per_hyp * n_best draws are spent (the shortfall is
// counted under "asr.budget_exhausted"). Sorted by asr_log_prob, ties by words.
// Posteriors are filled in.
NBestList generate_nbest(std::span<const Word> ref, const ChannelConfig& cfg,
                         const ConfusionTable& table, Rng& rng, NBestTrace* trace = nullptr);

// N-best voting: align every hypothesis to the top one; a word's slot is the
// aligned top position, or its insertion ordinal after the preceding top
// position. A word's posterior is the softmax(asr_log_prob) mass of the
// hypotheses carrying the same word in the same slot.
void word_posteriors(NBestList& list);

// One JSON object per line:
// {"utt_id", "ref": [...] | null, "hyps": [{"words", "asr_log_prob", "word_post"}]}
void write_nbest(const std::filesystem::path& path, std::span<const NBestList> lists);
std::vector<NBestList> read_nbest(const std::filesystem::path& path);

}  // namespace rtd::asr
