#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtd/corpus/lexicon.hpp"

namespace rtd::corpus {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kNumSpecialTokens = 3;

// Marker prepended to the first character of every word.
inline constexpr char kBoundaryMarker = '_';

// Ordered BPE merges plus the resulting subword vocabulary. Ids 0..2 are the
// special tokens [PAD], [CLS], [MASK]; they never take part in merges.
class MergeTable {
 public:
  using Merge = std::pair<std::string, std::string>;

  MergeTable() = default;
  MergeTable(std::vector<Merge> merges, std::vector<std::string> vocab);

  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  bool has_token(const std::string& token) const { return ids_.count(token) != 0; }
  int id(const std::string& token) const;  // throws TokenizationError
  const std::string& token(int id) const;
  static bool is_special(int id) { return id >= 0 && id < kNumSpecialTokens; }

  // Rank of the merge (a, b), or -1 when absent.
  int rank(const std::string& a, const std::string& b) const;

  bool operator==(const MergeTable& other) const {
    return merges_ == other.merges_ && vocab_ == other.vocab_;
  }

 private:
  std::vector<Merge> merges_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  std::map<Merge, int> ranks_;
};

// Subword token ids with one half-open [start, end) span per word.
struct TokenSeq {
  std::vector<int> tokens;
  std::vector<std::pair<std::size_t, std::size_t>> word_spans;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool operator==(const TokenSeq&) const = default;
};

// Initial symbols of a word: "_" + first character, then one symbol per
// remaining character.
std::vector<std::string> initial_symbols(const Word& word);

// Greedy most-frequent-pair merging; frequency ties go to the lexicographically
// smallest pair. The apostrophe never merges. ConfigError when target_vocab is
// below the special tokens plus the base symbol inventory.
MergeTable learn_bpe(std::span<const Sentence> corpus, std::size_t target_vocab);

std::vector<std::string> segment_word(const Word& word, const MergeTable& merges);

TokenSeq tokenize(std::span<const Word> words, const MergeTable& merges);
std::vector<Word> detokenize(const TokenSeq& seq, const MergeTable& merges);

// Token ids to their surface strings, e.g. for logging.
std::string render_tokens(std::span<const int> tokens, const MergeTable& merges);

}  // namespace rtd::corpus
