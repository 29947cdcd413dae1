#include "rtd/corpus/bpe.hpp"

#include <algorithm>
#include <set>

#include "rtd/common/errors.hpp"

namespace rtd::corpus {

namespace {

const std::vector<std::string> kSpecialTokens = {"[PAD]", "[CLS]", "[MASK]"};

bool mergeable(const std::string& s) { return s != "'"; }

void check_word(const Word& word) {
  if (word.empty()) throw TokenizationError("empty word");
  for (char c : word) {
    if (!((c >= 'a' && c <= 'z') || c == '\'')) {
      throw TokenizationError(std::string("unsupported character '") + c + "' in word '" +
                              word + "'");
    }
  }
}

void apply_merge(std::vector<std::string>& symbols, const std::string& a,
                 const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

}  // namespace

MergeTable::MergeTable(std::vector<Merge> merges, std::vector<std::string> vocab)
    : merges_(std::move(merges)), vocab_(std::move(vocab)) {
  if (vocab_.size() < kSpecialTokens.size() ||
      !std::equal(kSpecialTokens.begin(), kSpecialTokens.end(), vocab_.begin())) {
    throw StructuralError("merge table vocab must start with [PAD] [CLS] [MASK]");
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!ids_.emplace(vocab_[i], static_cast<int>(i)).second) {
      throw StructuralError("duplicate vocab entry: " + vocab_[i]);
    }
  }
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto& [a, b] = merges_[i];
    if (!has_token(a + b)) throw StructuralError("merge result missing from vocab: " + a + b);
    ranks_.emplace(merges_[i], static_cast<int>(i));
  }
}

int MergeTable::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw TokenizationError("token not in vocabulary: '" + token + "'");
  return it->second;
}

const std::string& MergeTable::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw StructuralError("token id out of range: " + std::to_string(id));
  }
  return vocab_[static_cast<std::size_t>(id)];
}

int MergeTable::rank(const std::string& a, const std::string& b) const {
  auto it = ranks_.find({a, b});
  return it == ranks_.end() ? -1 : it->second;
}

std::vector<std::string> initial_symbols(const Word& word) {
  check_word(word);
  std::vector<std::string> symbols;
  symbols.reserve(word.size());
  symbols.push_back(std::string(1, kBoundaryMarker) + word[0]);
  for (std::size_t i = 1; i < word.size(); ++i) symbols.emplace_back(1, word[i]);
  return symbols;
}

MergeTable learn_bpe(std::span<const Sentence> corpus, std::size_t target_vocab) {
  if (corpus.empty()) throw ConfigError("learn_bpe: empty corpus");
  std::map<Word, long> word_counts;
  for (const auto& sentence : corpus) {
    for (const auto& w : sentence) ++word_counts[w];
  }

  std::set<std::string> base;
  std::vector<std::pair<std::vector<std::string>, long>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, count] : word_counts) {
    auto symbols = initial_symbols(w);
    base.insert(symbols.begin(), symbols.end());
    words.emplace_back(std::move(symbols), count);
  }
  if (target_vocab < kSpecialTokens.size() + base.size()) {
    throw ConfigError("target vocab " + std::to_string(target_vocab) +
                      " smaller than character inventory (" +
                      std::to_string(kSpecialTokens.size() + base.size()) + ")");
  }

  std::vector<std::string> vocab = kSpecialTokens;
  vocab.insert(vocab.end(), base.begin(), base.end());
  std::set<std::string> known(vocab.begin(), vocab.end());
  std::vector<MergeTable::Merge> merges;

  while (vocab.size() < target_vocab) {
    std::map<MergeTable::Merge, long> pair_counts;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        if (mergeable(symbols[i]) && mergeable(symbols[i + 1])) {
          pair_counts[{symbols[i], symbols[i + 1]}] += count;
        }
      }
    }
    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    const MergeTable::Merge* best = nullptr;
    long best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr) break;
    const MergeTable::Merge merge = *best;
    for (auto& [symbols, _] : words) apply_merge(symbols, merge.first, merge.second);
    merges.push_back(merge);
    const std::string merged = merge.first + merge.second;
    if (known.insert(merged).second) vocab.push_back(merged);
  }
  return MergeTable(std::move(merges), std::move(vocab));
}

std::vector<std::string> segment_word(const Word& word, const MergeTable& merges) {
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    int best_rank = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const int r = merges.rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) {
        best_rank = r;
        best_pos = i;
      }
    }
    if (best_rank < 0) break;
    const auto a = symbols[best_pos];
    const auto b = symbols[best_pos + 1];
    apply_merge(symbols, a, b);
  }
  return symbols;
}

TokenSeq tokenize(std::span<const Word> words, const MergeTable& merges) {
  TokenSeq seq;
  seq.word_spans.reserve(words.size());
  for (const auto& w : words) {
    const std::size_t start = seq.tokens.size();
    for (const auto& symbol : segment_word(w, merges)) {
      if (!merges.has_token(symbol)) {
        throw TokenizationError("character '" + symbol.substr(symbol[0] == kBoundaryMarker ? 1 : 0) +
                                "' not in inventory (word '" + w + "')");
      }
      seq.tokens.push_back(merges.id(symbol));
    }
    seq.word_spans.emplace_back(start, seq.tokens.size());
  }
  return seq;
}

std::vector<Word> detokenize(const TokenSeq& seq, const MergeTable& merges) {
  std::vector<Word> words;
  words.reserve(seq.word_spans.size());
  std::size_t expected_start = 0;
  for (const auto& [start, end] : seq.word_spans) {
    if (start != expected_start || end <= start || end > seq.tokens.size()) {
      throw StructuralError("malformed word span [" + std::to_string(start) + ", " +
                            std::to_string(end) + ")");
    }
    Word w;
    for (std::size_t i = start; i < end; ++i) {
      const int id = seq.tokens[i];
      if (MergeTable::is_special(id)) throw StructuralError("special token inside word span");
      const std::string& t = merges.token(id);
      const bool marked = !t.empty() && t[0] == kBoundaryMarker;
      if (marked != (i == start)) {
        throw StructuralError("word-boundary marker misplaced at token " + std::to_string(i));
      }
      w += marked ? t.substr(1) : t;
    }
    words.push_back(std::move(w));
    expected_start = end;
  }
  for (std::size_t i = expected_start; i < seq.tokens.size(); ++i) {
    if (!MergeTable::is_special(seq.tokens[i])) {
      throw StructuralError("non-special token outside word spans");
    }
  }
  return words;
}

std::string render_tokens(std::span<const int> tokens, const MergeTable& merges) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += merges.token(tokens[i]);
  }
  return out;
}

}  // namespace rtd::corpus
