#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rtd::corpus {

using Word = std::string;
using Sentence = std::vector<Word>;

// Fixed phone inventory produced by the letter-to-phone scheme. Ids 0..2 are
// reserved: padding, the [MASK] phone, and the word-boundary phone.
class PhoneInventory {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kBoundary = 2;

  static const PhoneInventory& standard();

  std::size_t size() const { return names_.size(); }
  const std::string& name(int id) const;
  int id(std::string_view name) const;  // throws LookupError
  bool is_special(int id) const { return id <= kBoundary; }

 private:
  PhoneInventory();
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

struct PhoneSeq {
  std::vector<int> phones;

  std::size_t size() const { return phones.size(); }
  bool empty() const { return phones.empty(); }
  bool operator==(const PhoneSeq&) const = default;
};

// Deterministic letter-to-phone conversion: greedy longest match over a fixed
// table of letter n-grams, doubled consonants collapsed, apostrophes silent.
// Works for any lowercase ASCII string, in or out of the lexicon.
std::vector<int> pronounce(std::string_view letters);

class Lexicon {
 public:
  Lexicon() = default;

  // Adds word with its pronunciation; replaces an existing entry.
  void add(const Word& word, std::vector<int> phones);
  bool contains(const Word& word) const { return entries_.count(word) != 0; }
  const std::vector<int>& lookup(const Word& word) const;  // throws LookupError
  std::size_t size() const { return entries_.size(); }
  std::size_t inventory_size() const { return PhoneInventory::standard().size(); }
  const std::map<Word, std::vector<int>>& entries() const { return entries_; }

  std::vector<Word> words() const;

 private:
  std::map<Word, std::vector<int>> entries_;
};

// Lexicon over `words` using pronounce().
Lexicon build_lexicon(std::span<const Word> words);

// Concatenated pronunciations with one boundary phone between words.
PhoneSeq words_to_phones(std::span<const Word> words, const Lexicon& lexicon);

// Word index of every phone position: boundary phones take the index of the
// word that follows them.
std::vector<int> phone_word_index(const PhoneSeq& seq);

std::size_t phone_distance(std::string_view a, std::string_view b);

}  // namespace rtd::corpus
