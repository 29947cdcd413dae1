#include "rtd/corpus/lexicon.hpp"

#include <array>
#include <utility>

#include "rtd/common/edit_distance.hpp"
#include "rtd/common/errors.hpp"

namespace rtd::corpus {

namespace {

struct LetterRule {
  std::string_view letters;
  std::array<std::string_view, 2> phones;
};

// Longest patterns first.
constexpr std::array<LetterRule, 42> kRules = {{
    {"th", {"TH", ""}}, {"sh", {"SH", ""}}, {"ch", {"CH", ""}},
    {"ng", {"NG", ""}}, {"ck", {"K", ""}},  {"ph", {"F", ""}},
    {"ee", {"IY", ""}}, {"ea", {"IY", ""}}, {"oo", {"UW", ""}},
    {"ai", {"EY", ""}}, {"ay", {"EY", ""}}, {"ou", {"UW", ""}},
    {"ew", {"UW", ""}},
    {"ow", {"OW", ""}}, {"oa", {"OW", ""}}, {"qu", {"K", "W"}},
    {"a", {"AE", ""}},  {"b", {"B", ""}},   {"c", {"K", ""}},
    {"d", {"D", ""}},   {"e", {"EH", ""}},  {"f", {"F", ""}},
    {"g", {"G", ""}},   {"h", {"HH", ""}},  {"i", {"IH", ""}},
    {"j", {"JH", ""}},  {"k", {"K", ""}},   {"l", {"L", ""}},
    {"m", {"M", ""}},   {"n", {"N", ""}},   {"o", {"AA", ""}},
    {"p", {"P", ""}},   {"q", {"K", ""}},   {"r", {"R", ""}},
    {"s", {"S", ""}},   {"t", {"T", ""}},   {"u", {"AH", ""}},
    {"v", {"V", ""}},   {"w", {"W", ""}},   {"x", {"K", "S"}},
    {"y", {"Y", ""}},   {"z", {"Z", ""}},
}};

bool is_vowel_letter(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

}  // namespace

PhoneInventory::PhoneInventory() {
  names_ = {"<pad>", "<mask>", "|",  "AA", "AE", "AH", "AW", "B",  "CH",
            "D",     "EH",     "EY", "F",  "G",  "HH", "IH", "IY", "JH",
            "K",     "L",      "M",  "N",  "NG", "OW", "P",  "R",  "S",
            "SH",    "T",      "TH", "UW", "V",  "W",  "Y",  "Z"};
  for (std::size_t i = 0; i < names_.size(); ++i) ids_[names_[i]] = static_cast<int>(i);
}

const PhoneInventory& PhoneInventory::standard() {
  static const PhoneInventory inventory;
  return inventory;
}

const std::string& PhoneInventory::name(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw LookupError("phone id out of range: " + std::to_string(id));
  }
  return names_[static_cast<std::size_t>(id)];
}

int PhoneInventory::id(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) throw LookupError("unknown phone: " + std::string(name));
  return it->second;
}

std::vector<int> pronounce(std::string_view letters) {
  const auto& inventory = PhoneInventory::standard();
  std::vector<int> out;
  std::size_t i = 0;
  while (i < letters.size()) {
    const char c = letters[i];
    if (c == '\'') {
      ++i;
      continue;
    }
    // Word-initial "kn" has a silent k.
    if (i == 0 && letters.substr(0, 2) == "kn") {
      ++i;
      continue;
    }
    // Doubled consonant letters are pronounced once.
    if (i > 0 && letters[i - 1] == c && !is_vowel_letter(c)) {
      ++i;
      continue;
    }
    const LetterRule* match = nullptr;
    for (const auto& rule : kRules) {
      if (letters.substr(i, rule.letters.size()) == rule.letters) {
        match = &rule;
        break;
      }
    }
    if (match == nullptr) {
      throw LookupError(std::string("no pronunciation rule for character '") + c + "'");
    }
    for (auto p : match->phones) {
      if (!p.empty()) out.push_back(inventory.id(p));
    }
    i += match->letters.size();
  }
  return out;
}

void Lexicon::add(const Word& word, std::vector<int> phones) {
  if (phones.empty()) throw ConfigError("empty pronunciation for word '" + word + "'");
  entries_[word] = std::move(phones);
}

const std::vector<int>& Lexicon::lookup(const Word& word) const {
  auto it = entries_.find(word);
  if (it == entries_.end()) throw LookupError("word not in lexicon: '" + word + "'");
  return it->second;
}

std::vector<Word> Lexicon::words() const {
  std::vector<Word> out;
  out.reserve(entries_.size());
  for (const auto& [w, _] : entries_) out.push_back(w);
  return out;
}

Lexicon build_lexicon(std::span<const Word> words) {
  Lexicon lexicon;
  for (const auto& w : words) lexicon.add(w, pronounce(w));
  return lexicon;
}

PhoneSeq words_to_phones(std::span<const Word> words, const Lexicon& lexicon) {
  PhoneSeq seq;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) seq.phones.push_back(PhoneInventory::kBoundary);
    const auto& entry = lexicon.lookup(words[i]);
    seq.phones.insert(seq.phones.end(), entry.begin(), entry.end());
  }
  return seq;
}

std::vector<int> phone_word_index(const PhoneSeq& seq) {
  std::vector<int> out(seq.size());
  int word = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.phones[i] == PhoneInventory::kBoundary) ++word;
    out[i] = word;
  }
  return out;
}

std::size_t phone_distance(std::string_view a, std::string_view b) {
  return edit_distance(pronounce(a), pronounce(b));
}

}  // namespace rtd::corpus
