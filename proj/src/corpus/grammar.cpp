#include "rtd/corpus/grammar.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <string>

#include "rtd/common/errors.hpp"

namespace rtd::corpus {

namespace {

constexpr int kClusters = 4;

constexpr std::array<const char*, 6> kDeterminers = {"the", "a", "this", "my", "her", "his"};
constexpr std::array<const char*, 5> kPrepositions = {"in", "on", "with", "near", "under"};
const std::vector<std::vector<const char*>> kPrefixes = {
    {"i", "don't", "think"}, {"she'd", "say"}};

constexpr std::array<const char*, 16> kOnsets = {"b", "d", "f", "g", "k", "l", "m", "n",
                                                 "p", "r", "s", "t", "v", "z", "sh", "ch"};
constexpr std::array<const char*, 8> kNuclei = {"a", "e", "i", "o", "u", "ee", "oo", "ai"};
constexpr std::array<const char*, 7> kCodas = {"", "", "n", "t", "m", "l", "k"};

// One-phone swaps used to derive confusable words.
const std::vector<std::pair<std::string, std::string>> kSwaps = {
    {"b", "p"}, {"d", "t"}, {"g", "k"}, {"s", "z"}, {"f", "v"},  {"m", "n"},
    {"l", "r"}, {"sh", "ch"}, {"a", "e"}, {"i", "ee"}, {"o", "u"}, {"oo", "u"}};

using Units = std::vector<std::string>;

std::string join(const Units& units) {
  std::string s;
  for (const auto& u : units) s += u;
  return s;
}

Units random_word(Rng& rng) {
  Units units;
  const std::size_t syllables = 1 + rng.uniform_int(2);
  for (std::size_t s = 0; s < syllables; ++s) {
    units.emplace_back(kOnsets[rng.uniform_int(kOnsets.size())]);
    units.emplace_back(kNuclei[rng.uniform_int(kNuclei.size())]);
    const std::string coda = kCodas[rng.uniform_int(kCodas.size())];
    if (!coda.empty()) units.push_back(coda);
  }
  return units;
}

bool derive_variant(const Units& base, Rng& rng, Units& out) {
  std::vector<std::pair<std::size_t, std::string>> options;
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (const auto& [a, b] : kSwaps) {
      if (base[i] == a) options.emplace_back(i, b);
      if (base[i] == b) options.emplace_back(i, a);
    }
  }
  if (options.empty()) return false;
  const auto& [pos, repl] = options[rng.uniform_int(options.size())];
  out = base;
  out[pos] = repl;
  return true;
}

}  // namespace

ToyGrammar::ToyGrammar(std::uint64_t seed, std::size_t vocab_size) {
  std::set<std::string> fixed;
  for (auto w : kDeterminers) fixed.insert(w);
  for (auto w : kPrepositions) fixed.insert(w);
  for (const auto& p : kPrefixes) {
    for (auto w : p) fixed.insert(w);
  }
  if (vocab_size < kMinVocab) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                      " below grammar minimum " + std::to_string(kMinVocab));
  }
  const std::size_t n_content = vocab_size - fixed.size();

  Rng rng(derive_seed(seed, "grammar"));
  std::set<std::string> used = fixed;
  std::vector<Units> content;
  content.reserve(n_content);
  while (content.size() < n_content) {
    Units candidate;
    const bool derived = !content.empty() && rng.uniform() < 0.3 &&
                         derive_variant(content[rng.uniform_int(content.size())], rng, candidate);
    if (!derived) candidate = random_word(rng);
    const std::string surface = join(candidate);
    if (surface.size() < 2 || used.count(surface) != 0) continue;
    used.insert(surface);
    content.push_back(std::move(candidate));
  }

  // Shuffle so derived pairs land in unrelated categories.
  for (std::size_t i = content.size(); i > 1; --i) {
    std::swap(content[i - 1], content[rng.uniform_int(i)]);
  }

  auto add_surface = [this](const std::string& s) {
    surfaces_.push_back(s);
    return surfaces_.size() - 1;
  };
  for (auto w : kDeterminers) determiners_.push_back(add_surface(w));
  for (std::size_t i = 0; i < kPrepositions.size(); ++i) {
    prepositions_.push_back({add_surface(kPrepositions[i]), static_cast<int>(i % kClusters)});
  }
  for (const auto& p : kPrefixes) {
    std::vector<std::size_t> ids;
    for (auto w : p) {
      auto it = std::find(surfaces_.begin(), surfaces_.end(), std::string(w));
      ids.push_back(it == surfaces_.end() ? add_surface(w)
                                          : static_cast<std::size_t>(it - surfaces_.begin()));
    }
    prefixes_.push_back(std::move(ids));
  }

  // Category shares: 40% nouns, 25% verbs, 20% adjectives, rest adverbs.
  const std::size_t n_nouns = std::max<std::size_t>(kClusters, n_content * 40 / 100);
  const std::size_t n_verbs = std::max<std::size_t>(2, n_content * 25 / 100);
  const std::size_t n_adjs = std::max<std::size_t>(1, n_content * 20 / 100);
  nouns_by_cluster_.resize(kClusters);
  adjectives_by_cluster_.resize(kClusters);
  adverbs_by_cluster_.resize(kClusters);
  for (std::size_t i = 0; i < content.size(); ++i) {
    const std::size_t id = add_surface(join(content[i]));
    if (i < n_nouns) {
      nouns_by_cluster_[i % kClusters].push_back(id);
    } else if (i < n_nouns + n_verbs) {
      const std::size_t v = i - n_nouns;
      verbs_.push_back({id, static_cast<int>(v % kClusters),
                        static_cast<int>((v / kClusters + v + 1) % kClusters)});
    } else if (i < n_nouns + n_verbs + n_adjs) {
      adjectives_by_cluster_[(i - n_nouns - n_verbs) % kClusters].push_back(id);
    } else {
      adverbs_by_cluster_[(i - n_nouns - n_verbs - n_adjs) % kClusters].push_back(id);
    }
  }

  words_ = surfaces_;
  std::sort(words_.begin(), words_.end());
  lexicon_ = build_lexicon(words_);
}

std::size_t ToyGrammar::zipf_pick(std::size_t n, Rng& rng) const {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / static_cast<double>(r + 1);
  return rng.categorical(w);
}

void ToyGrammar::append_noun_phrase(int cluster, Rng& rng, Sentence& out) const {
  out.push_back(surfaces_[determiners_[zipf_pick(determiners_.size(), rng)]]);
  const auto& adjs = adjectives_by_cluster_[static_cast<std::size_t>(cluster)];
  if (!adjs.empty() && rng.bernoulli(0.4)) {
    out.push_back(surfaces_[adjs[zipf_pick(adjs.size(), rng)]]);
  }
  const auto& nouns = nouns_by_cluster_[static_cast<std::size_t>(cluster)];
  out.push_back(surfaces_[nouns[zipf_pick(nouns.size(), rng)]]);
}

Sentence ToyGrammar::sample(Rng& rng) const {
  Sentence out;
  if (rng.bernoulli(0.1)) {
    for (auto id : prefixes_[rng.uniform_int(prefixes_.size())]) out.push_back(surfaces_[id]);
  }
  const Verb& verb = verbs_[zipf_pick(verbs_.size(), rng)];
  append_noun_phrase(verb.subject_cluster, rng, out);
  out.push_back(surfaces_[verb.word]);
  append_noun_phrase(verb.object_cluster, rng, out);
  if (rng.bernoulli(0.4)) {
    const Tagged& prep = prepositions_[zipf_pick(prepositions_.size(), rng)];
    out.push_back(surfaces_[prep.word]);
    append_noun_phrase(prep.cluster, rng, out);
  }
  const auto& advs = adverbs_by_cluster_[static_cast<std::size_t>(verb.object_cluster)];
  if (!advs.empty() && rng.bernoulli(0.3)) {
    out.push_back(surfaces_[advs[zipf_pick(advs.size(), rng)]]);
  }
  return out;
}

ToyCorpus generate_toy_corpus(std::uint64_t grammar_seed, std::size_t n_sentences,
                              std::size_t vocab_size) {
  if (n_sentences < 1) throw ConfigError("n_sentences must be >= 1");
  ToyGrammar grammar(grammar_seed, vocab_size);
  Rng rng(derive_seed(grammar_seed, "sentences"));
  ToyCorpus corpus;
  corpus.sentences.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) corpus.sentences.push_back(grammar.sample(rng));
  corpus.lexicon = grammar.lexicon();
  return corpus;
}

}  // namespace rtd::corpus
