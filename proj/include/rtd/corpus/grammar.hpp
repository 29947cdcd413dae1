#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rtd/common/rng.hpp"
#include "rtd/corpus/lexicon.hpp"

namespace rtd::corpus {

// Seeded probabilistic template grammar over a closed synthetic vocabulary.
//
// Sentences follow subject-verb-object order with optional determiners,
// adjectives, a prepositional phrase and an adverb. Nouns are partitioned into
// semantic clusters; each verb selects a subject cluster and an object cluster,
// adjectives and adverbs agree with a cluster, so a word's neighbours constrain
// which words may appear. A share of the content words are derived from another
// word by a one-phone change, giving acoustically confusable pairs that usually
// belong to different categories or clusters.
class ToyGrammar {
 public:
  static constexpr std::size_t kMinVocab = 50;

  ToyGrammar(std::uint64_t seed, std::size_t vocab_size);

  Sentence sample(Rng& rng) const;

  // All words, sorted.
  const std::vector<Word>& words() const { return words_; }
  const Lexicon& lexicon() const { return lexicon_; }

 private:
  struct Verb {
    std::size_t word;
    int subject_cluster;
    int object_cluster;
  };
  struct Tagged {
    std::size_t word;
    int cluster;
  };

  std::size_t zipf_pick(std::size_t n, Rng& rng) const;
  void append_noun_phrase(int cluster, Rng& rng, Sentence& out) const;

  std::vector<Word> words_;
  Lexicon lexicon_;
  std::vector<Word> surfaces_;  // index space used by the tables below
  std::vector<std::vector<std::size_t>> nouns_by_cluster_;
  std::vector<std::vector<std::size_t>> adjectives_by_cluster_;
  std::vector<std::vector<std::size_t>> adverbs_by_cluster_;
  std::vector<Verb> verbs_;
  std::vector<Tagged> prepositions_;
  std::vector<std::size_t> determiners_;
  std::vector<std::vector<std::size_t>> prefixes_;
};

struct ToyCorpus {
  std::vector<Sentence> sentences;
  Lexicon lexicon;
};

// n_sentences >= 1, vocab_size >= ToyGrammar::kMinVocab (ConfigError otherwise).
ToyCorpus generate_toy_corpus(std::uint64_t grammar_seed, std::size_t n_sentences,
                              std::size_t vocab_size);

}  // namespace rtd::corpus
