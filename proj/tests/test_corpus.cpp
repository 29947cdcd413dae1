#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "rtd/common/errors.hpp"
#include "rtd/corpus/bpe.hpp"
#include "rtd/corpus/grammar.hpp"
#include "rtd/corpus/io.hpp"
#include "rtd/corpus/lexicon.hpp"
#include "test_util.hpp"

using namespace rtd;
using namespace rtd::corpus;

namespace {

std::vector<Sentence> repeat(const Sentence& s, int n) { return std::vector<Sentence>(n, s); }

const Sentence kTableOne = {"i",    "don't", "believe", "ann", "knew", "any",    "magic",
                            "or",   "she'd", "have",    "worked", "it", "before"};

std::vector<std::string> surfaces(const TokenSeq& seq, const MergeTable& table) {
  std::vector<std::string> out;
  for (int t : seq.tokens) out.push_back(table.token(t));
  return out;
}

}  // namespace

TEST(ToyCorpus, SeededDeterminism) {
  const auto a = generate_toy_corpus(7, 3, 100);
  const auto b = generate_toy_corpus(7, 3, 100);
  EXPECT_EQ(a.sentences, b.sentences);
  EXPECT_EQ(a.lexicon.entries(), b.lexicon.entries());
  const auto c = generate_toy_corpus(8, 3, 100);
  EXPECT_NE(a.lexicon.entries(), c.lexicon.entries());
}

TEST(ToyCorpus, LexiconIsTotal) {
  const auto corpus = generate_toy_corpus(3, 500, 120);
  for (const auto& s : corpus.sentences) {
    EXPECT_FALSE(s.empty());
    for (const auto& w : s) {
      ASSERT_TRUE(corpus.lexicon.contains(w)) << w;
      EXPECT_FALSE(corpus.lexicon.lookup(w).empty());
    }
  }
}

TEST(ToyCorpus, VocabularyHasConfusablePairs) {
  const auto corpus = generate_toy_corpus(7, 10, 100);
  std::vector<std::vector<int>> prons;
  for (const auto& [word, phones] : corpus.lexicon.entries()) prons.push_back(phones);
  std::size_t close = 0;
  for (std::size_t i = 0; i < prons.size(); ++i) {
    for (std::size_t j = i + 1; j < prons.size(); ++j) {
      if (test::dp_edit_distance(prons[i], prons[j]) <= 1) ++close;
    }
  }
  EXPECT_GE(close, 5u);
}

TEST(ToyCorpus, WordOrderCarriesStructure) {
  const auto corpus = generate_toy_corpus(5, 4000, 150);
  // Bigram successor sets should be far smaller than the vocabulary.
  std::map<Word, std::set<Word>> successors;
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i) successors[s[i]].insert(s[i + 1]);
  }
  double mean = 0.0;
  for (const auto& [w, next] : successors) mean += static_cast<double>(next.size());
  mean /= static_cast<double>(successors.size());
  EXPECT_LT(mean, 0.5 * static_cast<double>(corpus.lexicon.size()));
}

TEST(ToyCorpus, RejectsBadConfig) {
  EXPECT_THROW(generate_toy_corpus(1, 10, 49), ConfigError);
  EXPECT_THROW(generate_toy_corpus(1, 0, 100), ConfigError);
  EXPECT_NO_THROW(generate_toy_corpus(1, 1, 50));
}

TEST(Lexicon, PronunciationIsDeterministicAndNonEmpty) {
  EXPECT_EQ(pronounce("knew"), pronounce("knew"));
  EXPECT_FALSE(pronounce("a").empty());
  EXPECT_FALSE(pronounce("don't").empty());
  EXPECT_EQ(pronounce("don't"), pronounce("dont"));
  const auto& inv = PhoneInventory::standard();
  for (int p : pronounce("shethingquick")) {
    EXPECT_FALSE(inv.is_special(p));
    EXPECT_LT(static_cast<std::size_t>(p), inv.size());
  }
}

TEST(Lexicon, LookupErrorNamesWord) {
  Lexicon lex = build_lexicon(std::vector<Word>{"ab"});
  try {
    lex.lookup("zzz");
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
}

TEST(WordsToPhones, Examples) {
  const std::vector<Word> words = {"magic", "any"};
  const Lexicon lex = build_lexicon(words);
  EXPECT_TRUE(words_to_phones(std::vector<Word>{}, lex).empty());
  EXPECT_EQ(words_to_phones(std::vector<Word>{"magic"}, lex).phones, lex.lookup("magic"));
  const auto two = words_to_phones(words, lex);
  EXPECT_EQ(two.size(), lex.lookup("magic").size() + lex.lookup("any").size() + 1);
  EXPECT_EQ(two.phones[lex.lookup("magic").size()], PhoneInventory::kBoundary);
  const auto idx = phone_word_index(two);
  EXPECT_EQ(idx.front(), 0);
  EXPECT_EQ(idx[lex.lookup("magic").size()], 1);
  EXPECT_EQ(idx.back(), 1);
  try {
    words_to_phones(std::vector<Word>{"magic", "wizard"}, lex);
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("wizard"), std::string::npos);
  }
}

TEST(Bpe, SingleRepeatedWordFullyMerges) {
  const auto corpus = repeat({"ab"}, 10);
  const auto table = learn_bpe(corpus, 50);
  EXPECT_TRUE(table.has_token("_ab"));
  EXPECT_EQ(table.token(kMaskId), "[MASK]");
  EXPECT_LE(table.vocab_size(), 50u);
}

TEST(Bpe, Deterministic) {
  const auto corpus = generate_toy_corpus(2, 300, 100).sentences;
  EXPECT_EQ(learn_bpe(corpus, 150), learn_bpe(corpus, 150));
}

TEST(Bpe, TargetBelowInventoryIsConfigError) {
  const auto corpus = repeat({"abc", "de"}, 3);
  EXPECT_THROW(learn_bpe(corpus, 5), ConfigError);
}

TEST(Bpe, MaskNeverProducedByMerging) {
  const auto table = learn_bpe(generate_toy_corpus(4, 500, 100).sentences, 200);
  for (const auto& [a, b] : table.merges()) {
    EXPECT_NE(a + b, "[MASK]");
    EXPECT_EQ(a.find('\''), std::string::npos);
    EXPECT_EQ(b.find('\''), std::string::npos);
  }
}

TEST(Bpe, NoRemainingPairMoreFrequentThanLastMerge) {
  const auto corpus = generate_toy_corpus(9, 800, 100).sentences;
  const auto table = learn_bpe(corpus, 160);
  ASSERT_FALSE(table.merges().empty());
  const auto last = table.merges().back();
  std::vector<MergeTable::Merge> shorter(table.merges().begin(), table.merges().end() - 1);
  const MergeTable before(shorter, table.vocab());

  auto pair_counts = [&](const MergeTable& t) {
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    for (const auto& s : corpus) {
      for (const auto& w : s) {
        const auto pieces = segment_word(w, t);
        for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
          if (pieces[i] == "'" || pieces[i + 1] == "'") continue;
          ++counts[{pieces[i], pieces[i + 1]}];
        }
      }
    }
    return counts;
  };
  const std::size_t last_freq = pair_counts(before)[last];
  ASSERT_GT(last_freq, 0u);
  for (const auto& [pair, n] : pair_counts(table)) {
    EXPECT_LE(n, last_freq) << pair.first << " " << pair.second;
  }
}

TEST(Tokenize, TableOneSentence) {
  const auto table = learn_bpe(repeat(kTableOne, 20), 400);
  const auto seq = tokenize(kTableOne, table);
  const std::vector<std::string> expected = {"_i",    "_don",   "'",   "t",    "_believe",
                                             "_ann",  "_knew",  "_any", "_magic", "_or",
                                             "_she",  "'",      "d",   "_have", "_worked",
                                             "_it",   "_before"};
  EXPECT_EQ(surfaces(seq, table), expected);
  EXPECT_EQ(render_tokens(seq.tokens, table).substr(0, 12), "_i _don ' t ");

  const auto two = tokenize(std::vector<Word>{"i", "don't"}, table);
  ASSERT_EQ(two.word_spans.size(), 2u);
  EXPECT_EQ(table.token(two.tokens[0]), "_i");
  EXPECT_EQ(table.token(two.tokens[1]), "_don");
}

TEST(Tokenize, EmptyInput) {
  const auto table = learn_bpe(repeat({"ab"}, 3), 20);
  const auto seq = tokenize(std::vector<Word>{}, table);
  EXPECT_TRUE(seq.tokens.empty());
  EXPECT_TRUE(seq.word_spans.empty());
  EXPECT_TRUE(detokenize(seq, table).empty());
}

TEST(Tokenize, UnknownCharacterNamed) {
  const auto table = learn_bpe(repeat({"ab"}, 3), 20);
  try {
    tokenize(std::vector<Word>{"abq"}, table);
    FAIL();
  } catch (const TokenizationError& e) {
    EXPECT_NE(std::string(e.what()).find('q'), std::string::npos);
  }
}

TEST(Tokenize, RoundTripAndSpanPartition) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto corpus = generate_toy_corpus(seed, 1000, 120);
    const auto table = learn_bpe(corpus.sentences, 220);
    for (const auto& s : corpus.sentences) {
      const auto seq = tokenize(s, table);
      ASSERT_EQ(detokenize(seq, table), s);
      ASSERT_EQ(seq.word_spans.size(), s.size());
      std::size_t next = 0;
      for (const auto& [b, e] : seq.word_spans) {
        ASSERT_EQ(b, next);
        ASSERT_LT(b, e);
        EXPECT_EQ(table.token(seq.tokens[b]).front(), kBoundaryMarker);
        for (std::size_t i = b + 1; i < e; ++i) {
          EXPECT_NE(table.token(seq.tokens[i]).front(), kBoundaryMarker);
        }
        next = e;
      }
      EXPECT_EQ(next, seq.size());
    }
  }
}

TEST(Detokenize, SingleWordAndMalformedSpans) {
  const auto table = learn_bpe(repeat({"ab", "ba"}, 5), 30);
  const auto one = tokenize(std::vector<Word>{"ab"}, table);
  EXPECT_EQ(detokenize(one, table), (std::vector<Word>{"ab"}));

  auto seq = tokenize(std::vector<Word>{"ab", "ba"}, table);
  auto gap = seq;
  gap.word_spans[1].first += 1;
  EXPECT_THROW(detokenize(gap, table), StructuralError);
  auto overrun = seq;
  overrun.word_spans.back().second = seq.size() + 1;
  EXPECT_THROW(detokenize(overrun, table), StructuralError);
  auto missing = seq;
  missing.word_spans.pop_back();
  EXPECT_THROW(detokenize(missing, table), StructuralError);
}

TEST(CorpusIo, RoundTrips) {
  const auto dir = test::temp_dir("corpus_io");
  const auto corpus = generate_toy_corpus(11, 50, 80);
  write_corpus(dir / "c.txt", corpus.sentences);
  EXPECT_EQ(read_corpus(dir / "c.txt"), corpus.sentences);
  write_lexicon(dir / "lex.tsv", corpus.lexicon);
  EXPECT_EQ(read_lexicon(dir / "lex.tsv").entries(), corpus.lexicon.entries());
  const auto table = learn_bpe(corpus.sentences, 120);
  write_merge_table(dir / "m.json", table);
  EXPECT_EQ(read_merge_table(dir / "m.json"), table);
  write_phone_corpus(dir / "p.txt", corpus.sentences, corpus.lexicon);
  EXPECT_TRUE(std::filesystem::file_size(dir / "p.txt") > 0);

  std::ofstream(dir / "bad.json") << R"({"format_version": 99, "merges": [], "vocab": []})";
  EXPECT_THROW(read_merge_table(dir / "bad.json"), LoadError);
}
