#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rtd/asr/channel.hpp"
#include "rtd/common/counters.hpp"
#include "rtd/common/errors.hpp"
#include "rtd/corpus/grammar.hpp"
#include "test_util.hpp"

using namespace rtd;
using namespace rtd::asr;

namespace {

const corpus::ToyCorpus& toy() {
  static const auto c = corpus::generate_toy_corpus(21, 1200, 150);
  return c;
}

const ConfusionTable& toy_table() {
  static const auto t = build_confusion_table(toy().lexicon, 1.0, 10);
  return t;
}

NBestList list_of(std::vector<std::pair<Sentence, double>> hyps) {
  NBestList l;
  l.utt_id = "u";
  for (auto& [w, p] : hyps) l.hyps.push_back({w, std::log(p), {}});
  return l;
}

}  // namespace

TEST(ConfusionTable, WeightRatioFollowsDistance) {
  corpus::Lexicon lex;
  lex.add("base", {10, 11, 12});
  lex.add("near", {10, 11, 13});
  lex.add("far", {14, 15, 16});
  const auto t = build_confusion_table(lex, 1.0, 5);
  const auto subs = t.substitutes("base");
  ASSERT_EQ(subs.size(), 2u);
  EXPECT_EQ(subs[0].word, "near");
  EXPECT_EQ(subs[0].distance, 1u);
  EXPECT_EQ(subs[1].distance, 3u);
  EXPECT_NEAR(subs[0].weight / subs[1].weight, std::exp(2.0), 1e-12);
  EXPECT_NEAR(subs[0].weight + subs[1].weight, 1.0, 1e-15);

  const auto flat = build_confusion_table(lex, 1e12, 5);
  EXPECT_NEAR(flat.substitutes("base")[0].weight, 0.5, 1e-9);
  EXPECT_THROW(build_confusion_table(lex, 0.0, 5), ConfigError);
}

TEST(ConfusionTable, NearestMatchesBruteForce) {
  const auto& lex = toy().lexicon;
  const auto& t = toy_table();
  for (const auto& [word, phones] : lex.entries()) {
    const auto subs = t.substitutes(word);
    ASSERT_EQ(subs.size(), 10u);
    std::size_t best = SIZE_MAX;
    for (const auto& [other, p2] : lex.entries()) {
      if (other != word) best = std::min(best, test::dp_edit_distance(phones, p2));
    }
    EXPECT_EQ(subs[0].distance, best) << word;
    double total = 0.0;
    for (const auto& s : subs) {
      EXPECT_NE(s.word, word);
      total += s.weight;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ConfusionTable, SingleWordLexiconWarns) {
  corpus::Lexicon lex;
  lex.add("solo", {10, 11});
  const auto before = Counters::global().get("asr.no_substitutes");
  const auto t = build_confusion_table(lex, 1.0, 5);
  EXPECT_TRUE(t.substitutes("solo").empty());
  EXPECT_EQ(Counters::global().get("asr.no_substitutes"), before + 1);
}

TEST(CorruptUtterance, DegenerateChannels) {
  const Sentence ref = toy().sentences[0];
  Rng rng(1);
  ChannelConfig clean;
  clean.p_sub = clean.p_ins = clean.p_del = 0.0;
  const auto c = corrupt_utterance(ref, clean, toy_table(), rng);
  EXPECT_EQ(c.words, ref);
  EXPECT_EQ(c.log_prob, 0.0);

  ChannelConfig drop = clean;
  drop.p_del = 1.0;
  EXPECT_TRUE(corrupt_utterance(ref, drop, toy_table(), rng).words.empty());
}

TEST(CorruptUtterance, SubstitutionFrequency) {
  ChannelConfig cfg;
  Rng rng(2);
  std::size_t subs = 0, words = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto& ref = toy().sentences[static_cast<std::size_t>(t) % toy().sentences.size()];
    const auto c = corrupt_utterance(ref, cfg, toy_table(), rng);
    for (const auto& e : c.edits) subs += e.kind == EditKind::kSubstitute;
    words += ref.size();
  }
  EXPECT_NEAR(static_cast<double>(subs) / static_cast<double>(words), cfg.p_sub, 0.01);
}

TEST(CorruptUtterance, LogProbIsExactChannelProbability) {
  ChannelConfig cfg;
  cfg.p_sub = 0.2;
  cfg.p_ins = 0.1;
  cfg.p_del = 0.1;
  Rng rng(3);
  for (int t = 0; t < 300; ++t) {
    const auto& ref = toy().sentences[static_cast<std::size_t>(t)];
    const auto c = corrupt_utterance(ref, cfg, toy_table(), rng);
    const std::vector<EditProbs> probs(ref.size(), {cfg.p_sub, cfg.p_del, cfg.p_ins});
    EXPECT_EQ(edit_log_prob(ref, probs, toy_table(), c.edits), c.log_prob);
    EXPECT_EQ(apply_edits(ref, c.edits), c.words);
    // Independent product of per-decision probabilities.
    double p = 1.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const auto subs = toy_table().substitutes(ref[i]);
      auto weight = [&](const Word& w) {
        for (const auto& s : subs) {
          if (s.word == w) return s.weight;
        }
        return 0.0;
      };
      const auto& e = c.edits[i];
      if (e.kind == EditKind::kSubstitute) p *= cfg.p_sub * weight(e.output);
      if (e.kind == EditKind::kDelete) p *= cfg.p_del;
      if (e.kind == EditKind::kKeep) p *= 1.0 - cfg.p_sub - cfg.p_del;
      p *= e.inserted ? cfg.p_ins * weight(*e.inserted) : 1.0 - cfg.p_ins;
    }
    EXPECT_NEAR(c.log_prob, std::log(p), 1e-9);
    EXPECT_LE(c.log_prob, 0.0);
  }
}

TEST(GenerateNbest, NoiselessGivesReference) {
  ChannelConfig cfg;
  cfg.p_sub = cfg.p_ins = cfg.p_del = 0.0;
  Rng rng(4);
  const auto l = generate_nbest(toy().sentences[3], cfg, toy_table(), rng);
  ASSERT_EQ(l.hyps.size(), 1u);
  EXPECT_EQ(l.hyps[0].words, toy().sentences[3]);
  EXPECT_EQ(l.hyps[0].word_post, std::vector<double>(toy().sentences[3].size(), 1.0));
}

TEST(GenerateNbest, InvariantsAndExactScores) {
  ChannelConfig cfg;
  Rng rng(5);
  std::size_t with_ref = 0;
  const std::size_t n = 1000;
  for (std::size_t u = 0; u < n; ++u) {
    const auto& ref = toy().sentences[u];
    NBestTrace trace;
    const auto l = generate_nbest(ref, cfg, toy_table(), rng, &trace);
    ASSERT_FALSE(l.hyps.empty());
    ASSERT_LE(l.hyps.size(), cfg.n_best);
    std::set<Sentence> seen;
    for (std::size_t h = 0; h < l.hyps.size(); ++h) {
      const auto& hyp = l.hyps[h];
      EXPECT_TRUE(seen.insert(hyp.words).second);
      EXPECT_FALSE(hyp.words.empty());
      EXPECT_LE(hyp.asr_log_prob, 0.0);
      if (h > 0) EXPECT_GE(l.hyps[h - 1].asr_log_prob, hyp.asr_log_prob);
      ASSERT_EQ(hyp.word_post.size(), hyp.words.size());
      for (double p : hyp.word_post) {
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
      EXPECT_EQ(apply_edits(trace.evidence.words, trace.edits[h]), hyp.words);
      EXPECT_EQ(edit_log_prob(trace.evidence.words, trace.stage2, toy_table(), trace.edits[h]),
                hyp.asr_log_prob);
    }
    with_ref += seen.count(ref);
  }
  EXPECT_GT(with_ref, 0u);
  EXPECT_LT(with_ref, n);
}

TEST(GenerateNbest, SeededDeterminism) {
  ChannelConfig cfg;
  for (std::size_t u = 0; u < 20; ++u) {
    Rng a(derive_seed(9, u)), b(derive_seed(9, u));
    EXPECT_EQ(generate_nbest(toy().sentences[u], cfg, toy_table(), a),
              generate_nbest(toy().sentences[u], cfg, toy_table(), b));
  }
}

TEST(WordPosteriors, SingleAndSymmetricPair) {
  auto one = list_of({{{"a", "b"}, 1.0}});
  word_posteriors(one);
  EXPECT_EQ(one.hyps[0].word_post, (std::vector<double>{1.0, 1.0}));

  auto two = list_of({{{"a", "b", "c"}, 0.5}, {{"a", "x", "c"}, 0.5}});
  word_posteriors(two);
  for (const auto& h : two.hyps) {
    EXPECT_NEAR(h.word_post[0], 1.0, 1e-15);
    EXPECT_NEAR(h.word_post[1], 0.5, 1e-15);
    EXPECT_NEAR(h.word_post[2], 1.0, 1e-15);
  }
}

TEST(WordPosteriors, FiveHypothesisVotingTable) {
  auto l = list_of({{{"a", "b", "c"}, 0.4},
                    {{"a", "x", "c"}, 0.2},
                    {{"a", "b"}, 0.2},
                    {{"a", "b", "y", "c"}, 0.1},
                    {{"x", "b", "c"}, 0.1}});
  word_posteriors(l);
  const std::vector<std::vector<double>> expected = {
      {0.9, 0.8, 0.8}, {0.9, 0.2, 0.8}, {0.9, 0.8}, {0.9, 0.8, 0.1, 0.8}, {0.1, 0.8, 0.8}};
  for (std::size_t h = 0; h < expected.size(); ++h) {
    ASSERT_EQ(l.hyps[h].word_post.size(), expected[h].size());
    for (std::size_t i = 0; i < expected[h].size(); ++i) {
      EXPECT_NEAR(l.hyps[h].word_post[i], expected[h][i], 1e-12) << h << "," << i;
    }
  }
}

TEST(NbestIo, RoundTrip) {
  ChannelConfig cfg;
  Rng rng(6);
  std::vector<NBestList> lists;
  for (std::size_t u = 0; u < 10; ++u) {
    lists.push_back(generate_nbest(toy().sentences[u], cfg, toy_table(), rng));
    lists.back().utt_id = "utt" + std::to_string(u);
  }
  lists[3].reference.reset();
  const auto dir = test::temp_dir("nbest_io");
  write_nbest(dir / "n.jsonl", lists);
  EXPECT_EQ(read_nbest(dir / "n.jsonl"), lists);
  EXPECT_THROW(read_nbest(dir / "absent.jsonl"), InputError);
}

TEST(ChannelConfig, Validation) {
  ChannelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.p_sub = 0.6;
  cfg.p_del = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ChannelConfig{};
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ChannelConfig{};
  cfg.n_best = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
