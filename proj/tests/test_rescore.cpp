#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rtd/common/errors.hpp"
#include "rtd/corpus/grammar.hpp"
#include "rtd/rescore/rescore.hpp"
#include "test_util.hpp"

using namespace rtd;
using namespace rtd::rescore;
using rtd::test::tiny_config;
using Sentence = corpus::Sentence;

namespace {

const corpus::ToyCorpus& toy() {
  static const auto c = corpus::generate_toy_corpus(41, 800, 100);
  return c;
}

const corpus::MergeTable& toy_merges() {
  static const auto m = corpus::learn_bpe(toy().sentences, 130);
  return m;
}

nn::EncoderConfig wide_config() {
  auto c = tiny_config(toy_merges().vocab_size());
  c.max_len = 64;
  return c;
}

std::vector<asr::NBestList> toy_lists(std::size_t n, std::uint64_t seed) {
  static const auto table = asr::build_confusion_table(toy().lexicon, 1.0, 10);
  asr::ChannelConfig cfg;
  cfg.n_best = 8;
  Rng rng(seed);
  std::vector<asr::NBestList> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto l = asr::generate_nbest(toy().sentences[i], cfg, table, rng);
    l.utt_id = "u" + std::to_string(i);
    out.push_back(std::move(l));
  }
  return out;
}

ScoredList fixed_list(std::vector<double> asr, std::vector<double> lm, std::vector<std::size_t> len) {
  ScoredList l;
  l.utt_id = "f";
  l.asr_log_prob = std::move(asr);
  l.score_lm = std::move(lm);
  l.token_length = len;
  l.word_length = len;
  l.passes.assign(l.asr_log_prob.size(), 1);
  return l;
}

}  // namespace

TEST(ScoreAutoregressive, MatchesPrefixLoopAndIsNonPositive) {
  nn::CausalLmModel model(tiny_config(15), 3);
  const auto one = test::single_token_words({7});
  const auto s1 = score_lm_autoregressive(model, one);
  EXPECT_NEAR(s1.score, std::log(nn::causal_forward(model, one)(0, 7)), 1e-9);
  EXPECT_EQ(s1.passes, 1u);

  Rng rng(4);
  for (std::size_t len : {3u, 9u, 20u}) {
    const auto seq = test::single_token_words(test::random_ids(rng, len, 3, 15));
    const auto s = score_lm_autoregressive(model, seq);
    double loop = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const auto prefix = test::single_token_words(
          std::vector<int>(seq.tokens.begin(), seq.tokens.begin() + static_cast<long>(i) + 1));
      loop += std::log(nn::causal_forward(model, prefix)(i, static_cast<std::size_t>(seq.tokens[i])));
    }
    EXPECT_NEAR(s.score, loop, 1e-6);
    EXPECT_LE(s.score, 0.0);
    EXPECT_EQ(s.passes, 1u);
  }
  EXPECT_THROW(score_lm_autoregressive(model, corpus::TokenSeq{}), LengthError);
}

TEST(ScoreBertPll, PassCountAndNaiveOracle) {
  const nn::EncoderModel model(tiny_config(15), true, false, 5);
  Rng rng(6);
  for (std::size_t len : {1u, 5u, 20u}) {
    const auto seq = test::single_token_words(test::random_ids(rng, len, 3, 15));
    const auto s = score_lm_bert_pll(model, seq);
    EXPECT_EQ(s.passes, len);
    double naive = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      auto masked = seq;
      masked.tokens[i] = corpus::kMaskId;
      const auto probs = nn::lm_head(model, nn::encoder_forward(model, masked, false, nullptr));
      naive += std::log(probs(i, static_cast<std::size_t>(seq.tokens[i])));
    }
    EXPECT_NEAR(s.score, naive, 1e-6);
  }
  const nn::EncoderModel no_lm(tiny_config(15), false, true, 5);
  EXPECT_THROW(score_lm_bert_pll(no_lm, test::single_token_words({3})), ConfigError);
  EXPECT_THROW(Scorer::bert_pll(no_lm), ConfigError);
}

TEST(ScoreElectra, NegatedDiscSumInOnePass) {
  const nn::EncoderModel model(tiny_config(15), false, true, 7);
  Rng rng(8);
  for (std::size_t len : {1u, 5u, 20u}) {
    auto ids = test::random_ids(rng, len, 3, 15);
    ids[0] = corpus::kClsId;
    const auto seq = test::single_token_words(ids);
    const auto s = score_lm_electra(model, seq);
    EXPECT_EQ(s.passes, 1u);
    const auto d = nn::disc_head(model, nn::encoder_forward(model, seq, false, nullptr));
    double direct = 0.0;
    for (std::size_t i = 1; i < len; ++i) direct -= d[i];
    EXPECT_NEAR(s.score, direct, 1e-12);
  }
  nn::EncoderModel zero(tiny_config(15), false, false, 7);
  zero.add_disc_head(nn::Init::kZeros, 0);
  EXPECT_NEAR(score_lm_electra(zero, test::single_token_words({3, 4})).score, -1.0, 1e-12);
  const nn::EncoderModel no_disc(tiny_config(15), true, false, 7);
  EXPECT_THROW(score_lm_electra(no_disc, test::single_token_words({3})), ConfigError);
  EXPECT_THROW(Scorer::electra(no_disc), ConfigError);
}

TEST(Combined, ArithmeticAndDefaults) {
  asr::Hypothesis h{{"a"}, -3.0, {}};
  RescoreConfig cfg;
  EXPECT_EQ(combined_score(h, -7.0, 4, cfg), -3.0);
  cfg.alpha = 2.0;
  cfg.beta = 0.5;
  EXPECT_DOUBLE_EQ(combined_score(h, -7.0, 4, cfg), -3.0 - 14.0 + 2.0);
  const auto lm = RescoreConfig::defaults_for(ScorerKind::kAutoregressive);
  EXPECT_EQ(lm.alpha, 0.5);
  EXPECT_EQ(lm.beta, 1.0);
  const auto el = RescoreConfig::defaults_for(ScorerKind::kElectra);
  EXPECT_EQ(el.alpha, 9.0);
  EXPECT_EQ(el.beta, 0.0);
  cfg.alpha = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(scorer_kind_from_string("electra_count"), ScorerKind::kElectra);
  EXPECT_THROW(scorer_kind_from_string("gpt"), ConfigError);
}

TEST(Select, FixturesAndTieBreaks) {
  RescoreConfig cfg;
  EXPECT_EQ(select_hypothesis(fixed_list({-2.0}, {-9.0}, {3}), cfg).rank, 0u);
  // alpha = beta = 0 keeps the first (highest asr score) hypothesis.
  const auto l = fixed_list({-1.0, -1.5, -2.0}, {-3.0, -1.0, -0.2}, {3, 3, 4});
  EXPECT_EQ(select_hypothesis(l, cfg).rank, 0u);
  // alpha 1, beta 0.5: -1-3+1.5=-2.5, -1.5-1+1.5=-1.0, -2-0.2+2=-0.2
  cfg.alpha = 1.0;
  cfg.beta = 0.5;
  const auto s = select_hypothesis(l, cfg);
  EXPECT_EQ(s.rank, 2u);
  EXPECT_NEAR(s.combined, -0.2, 1e-12);
  EXPECT_DOUBLE_EQ(s.score_lm, -0.2);
  // Equal combined: higher asr score wins, then lower rank.
  cfg.beta = 0.0;
  EXPECT_EQ(select_hypothesis(fixed_list({-2.0, -1.0}, {-1.0, -2.0}, {1, 1}), cfg).rank, 1u);
  EXPECT_EQ(select_hypothesis(fixed_list({-1.0, -1.0}, {-2.0, -2.0}, {1, 1}), cfg).rank, 0u);
  EXPECT_THROW(select_hypothesis(fixed_list({}, {}, {}), cfg), InputError);
}

TEST(Select, ShiftInvariance) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> asr, lm;
    std::vector<std::size_t> len;
    for (int i = 0; i < 6; ++i) {
      asr.push_back(-10.0 * rng.uniform());
      lm.push_back(-5.0 * rng.uniform());
      len.push_back(1 + rng.uniform_int(6));
    }
    RescoreConfig cfg;
    cfg.alpha = 2.0;
    cfg.beta = 0.5;
    const auto base = select_hypothesis(fixed_list(asr, lm, len), cfg).rank;
    for (auto& v : lm) v += 3.0;
    EXPECT_EQ(select_hypothesis(fixed_list(asr, lm, len), cfg).rank, base);
  }
}

TEST(Oracle, MatchesBruteForceAndBoundsScorers) {
  const auto lists = toy_lists(60, 2);
  const auto wers = hypothesis_wers(lists);
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const auto r = oracle_select(lists[i]);
    std::size_t best = wers[i][0].errors();
    for (const auto& w : wers[i]) best = std::min(best, w.errors());
    EXPECT_EQ(wers[i][r].errors(), best);
    bool contains_ref = false;
    for (const auto& h : lists[i].hyps) contains_ref |= h.words == *lists[i].reference;
    if (contains_ref) {
      EXPECT_EQ(best, 0u);
    }
  }
  const nn::EncoderModel model(wide_config(), false, true, 9);
  const auto scored = score_lists(lists, Scorer::electra(model), toy_merges());
  RescoreConfig cfg;
  cfg.alpha = 5.0;
  std::vector<std::size_t> ranks;
  for (const auto& s : select_all(scored, cfg)) ranks.push_back(s.rank);
  EXPECT_LE(oracle_wer(lists), selection_wer(wers, ranks));
  EXPECT_LE(oracle_wer(lists), baseline_wer(lists));

  asr::NBestList no_ref = lists[0];
  no_ref.reference.reset();
  EXPECT_THROW(oracle_select(no_ref), InputError);
}

TEST(Oracle, TiesPreferHigherAsrScore) {
  asr::NBestList l;
  l.reference = Sentence{"a", "b"};
  l.hyps = {{{"a", "x"}, -1.0, {}}, {{"a", "y"}, -0.5, {}}};
  EXPECT_EQ(oracle_select(l), 1u);
}

TEST(Tune, GridSearchContracts) {
  const auto lists = toy_lists(50, 3);
  const nn::EncoderModel model(wide_config(), false, true, 10);
  const auto scored = score_lists(lists, Scorer::electra(model), toy_merges(), 2);
  const auto wers = hypothesis_wers(lists);

  const std::vector<double> one_a{1.5}, one_b{0.5};
  const auto single = tune_alpha_beta(lists, scored, one_a, one_b);
  EXPECT_EQ(single.alpha, 1.5);
  EXPECT_EQ(single.beta, 0.5);

  const auto alphas = default_alpha_grid();
  const auto betas = default_beta_grid();
  EXPECT_EQ(alphas.size(), 19u);
  const auto best = tune_alpha_beta(lists, scored, alphas, betas);
  EXPECT_LE(best.wer, baseline_wer(lists));
  Rng rng(1);
  for (int t = 0; t < 5; ++t) {
    RescoreConfig cfg;
    cfg.alpha = alphas[rng.uniform_int(alphas.size())];
    cfg.beta = betas[rng.uniform_int(betas.size())];
    std::vector<std::size_t> ranks;
    for (const auto& s : select_all(scored, cfg)) ranks.push_back(s.rank);
    EXPECT_LE(best.wer, selection_wer(wers, ranks) + 1e-15);
  }
  RescoreConfig at_best;
  at_best.alpha = best.alpha;
  at_best.beta = best.beta;
  std::vector<std::size_t> ranks;
  for (const auto& s : select_all(scored, at_best)) ranks.push_back(s.rank);
  EXPECT_DOUBLE_EQ(selection_wer(wers, ranks), best.wer);
  EXPECT_THROW(tune_alpha_beta(lists, scored, std::vector<double>{}, betas), InputError);
}

TEST(Tune, TiesGoToSmallerAlphaThenBeta) {
  // Scores that never change the selection: every grid point ties.
  asr::NBestList l;
  l.utt_id = "t";
  l.reference = Sentence{"a"};
  l.hyps = {{{"a"}, -1.0, {}}, {{"b"}, -2.0, {}}};
  const std::vector<asr::NBestList> lists{l};
  const std::vector<ScoredList> scored{fixed_list({-1.0, -2.0}, {-1.0, -1.0}, {1, 1})};
  const auto r = tune_alpha_beta(lists, scored, std::vector<double>{2.0, 1.0}, std::vector<double>{1.0, 0.5});
  EXPECT_EQ(r.alpha, 1.0);
  EXPECT_EQ(r.beta, 0.5);
  EXPECT_EQ(r.wer, 0.0);
}

TEST(Benchmark, PassCountsAndRelativeCost) {
  std::vector<asr::NBestList> sample(1);
  sample[0].utt_id = "b";
  for (int i = 0; i < 6; ++i) {
    sample[0].hyps.push_back({toy().sentences[10 + i], -1.0, {}});
  }
  const auto cfg = wide_config();
  const nn::CausalLmModel causal(cfg, 1);
  const nn::EncoderModel bert(cfg, true, false, 2);
  const nn::EncoderModel electra(cfg, false, true, 3);
  const std::vector<NamedScorer> scorers{{"autoregressive", Scorer::autoregressive(causal)},
                                         {"bert_pll", Scorer::bert_pll(bert)},
                                         {"electra", Scorer::electra(electra)}};
  const auto rows = benchmark_scorers(scorers, sample, toy_merges(), 2);
  ASSERT_EQ(rows.size(), 3u);
  double mean_len = 0.0;
  for (const auto& h : sample[0].hyps) mean_len += static_cast<double>(corpus::tokenize(h.words, toy_merges()).size());
  mean_len /= 6.0;
  ASSERT_GE(mean_len, 4.0);
  EXPECT_EQ(rows[0].mean_passes, 1.0);
  EXPECT_DOUBLE_EQ(rows[1].mean_passes, mean_len);
  EXPECT_EQ(rows[2].mean_passes, 1.0);
  EXPECT_LT(rows[2].wall_ms_per_hyp, rows[1].wall_ms_per_hyp);
  EXPECT_DOUBLE_EQ(rows[0].ratio_vs_autoregressive, 1.0);

  const auto path = test::temp_dir("bench") / "b.csv";
  write_benchmark_csv(path, rows);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "scorer,mean_passes,wall_ms_per_hyp,ratio_vs_autoregressive");
}

TEST(RescoreIo, Jsonl) {
  const auto lists = toy_lists(4, 5);
  const nn::EncoderModel model(wide_config(), false, true, 11);
  const auto scored = score_lists(lists, Scorer::electra(model), toy_merges());
  const auto chosen = select_all(scored, RescoreConfig::defaults_for(ScorerKind::kElectra));
  const auto path = test::temp_dir("rescore") / "r.jsonl";
  write_rescore_jsonl(path, scored, chosen);
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("utt_id").get<std::string>(), lists[n].utt_id);
    EXPECT_EQ(j.at("chosen_rank").get<std::size_t>(), chosen[n].rank);
    EXPECT_EQ(j.at("passes").get<std::size_t>(), 1u);
    EXPECT_TRUE(j.contains("combined") && j.contains("score_lm"));
    ++n;
  }
  EXPECT_EQ(n, 4u);
}
