#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "rtd/common/errors.hpp"
#include "rtd/nn/checkpoint.hpp"
#include "rtd/nn/gradcheck.hpp"
#include "rtd/nn/optimizer.hpp"
#include "rtd/nn/tape.hpp"
#include "rtd/nn/transformer.hpp"
#include "test_util.hpp"

using namespace rtd;
using namespace rtd::nn;
using rtd::test::random_ids;
using rtd::test::single_token_words;
using rtd::test::tiny_config;

namespace {

void zero_param(ParameterSet& params, ParamId id) {
  for (auto& v : params[id].value) v = 0.0f;
}

void set_param(ParameterSet& params, ParamId id, float value) {
  for (auto& v : params[id].value) v = value;
}

CmlmModel tiny_cmlm(std::uint64_t seed) {
  CmlmConfig c{tiny_config(36), tiny_config(20)};
  return CmlmModel(c, seed);
}

// Phones for n words of 2-3 phones each, boundary between words.
corpus::PhoneSeq random_phones(Rng& rng, std::size_t n_words) {
  corpus::PhoneSeq p;
  for (std::size_t w = 0; w < n_words; ++w) {
    if (w > 0) p.phones.push_back(corpus::PhoneInventory::kBoundary);
    const std::size_t len = 2 + rng.uniform_int(2);
    for (std::size_t i = 0; i < len; ++i) p.phones.push_back(3 + static_cast<int>(rng.uniform_int(33)));
  }
  return p;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  auto c = tiny_config(10);
  EXPECT_NO_THROW(c.validate());
  c.hidden = 15;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(10);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(10);
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(0);
  EXPECT_THROW(EncoderModel(c, true, false, 1), ConfigError);
}

TEST(EncoderForward, EmptyDeterministicAndPositional) {
  auto cfg = tiny_config(12);
  cfg.dropout = 0.1;
  const EncoderModel model(cfg, true, true, 3);
  const auto empty = encoder_forward(model, corpus::TokenSeq{}, false, nullptr);
  EXPECT_EQ(empty.rows, 0u);

  const auto seq = single_token_words({3, 4, 5, 6, 7});
  EXPECT_EQ(encoder_forward(model, seq, false, nullptr), encoder_forward(model, seq, false, nullptr));
  const auto swapped = single_token_words({4, 3, 5, 6, 7});
  const auto a = encoder_forward(model, seq, false, nullptr);
  const auto b = encoder_forward(model, swapped, false, nullptr);
  // Same multiset of tokens; without positions the row for token 5 would match.
  double diff = 0.0;
  for (std::size_t j = 0; j < a.cols; ++j) diff += std::fabs(a(2, j) - b(2, j));
  EXPECT_GT(diff, 1e-9);

  Rng r1(9), r2(9), r3(10);
  const auto t1 = encoder_forward(model, seq, true, &r1);
  EXPECT_EQ(t1, encoder_forward(model, seq, true, &r2));
  EXPECT_NE(t1, encoder_forward(model, seq, true, &r3));
  EXPECT_NE(t1, a);
}

TEST(EncoderForward, OverlongIsLengthError) {
  const EncoderModel model(tiny_config(12), true, false, 3);
  Rng rng(1);
  const auto seq = single_token_words(random_ids(rng, 33, 3, 12));
  EXPECT_THROW(encoder_forward(model, seq, false, nullptr), LengthError);
}

TEST(LmHead, RowsAreDistributions) {
  const EncoderModel model(tiny_config(12), true, false, 4);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = single_token_words(random_ids(rng, 1 + rng.uniform_int(20), 0, 12));
    const auto p = lm_head(model, encoder_forward(model, seq, false, nullptr));
    ASSERT_EQ(p.rows, seq.size());
    for (std::size_t i = 0; i < p.rows; ++i) {
      double s = 0.0;
      for (double v : p.row(i)) {
        EXPECT_GT(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LmHead, ArgmaxStableUnderUniformShift) {
  Matrix logits(2, 4);
  logits.data = {0.1, 2.0, -1.0, 0.5, 3.0, 3.5, -2.0, 0.0};
  auto shifted = logits;
  for (auto& v : shifted.data) v += 17.25;
  const auto p = softmax_rows(logits);
  const auto q = softmax_rows(shifted);
  for (std::size_t i = 0; i < p.data.size(); ++i) EXPECT_NEAR(p.data[i], q.data[i], 1e-12);
}

TEST(LmHead, TwoTokenVocabMatchesHandComputation) {
  EncoderModel model(tiny_config(2, 4, 1), true, false, 5);
  auto& params = model.params();
  const auto head = *model.lm_head_params();
  // W (4x2) columns: w0 = (1,0,0,0), w1 = (0,1,0,0); bias (0.5, -0.5).
  zero_param(params, head.weight);
  params[head.weight].value[0 * 2 + 0] = 1.0f;
  params[head.weight].value[1 * 2 + 1] = 1.0f;
  params[head.bias].value = {0.5f, -0.5f};
  Matrix hidden(1, 4);
  hidden.data = {0.3, -0.2, 9.0, 9.0};
  const auto p = lm_head(model, hidden);
  const double z0 = 0.3 + 0.5, z1 = -0.2 - 0.5;
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  EXPECT_NEAR(p(0, 0), p0, 1e-12);
  EXPECT_NEAR(p(0, 1), 1.0 - p0, 1e-12);
}

TEST(Heads, MissingHeadIsConfigError) {
  const EncoderModel model(tiny_config(8), false, false, 1);
  const auto h = encoder_forward(model, single_token_words({3, 4}), false, nullptr);
  EXPECT_THROW(lm_head(model, h), ConfigError);
  EXPECT_THROW(disc_head(model, h), ConfigError);
}

TEST(DiscHead, ZeroWeightsGiveHalf) {
  EncoderModel model(tiny_config(8), false, false, 1);
  model.add_disc_head(Init::kZeros, 0);
  EXPECT_THROW(model.add_disc_head(Init::kZeros, 0), ConfigError);
  const auto d = disc_head(model, encoder_forward(model, single_token_words({3, 4, 5}), false, nullptr));
  ASSERT_EQ(d.size(), 3u);
  for (double v : d) EXPECT_EQ(v, 0.5);
}

TEST(DiscHead, OpenIntervalAndMonotoneInLogit) {
  EncoderModel model(tiny_config(10), false, true, 6);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto seq = single_token_words(random_ids(rng, 1 + rng.uniform_int(16), 0, 10));
    for (double v : disc_head(model, encoder_forward(model, seq, false, nullptr))) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  const auto seq = single_token_words({3, 4, 5});
  const auto hidden = encoder_forward(model, seq, false, nullptr);
  const auto bias = model.disc_head_params()->bias;
  std::vector<double> prev(3, 0.0);
  for (float b : {-3.0f, -1.0f, 0.0f, 2.0f, 5.0f}) {
    set_param(model.params(), bias, b);
    const auto d = disc_head(model, hidden);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GT(d[i], prev[i]);
      prev[i] = d[i];
    }
  }
}

TEST(CausalForward, FutureTokensDoNotLeak) {
  const CausalLmModel model(tiny_config(15), 7);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(14);
    auto ids = random_ids(rng, n, 3, 15);
    const auto base = causal_forward(model, single_token_words(ids));
    const std::size_t cut = 1 + rng.uniform_int(n - 1);
    for (std::size_t i = cut; i < n; ++i) ids[i] = 3 + static_cast<int>(rng.uniform_int(12));
    const auto changed = causal_forward(model, single_token_words(ids));
    // Row i predicts token i from tokens < i, so rows <= cut see no change.
    for (std::size_t r = 0; r <= cut; ++r) {
      for (std::size_t j = 0; j < base.cols; ++j) ASSERT_EQ(base(r, j), changed(r, j));
    }
  }
}

TEST(CausalForward, LengthOneAndLoopOracle) {
  const CausalLmModel model(tiny_config(15), 8);
  EXPECT_THROW(causal_forward(model, corpus::TokenSeq{}), LengthError);
  const auto one_a = causal_forward(model, single_token_words({5}));
  const auto one_b = causal_forward(model, single_token_words({9}));
  ASSERT_EQ(one_a.rows, 1u);
  EXPECT_EQ(one_a, one_b);  // conditioned on the start symbol only

  Rng rng(5);
  const auto ids = random_ids(rng, 12, 3, 15);
  const auto full = causal_forward(model, single_token_words(ids));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<long>(i) + 1);
    const auto part = causal_forward(model, single_token_words(prefix));
    for (std::size_t j = 0; j < full.cols; ++j) EXPECT_NEAR(part(i, j), full(i, j), 1e-6);
  }
  auto too_long = random_ids(rng, 33, 3, 15);
  EXPECT_THROW(causal_forward(model, single_token_words(too_long)), LengthError);
}

TEST(CmlmForward, DistributionsDeterminismAndPhoneAblation) {
  auto model = tiny_cmlm(9);
  Rng rng(6);
  const auto phones = random_phones(rng, 4);
  const auto words = single_token_words({3, corpus::kMaskId, 7, 8});
  const auto p = cmlm_forward(model, phones, words);
  ASSERT_EQ(p.rows, 4u);
  EXPECT_EQ(p.cols, 20u);
  for (std::size_t i = 0; i < p.rows; ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_EQ(p, cmlm_forward(model, phones, words));
  auto other = phones;
  for (auto& ph : other.phones) {
    if (ph != corpus::PhoneInventory::kBoundary) ph = 3 + (ph - 3 + 5) % 33;
  }
  EXPECT_NE(p, cmlm_forward(model, other, words));

  for (const auto& block : model.decoder_stack().blocks) {
    zero_param(model.params(), block.cross_attn->wo);
    zero_param(model.params(), block.cross_attn->bo);
  }
  EXPECT_EQ(cmlm_forward(model, phones, words), cmlm_forward(model, other, words));
}

TEST(Tape, AttentionKeyRanges) {
  const EncoderModel model(tiny_config(8), false, true, 1);
  Rng rng(4);
  Matrix q(3, 4), k(5, 4), v(5, 4);
  for (auto* m : {&q, &k, &v}) {
    for (auto& x : m->data) x = rng.uniform() - 0.5;
  }
  const std::vector<Tape::KeyRange> ranges{{0, 2}, {2, 5}, {3, 3}};
  auto run = [&](const Matrix& keys, const Matrix& values) {
    Tape t(model.params());
    return t.value(t.attention(t.constant(q), t.constant(keys), t.constant(values), 2, ranges));
  };
  const auto out = run(k, v);
  // Rows outside a query's range do not reach it; an empty range gives zeros.
  auto k2 = k, v2 = v;
  for (std::size_t j = 2; j < 5; ++j) {
    for (std::size_t d = 0; d < 4; ++d) k2(j, d) += 1.0, v2(j, d) -= 2.0;
  }
  const auto moved = run(k2, v2);
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_EQ(out(0, d), moved(0, d));
    EXPECT_NE(out(1, d), moved(1, d));
    EXPECT_EQ(out(2, d), 0.0);
  }
  // Full ranges reproduce unrestricted attention.
  Tape t(model.params());
  const std::vector<Tape::KeyRange> all(3, {0, 5});
  const auto a = t.attention(t.constant(q), t.constant(k), t.constant(v), 2, all);
  const auto b = t.attention(t.constant(q), t.constant(k), t.constant(v), 2, false);
  EXPECT_EQ(t.value(a), t.value(b));
  const std::vector<Tape::KeyRange> bad{{0, 6}, {0, 1}, {0, 1}};
  EXPECT_THROW(t.attention(t.constant(q), t.constant(k), t.constant(v), 2, bad), StructuralError);
}

TEST(Tape, BackwardStateErrors) {
  const EncoderModel model(tiny_config(8), false, true, 1);
  Tape eval(model.params());
  const auto h = encoder_hidden(model, eval, std::vector<int>{3, 4}, false, nullptr);
  EXPECT_THROW(eval.backward(h), StateError);

  Gradients grads(model.params());
  Tape tape(model.params(), &grads);
  const auto logits = disc_logits(model, tape, encoder_hidden(model, tape, std::vector<int>{3, 4}, false, nullptr));
  EXPECT_THROW(tape.backward(logits), StructuralError);
  const std::vector<double> t{1.0, 0.0}, w{1.0, 1.0};
  const auto loss = tape.sigmoid_bce(logits, t, w);
  tape.backward(loss);
  EXPECT_GT(grads.norm(), 0.0);
  EXPECT_THROW(tape.backward(loss), StateError);
}

TEST(GradCheck, EncoderWithDiscriminatorLoss) {
  EncoderModel model(tiny_config(11), false, true, 21);
  const std::vector<int> ids{3, 7, 2, 9, 4, 10};
  const std::vector<double> targets{0, 1, 1, 0, 0, 1};
  const std::vector<double> weights(6, 1.0);
  const auto res = grad_check(
      model.params(),
      [&](Tape& t) {
        return t.sigmoid_bce(disc_logits(model, t, encoder_hidden(model, t, ids, false, nullptr)),
                             targets, weights);
      },
      1e-4, 256, 1);
  EXPECT_GE(res.n_checked, 200u);
  EXPECT_LE(res.max_rel_error, 1e-3);
}

TEST(GradCheck, EncoderWithMlmLoss) {
  EncoderModel model(tiny_config(11), true, false, 22);
  const std::vector<int> ids{3, corpus::kMaskId, 5, corpus::kMaskId, 4};
  const std::vector<std::size_t> rows{1, 3};
  const std::vector<int> targets{8, 6};
  const auto res = grad_check(
      model.params(),
      [&](Tape& t) {
        return t.softmax_cross_entropy(lm_logits(model, t, encoder_hidden(model, t, ids, false, nullptr)),
                                       rows, targets);
      },
      1e-4, 256, 2);
  EXPECT_LE(res.max_rel_error, 1e-3);
}

TEST(GradCheck, CausalLm) {
  CausalLmModel model(tiny_config(11), 23);
  const std::vector<int> ids{3, 7, 9, 4, 10};
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  const auto res = grad_check(
      model.params(),
      [&](Tape& t) { return t.softmax_cross_entropy(causal_logits(model, t, ids, false, nullptr), rows, ids); },
      1e-4, 256, 3);
  EXPECT_GE(res.n_checked, 200u);
  EXPECT_LE(res.max_rel_error, 1e-3);
}

TEST(GradCheck, Cmlm) {
  CmlmModel model = tiny_cmlm(24);
  Rng rng(7);
  const auto phones = random_phones(rng, 3);
  const auto words = single_token_words({5, corpus::kMaskId, 9});
  const std::vector<std::size_t> rows{1};
  const std::vector<int> targets{12};
  const auto res = grad_check(
      model.params(),
      [&](Tape& t) {
        return t.softmax_cross_entropy(cmlm_logits(model, t, phones, words, false, nullptr), rows, targets);
      },
      1e-4, 256, 4);
  EXPECT_GE(res.n_checked, 200u);
  EXPECT_LE(res.max_rel_error, 1e-3);
}

TEST(Schedule, WarmupPeakDecay) {
  const LinearSchedule s{1000, 1e-4, 0.1};
  EXPECT_EQ(s.lr(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr(100), 1e-4);
  EXPECT_DOUBLE_EQ(s.lr(50), 0.5e-4);
  EXPECT_DOUBLE_EQ(s.lr(550), 0.5e-4);
  EXPECT_EQ(s.lr(1000), 0.0);
  EXPECT_EQ(LinearSchedule{}.peak_lr, 1e-4);
}

TEST(Optimizer, AdamReducesLossAndChecksShapes) {
  EncoderModel model(tiny_config(11), false, true, 30);
  const std::vector<int> ids{3, 7, 4, 9};
  const std::vector<double> targets{0, 1, 0, 1}, weights(4, 1.0);
  auto loss_of = [&](Gradients* g) {
    Tape t(model.params(), g);
    const auto loss =
        t.sigmoid_bce(disc_logits(model, t, encoder_hidden(model, t, ids, false, nullptr)), targets, weights);
    if (g != nullptr) t.backward(loss);
    return t.value(loss)(0, 0);
  };
  AdamOptimizer adam(model.params(), LinearSchedule{50, 1e-2, 0.1});
  const double first = loss_of(nullptr);
  for (int step = 0; step < 50; ++step) {
    Gradients g(model.params());
    loss_of(&g);
    adam.step(model.params(), g);
  }
  EXPECT_LT(loss_of(nullptr), 0.5 * first);
  EXPECT_EQ(adam.steps_taken(), 50u);

  EncoderModel other(tiny_config(12), false, true, 30);
  Gradients wrong(other.params());
  EXPECT_THROW(adam.step(model.params(), wrong), StructuralError);
  EXPECT_THROW(sgd_step(model.params(), wrong, 0.1), StructuralError);
}

TEST(Optimizer, ClipGradNorm) {
  EncoderModel model(tiny_config(8), false, true, 1);
  Gradients g(model.params());
  g[0][0] = 3.0;
  g[0][1] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.norm(), 1.0, 1e-12);
}

TEST(Checkpoint, RoundTripsAreOutputExact) {
  const auto dir = rtd::test::temp_dir("ckpt");
  EncoderModel enc(tiny_config(12), true, false, 40);
  enc.add_disc_head(Init::kXavier, 41);
  save_checkpoint(enc, {5, 40, "probe"}, dir / "enc.json");
  CheckpointMeta meta;
  const auto enc2 = load_encoder(dir / "enc.json", &meta);
  EXPECT_EQ(meta.steps, 5u);
  EXPECT_EQ(meta.seed, 40u);
  EXPECT_EQ(checkpoint_kind(dir / "enc.json"), "encoder");
  const auto probe = single_token_words({3, 4, 5, 11, 0});
  const auto h1 = encoder_forward(enc, probe, false, nullptr);
  const auto h2 = encoder_forward(enc2, probe, false, nullptr);
  EXPECT_EQ(h1, h2);
  EXPECT_EQ(lm_head(enc, h1), lm_head(enc2, h2));
  EXPECT_EQ(disc_head(enc, h1), disc_head(enc2, h2));

  const CausalLmModel lm(tiny_config(12), 42);
  save_checkpoint(lm, {}, dir / "lm.json");
  EXPECT_EQ(causal_forward(lm, probe), causal_forward(load_causal_lm(dir / "lm.json"), probe));

  const CmlmModel cm = tiny_cmlm(43);
  save_checkpoint(cm, {}, dir / "cmlm.json");
  Rng rng(1);
  const auto phones = random_phones(rng, 3);
  const auto words = single_token_words({3, 4, 5});
  EXPECT_EQ(cmlm_forward(cm, phones, words), cmlm_forward(load_cmlm(dir / "cmlm.json"), phones, words));
  EXPECT_THROW(load_encoder(dir / "cmlm.json"), LoadError);
}

TEST(Checkpoint, BadFilesAreLoadErrors) {
  const auto dir = rtd::test::temp_dir("ckpt_bad");
  const EncoderModel enc(tiny_config(12), true, false, 40);
  save_checkpoint(enc, {}, dir / "enc.json");
  std::ifstream in(dir / "enc.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::ofstream(dir / "trunc.json") << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_encoder(dir / "trunc.json"), LoadError);

  auto versioned = nlohmann::json::parse(text);
  versioned["format_version"] = 2;
  std::ofstream(dir / "v2.json") << versioned.dump();
  EXPECT_THROW(load_encoder(dir / "v2.json"), LoadError);

  auto short_table = nlohmann::json::parse(text);
  short_table["parameters"].erase(short_table["parameters"].size() - 1);
  std::ofstream(dir / "short.json") << short_table.dump();
  EXPECT_THROW(load_encoder(dir / "short.json"), LoadError);
  EXPECT_THROW(load_encoder(dir / "missing.json"), LoadError);
}

TEST(ForwardCounter, CountsTopLevelPasses) {
  const EncoderModel model(tiny_config(8), true, false, 1);
  const auto before = forward_pass_count();
  encoder_forward(model, single_token_words({3, 4}), false, nullptr);
  encoder_forward(model, single_token_words({3, 4, 5}), false, nullptr);
  EXPECT_EQ(forward_pass_count() - before, 2u);
}

TEST(GradCheck, DetectsWrongGradient) {
  EncoderModel model(tiny_config(11), false, true, 25);
  const std::vector<int> ids{3, 7, 4};
  const std::vector<double> targets{0, 1, 0}, weights(3, 1.0);
  // The recorded graph is twice the evaluated loss, so the analytic gradient is off by 2x.
  const auto res = grad_check(
      model.params(),
      [&](Tape& t) {
        const auto loss =
            t.sigmoid_bce(disc_logits(model, t, encoder_hidden(model, t, ids, false, nullptr)), targets, weights);
        return t.recording() ? t.scale(loss, 2.0) : loss;
      },
      1e-4, 64, 5);
  EXPECT_GT(res.max_rel_error, 0.4);
}
