#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "rtd/common/errors.hpp"
#include "rtd/pipeline/config.hpp"
#include "rtd/pipeline/pipeline.hpp"
#include "test_util.hpp"

using namespace rtd;
using namespace rtd::pipeline;
using nlohmann::json;

namespace {

// Small enough for a few seconds per full run.
json tiny_json(const std::filesystem::path& dir) {
  const json e = {{"n_layers", 1}, {"hidden", 16}, {"n_heads", 2}, {"ffn_mult", 2}, {"max_len", 48}, {"dropout", 0.0}};
  json phones = e;
  phones["max_len"] = 160;
  json j = {{"workdir", dir.string()},
            {"corpus", {{"n_sentences", 300}, {"vocab_size", 60}, {"bpe_vocab", 90}}},
            {"splits", {{"train", 24}, {"dev", 16}, {"test", 16}}},
            {"channel", {{"n_best", 6}}},
            {"models", {{"discriminator", e}, {"generator", e}, {"bert", e}, {"causal_lm", e},
                        {"cmlm", {{"encoder", phones}, {"decoder", e}}}}},
            {"finetune", {{"steps", 15}, {"batch_size", 4}}},
            {"benchmark", {{"n_lists", 2}}}};
  for (const char* block : {"electra", "pelectra", "bert_mlm", "causal_lm"}) {
    j[block] = {{"steps", 15}, {"batch_size", 4}, {"pack_len", 48}};
  }
  return j;
}

RunConfig tiny_config(const std::filesystem::path& dir) {
  auto cfg = run_config_from_json(tiny_json(dir));
  cfg.validate();
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RunConfigJson, RoundTripsDefaults) {
  const RunConfig d;
  const auto back = run_config_from_json(to_json(d));
  EXPECT_EQ(to_json(back), to_json(d));
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(run_config_from_json(json::object()).seed, 1u);
}

TEST(RunConfigJson, RejectsUnknownKeysWithPath) {
  try {
    run_config_from_json({{"finetune", {{"stepz", 3}}}});
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("finetune.stepz"), std::string::npos);
  }
  EXPECT_THROW(run_config_from_json({{"bogus", 1}}), ConfigError);
  try {
    run_config_from_json({{"splits", {{"dev", "many"}}}});
    FAIL() << "wrong type accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("splits.dev"), std::string::npos);
  }
  EXPECT_THROW(run_config_from_json({{"seed", -1}}), ConfigError);
}

TEST(RunConfigJson, RangeValidationNamesPath) {
  auto cfg = run_config_from_json({{"gamma_grid", {0.0, 1.5}}});
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma_grid"), std::string::npos);
  }
  cfg = run_config_from_json({{"finetune", {{"batch_size", 0}}}});
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("finetune"), std::string::npos);
  }
  cfg = run_config_from_json({{"workers", 0}});
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Overrides, SetNestedValues) {
  json j = json::object();
  apply_override(j, "finetune.steps=42");
  apply_override(j, "workdir=/tmp/x");
  apply_override(j, "alpha_grid=[0,1]");
  apply_override(j, "stages.bert=false");
  const auto cfg = run_config_from_json(j);
  EXPECT_EQ(cfg.finetune.steps, 42u);
  EXPECT_EQ(cfg.workdir, "/tmp/x");
  EXPECT_EQ(cfg.alpha_grid, (std::vector<double>{0, 1}));
  EXPECT_FALSE(cfg.stages.bert);
  EXPECT_THROW(apply_override(j, "finetune.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(j, "=3"), ConfigError);
}

TEST(LoadRunConfig, FileThenOverrides) {
  const auto dir = test::temp_dir("loadcfg");
  const auto path = dir / "cfg.json";
  {
    std::ofstream out(path);
    out << R"({"seed": 7, "finetune": {"steps": 11}})";
  }
  const auto cfg = load_run_config(path, {"finetune.steps=12"});
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.finetune.steps, 12u);
  EXPECT_THROW(load_run_config(dir / "missing.json", {}), ConfigError);
  {
    std::ofstream out(path);
    out << "{not json";
  }
  EXPECT_THROW(load_run_config(path, {}), ConfigError);
}

TEST(Commands, MissingInputsAreDiagnosed) {
  const auto cfg = tiny_config(test::temp_dir("missing"));
  EXPECT_THROW(cmd_simulate(cfg), InputError);
  EXPECT_THROW(cmd_pretrain(cfg, Variant::kElectra), InputError);
  EXPECT_THROW(cmd_rescore(cfg, "electra"), InputError);
  EXPECT_THROW(variant_from_string("gpt"), ConfigError);
  EXPECT_THROW(default_scorer("gpt"), ConfigError);
}

TEST(Pipeline, TinyEndToEnd) {
  const auto dir = test::temp_dir("e2e");
  const auto cfg = tiny_config(dir);
  const auto report = run_all(cfg);
  const Layout L{dir};

  std::vector<std::string> rows;
  for (const auto& r : report.at("table2")) rows.push_back(r.at("row").get<std::string>());
  EXPECT_EQ(rows, (std::vector<std::string>{"baseline", "+CausalLM", "+BERT", "+BERT(FT)", "+ELECTRA",
                                            "+ELECTRA(FT)", "+P-ELECTRA", "+P-ELECTRA(FT)", "oracle"}));
  EXPECT_EQ(report.at("table3").size(), 8u);
  for (const char* f : {"table2.csv", "table3.csv", "table4.csv", "report.json", "fig2_causal_lm_scatter.csv",
                        "fig2_pelectra_ft_means.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(L.report(f))) << f;
  }
  const auto& t2 = report.at("table2");
  const double base = t2.front().at("test_wer").get<double>();
  const double oracle = t2.back().at("test_wer").get<double>();
  for (const auto& r : t2) {
    EXPECT_GE(r.at("test_wer").get<double>(), oracle);
    if (r.contains("dev_wer") && r.at("row") != "oracle") {
      // The grid contains (0, 0), so dev can never get worse than baseline.
      EXPECT_LE(r.at("dev_wer").get<double>(), t2.front().at("dev_wer").get<double>());
    }
  }
  EXPECT_GT(base, oracle);
  EXPECT_TRUE(report.contains("phone_awareness"));

  // Same config, fresh directory: byte-identical report.
  const auto dir2 = test::temp_dir("e2e_again");
  auto cfg2 = cfg;
  cfg2.workdir = dir2.string();
  cfg2.workers = 2;
  run_all(cfg2);
  EXPECT_EQ(slurp(L.report("report.json")), slurp(Layout{dir2}.report("report.json")));
  EXPECT_EQ(slurp(L.model("electra_ft")), slurp(Layout{dir2}.model("electra_ft")));

  // Degenerate weights give back the first hypothesis.
  auto zero = cfg;
  zero.alpha_grid = {0.0};
  zero.beta_grid = {0.0};
  for (const std::string m : {"electra_ft", "causal_lm"}) {
    const auto o = cmd_rescore(zero, m);
    EXPECT_EQ(o.test_wer, o.test_baseline_wer) << m;
    EXPECT_EQ(o.dev_wer, o.dev_baseline_wer) << m;
  }

  const auto conf = cmd_confidence(cfg, "electra_ft");
  EXPECT_GE(conf.dev_nce, conf.dev_nce_gamma0);
  EXPECT_GE(conf.dev_nce, conf.dev_nce_gamma1);
  EXPECT_THROW(cmd_confidence(cfg, "causal_lm"), ConfigError);

  const auto bench = cmd_benchmark(cfg);
  ASSERT_EQ(bench.size(), 4u);
  EXPECT_DOUBLE_EQ(bench[0].mean_passes, 1.0);  // causal LM
  EXPECT_GT(bench[1].mean_passes, 1.0);         // pseudo-likelihood
  EXPECT_DOUBLE_EQ(bench[2].mean_passes, 1.0);
  EXPECT_TRUE(std::filesystem::exists(L.benchmark()));
}

TEST(Pipeline, ReducedStagesSkipModels) {
  const auto dir = test::temp_dir("reduced");
  auto cfg = tiny_config(dir);
  cfg.stages.bert = false;
  cfg.stages.causal_lm = false;
  cfg.stages.pelectra = false;
  const auto report = run_all(cfg);
  std::vector<std::string> rows;
  for (const auto& r : report.at("table2")) rows.push_back(r.at("row").get<std::string>());
  EXPECT_EQ(rows, (std::vector<std::string>{"baseline", "+ELECTRA", "+ELECTRA(FT)", "oracle"}));
  EXPECT_FALSE(report.contains("phone_awareness"));
  EXPECT_FALSE(std::filesystem::exists(Layout{dir}.model("bert")));
}
