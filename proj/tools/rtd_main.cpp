// Command-line driver for the rescoring and confidence pipeline.
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rtd/pipeline/config.hpp"
#include "rtd/pipeline/pipeline.hpp"

namespace {

using namespace rtd;

void print_rescore(const pipeline::RescoreOutcome& o) {
  std::printf("%s [%s] alpha=%g beta=%g\n", o.model.c_str(), rescore::to_string(o.scorer).c_str(), o.alpha, o.beta);
  std::printf("  dev  WER baseline %.4f rescored %.4f\n", o.dev_baseline_wer, o.dev_wer);
  std::printf("  test WER baseline %.4f rescored %.4f oracle %.4f\n", o.test_baseline_wer, o.test_wer,
              o.test_oracle_wer);
  std::printf("  passes/hyp %.3f  rho %.4f\n", o.mean_passes, o.test_pearson);
}

void print_confidence(const pipeline::ConfidenceOutcome& o) {
  std::printf("%s gamma=%g (dev NCE %.4f; endpoints %.4f / %.4f)\n", o.model.c_str(), o.gamma, o.dev_nce,
              o.dev_nce_gamma0, o.dev_nce_gamma1);
  std::printf("  test ASR     AUC %.4f NCE %.4f\n", o.test_auc_p, o.test_nce_p);
  std::printf("  test CEM     AUC %.4f NCE %.4f\n", o.test_auc_c, o.test_nce_c);
  std::printf("  test ASR+CEM AUC %.4f NCE %.4f\n", o.test_auc_interp, o.test_nce_interp);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replaced-token-detection models for n-best rescoring and word confidence"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config value, e.g. --set finetune.steps=500");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--workers", workers, "Cap on worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate corpus, lexicon, merges and phone files");
  auto* sim = app.add_subcommand("simulate", "Simulate train/dev/test n-best lists");
  auto* pre = app.add_subcommand("pretrain", "Pre-train one model variant");
  std::string variant;
  pre->add_option("--variant", variant, "electra, pelectra, bert_mlm or causal_lm")->required();

  auto* ft = app.add_subcommand("finetune", "Fine-tune a discriminator on labeled n-best hypotheses");
  std::string ft_model;
  std::optional<std::size_t> ft_k;
  ft->add_option("--model", ft_model, "electra, pelectra or bert")->required();
  ft->add_option("--k", ft_k, "Hypotheses per utterance (default from config)")->check(CLI::PositiveNumber);

  auto* rs = app.add_subcommand("rescore", "Tune alpha/beta on dev and rescore test");
  std::vector<std::string> rs_models;
  std::string rs_scorer;
  rs->add_option("--model", rs_models, "Scoring model(s)")->required();
  rs->add_option("--scorer", rs_scorer, "autoregressive, bert_pll or electra_count");

  auto* cf = app.add_subcommand("confidence", "Word confidence with gamma tuned on dev");
  std::string cf_model;
  cf->add_option("--model", cf_model, "Model with a discriminator head")->required();

  auto* bm = app.add_subcommand("benchmark", "Pass counts and wall time per scorer");
  auto* rp = app.add_subcommand("report", "Consolidated tables and report.json");
  auto* all = app.add_subcommand("run-all", "Every stage in order, then the report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (workers) overrides.push_back("workers=" + std::to_string(*workers));
    const auto cfg = pipeline::load_run_config(config_path, overrides);

    if (gen->parsed()) pipeline::cmd_gen_data(cfg);
    if (sim->parsed()) pipeline::cmd_simulate(cfg);
    if (pre->parsed()) pipeline::cmd_pretrain(cfg, pipeline::variant_from_string(variant));
    if (ft->parsed()) pipeline::cmd_finetune(cfg, ft_model, ft_k.value_or(cfg.finetune.k));
    if (rs->parsed()) {
      std::optional<rescore::ScorerKind> kind;
      if (!rs_scorer.empty()) kind = rescore::scorer_kind_from_string(rs_scorer);
      for (const auto& m : rs_models) print_rescore(pipeline::cmd_rescore(cfg, m, kind));
    }
    if (cf->parsed()) print_confidence(pipeline::cmd_confidence(cfg, cf_model));
    if (bm->parsed()) {
      for (const auto& r : pipeline::cmd_benchmark(cfg)) {
        std::printf("%-40s passes/hyp %.2f  ms/hyp %.3f\n", r.scorer.c_str(), r.mean_passes, r.wall_ms_per_hyp);
      }
    }
    if (rp->parsed()) std::cout << pipeline::cmd_report(cfg).dump(2) << '\n';
    if (all->parsed()) std::cout << pipeline::run_all(cfg).dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "rtd: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
