#include "rtd/pipeline/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "rtd/common/counters.hpp"
#include "rtd/common/errors.hpp"
#include "rtd/common/parallel.hpp"
#include "rtd/confidence/confidence.hpp"
#include "rtd/corpus/grammar.hpp"
#include "rtd/corpus/io.hpp"
#include "rtd/finetune/finetune.hpp"
#include "rtd/metrics/metrics.hpp"
#include "rtd/nn/checkpoint.hpp"
#include "rtd/pretrain/pretrain.hpp"

namespace rtd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kSplits[] = {"train", "dev", "test"};

class StageTimer {
 public:
  explicit StageTimer(std::string name) : name_(std::move(name)), t0_(std::chrono::steady_clock::now()) {
    std::cerr << "[rtd] " << name_ << " ..." << std::endl;
  }
  ~StageTimer() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0_;
    std::fprintf(stderr, "[rtd] %s done in %.1f s\n", name_.c_str(), dt.count());
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point t0_;
};

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw InputError("missing " + p.string() + " (run '" + producer + "' first)");
}

nn::EncoderConfig with_vocab(nn::EncoderConfig c, std::size_t vocab) {
  c.vocab_size = vocab;
  return c;
}

corpus::MergeTable load_merges(const Layout& L) {
  require(L.merges(), "gen-data");
  return corpus::read_merge_table(L.merges());
}

std::vector<asr::NBestList> load_split(const Layout& L, const std::string& split) {
  require(L.nbest(split), "simulate");
  return asr::read_nbest(L.nbest(split));
}

std::uint64_t stage_seed(const RunConfig& cfg, const std::string& what) { return derive_seed(cfg.seed, what); }

bool model_enabled(const RunConfig& cfg, const std::string& m) {
  if (m == "causal_lm") return cfg.stages.causal_lm;
  if (m == "bert" || m == "bert_ft") return cfg.stages.bert;
  if (m == "pelectra" || m == "pelectra_ft") return cfg.stages.pelectra;
  return true;
}

// Checkpoint holding the encoder behind a scoring model name.
std::string checkpoint_of(const std::string& model) {
  if (model == "electra") return "electra_disc";
  if (model == "pelectra") return "pelectra_disc";
  return model;
}

std::string producer_of(const std::string& model) {
  if (model.ends_with("_ft")) return "finetune --model " + model.substr(0, model.size() - 3);
  if (model == "bert") return "pretrain --variant bert_mlm";
  return "pretrain --variant " + model;
}

// Loaded scoring model; keeps the weights alive for the Scorer.
struct ScoringModel {
  std::string name;
  std::optional<nn::EncoderModel> encoder;
  std::optional<nn::CausalLmModel> causal;

  rescore::Scorer scorer(rescore::ScorerKind kind) const {
    switch (kind) {
      case rescore::ScorerKind::kAutoregressive:
        if (!causal) throw ConfigError("model '" + name + "' cannot be scored autoregressively");
        return rescore::Scorer::autoregressive(*causal);
      case rescore::ScorerKind::kBertPll:
        if (!encoder) throw ConfigError("model '" + name + "' has no encoder");
        return rescore::Scorer::bert_pll(*encoder);
      case rescore::ScorerKind::kElectra:
        if (!encoder) throw ConfigError("model '" + name + "' has no encoder");
        return rescore::Scorer::electra(*encoder);
    }
    throw StateError("unknown scorer kind");
  }
};

ScoringModel load_model(const RunConfig& cfg, const Layout& L, const std::string& name) {
  ScoringModel m;
  m.name = name;
  if (name == "untrained") {
    const auto merges = load_merges(L);
    m.encoder.emplace(with_vocab(cfg.models.discriminator, merges.vocab_size()), false, true,
                      stage_seed(cfg, "untrained.init"));
    return m;
  }
  const auto path = L.model(checkpoint_of(name));
  require(path, producer_of(name));
  if (name == "causal_lm") m.causal = nn::load_causal_lm(path);
  else m.encoder = nn::load_encoder(path);
  return m;
}

double mean_passes(const std::vector<rescore::ScoredList>& lists) {
  double total = 0.0, n = 0.0;
  for (const auto& l : lists) {
    for (auto p : l.passes) total += static_cast<double>(p);
    n += static_cast<double>(l.size());
  }
  return n > 0 ? total / n : 0.0;
}

std::vector<metrics::ScoreErrorRow> score_rows(const std::vector<asr::NBestList>& lists,
                                               const std::vector<rescore::ScoredList>& scored) {
  const asr::NBestList* base = lists.data();
  return metrics::score_error_table(lists, [&](const asr::NBestList& l, std::size_t r) {
    return scored[static_cast<std::size_t>(&l - base)].score_lm[r];
  });
}

struct RescoreData {
  RescoreOutcome outcome;
  std::vector<rescore::ScoredList> test_scored;
  std::vector<rescore::ScoredHypothesis> test_chosen;
  std::vector<metrics::ScoreErrorRow> test_rows;
};

RescoreData rescore_model(const RunConfig& cfg, const Layout& L, const std::string& model,
                          rescore::ScorerKind kind, const std::vector<asr::NBestList>& dev,
                          const std::vector<asr::NBestList>& test, const corpus::MergeTable& merges) {
  StageTimer timer("rescore " + model + " (" + rescore::to_string(kind) + ")");
  const auto m = load_model(cfg, L, model);
  const auto scorer = m.scorer(kind);
  const auto dev_scored = rescore::score_lists(dev, scorer, merges, cfg.workers);
  RescoreData d;
  d.test_scored = rescore::score_lists(test, scorer, merges, cfg.workers);

  auto& o = d.outcome;
  o.model = model;
  o.scorer = kind;
  const auto tuned = rescore::tune_alpha_beta(dev, dev_scored, cfg.alpha_grid, cfg.beta_grid, cfg.length_unit);
  o.alpha = tuned.alpha;
  o.beta = tuned.beta;
  o.dev_wer = tuned.wer;
  o.dev_baseline_wer = rescore::baseline_wer(dev);
  rescore::RescoreConfig rc;
  rc.alpha = tuned.alpha;
  rc.beta = tuned.beta;
  rc.length_unit = cfg.length_unit;
  d.test_chosen = rescore::select_all(d.test_scored, rc);
  std::vector<std::size_t> ranks;
  for (const auto& c : d.test_chosen) ranks.push_back(c.rank);
  o.test_wer = rescore::selection_wer(rescore::hypothesis_wers(test), ranks);
  o.test_baseline_wer = rescore::baseline_wer(test);
  o.test_oracle_wer = rescore::oracle_wer(test);
  o.mean_passes = mean_passes(d.test_scored);
  d.test_rows = score_rows(test, d.test_scored);
  o.test_pearson = metrics::score_error_pearson(d.test_rows);
  return d;
}

json outcome_json(const RescoreOutcome& o) {
  return {{"model", o.model},
          {"scorer", rescore::to_string(o.scorer)},
          {"alpha", o.alpha},
          {"beta", o.beta},
          {"dev_baseline_wer", o.dev_baseline_wer},
          {"dev_wer", o.dev_wer},
          {"test_baseline_wer", o.test_baseline_wer},
          {"test_wer", o.test_wer},
          {"test_oracle_wer", o.test_oracle_wer},
          {"mean_passes", o.mean_passes},
          {"test_pearson", o.test_pearson}};
}

json confidence_json(const ConfidenceOutcome& o) {
  return {{"model", o.model},
          {"gamma", o.gamma},
          {"dev_nce_gamma0", o.dev_nce_gamma0},
          {"dev_nce_gamma1", o.dev_nce_gamma1},
          {"dev_nce", o.dev_nce},
          {"dev_auc", o.dev_auc},
          {"test_auc_p", o.test_auc_p},
          {"test_nce_p", o.test_nce_p},
          {"test_auc_c", o.test_auc_c},
          {"test_nce_c", o.test_nce_c},
          {"test_auc_interp", o.test_auc_interp},
          {"test_nce_interp", o.test_nce_interp}};
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(10);
  return out;
}

ConfidenceOutcome confidence_model(const RunConfig& cfg, const Layout& L, const std::string& model,
                                   const std::vector<asr::NBestList>& dev,
                                   const std::vector<asr::NBestList>& test,
                                   const corpus::MergeTable& merges) {
  StageTimer timer("confidence " + model);
  const auto m = load_model(cfg, L, model);
  if (!m.encoder || !m.encoder->has_disc_head()) {
    throw ConfigError("model '" + model + "' has no discriminator head for confidence");
  }
  auto dev_set = confidence::score_top1(dev, *m.encoder, merges, 0.0, cfg.workers);
  auto test_set = confidence::score_top1(test, *m.encoder, merges, 0.0, cfg.workers);
  ConfidenceOutcome o;
  o.model = model;
  const auto tuned = confidence::tune_gamma(dev_set, cfg.gamma_grid);
  o.gamma = tuned.gamma;
  o.dev_nce = tuned.nce;
  o.dev_auc = tuned.auc;
  confidence::set_gamma(dev_set, 0.0);
  o.dev_nce_gamma0 = confidence::evaluate_set(dev_set, confidence::Source::kCPrime).nce;
  confidence::set_gamma(dev_set, 1.0);
  o.dev_nce_gamma1 = confidence::evaluate_set(dev_set, confidence::Source::kCPrime).nce;

  confidence::set_gamma(test_set, tuned.gamma);
  const auto p = confidence::evaluate_set(test_set, confidence::Source::kPWord);
  const auto c = confidence::evaluate_set(test_set, confidence::Source::kCWord);
  const auto i = confidence::evaluate_set(test_set, confidence::Source::kCPrime);
  o.test_auc_p = p.auc;
  o.test_nce_p = p.nce;
  o.test_auc_c = c.auc;
  o.test_nce_c = c.nce;
  o.test_auc_interp = i.auc;
  o.test_nce_interp = i.nce;
  confidence::write_confidence_jsonl(L.confidence(model + "_test.jsonl"), test_set);
  return o;
}

void write_finetune_csv(const fs::path& path, const std::vector<double>& losses) {
  auto out = open_csv(path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << ',' << losses[i] << '\n';
}

const std::map<std::string, std::string>& row_labels() {
  static const std::map<std::string, std::string> m{
      {"causal_lm", "+CausalLM"},   {"bert", "+BERT"},           {"bert_ft", "+BERT(FT)"},
      {"electra", "+ELECTRA"},      {"electra_ft", "+ELECTRA(FT)"}, {"pelectra", "+P-ELECTRA"},
      {"pelectra_ft", "+P-ELECTRA(FT)"}, {"untrained", "untrained discriminator"}};
  return m;
}

std::string display_name(const std::string& model) {
  static const std::map<std::string, std::string> m{
      {"causal_lm", "Transformer LM"}, {"bert", "BERT"},         {"bert_ft", "BERT(FT)"},
      {"electra", "ELECTRA"},         {"electra_ft", "ELECTRA(FT)"}, {"pelectra", "P-ELECTRA"},
      {"pelectra_ft", "P-ELECTRA(FT)"}, {"untrained", "untrained discriminator"}};
  return m.at(model);
}

}  // namespace

Variant variant_from_string(const std::string& name) {
  if (name == "electra") return Variant::kElectra;
  if (name == "pelectra") return Variant::kPelectra;
  if (name == "bert_mlm") return Variant::kBertMlm;
  if (name == "causal_lm") return Variant::kCausalLm;
  throw ConfigError("unknown pre-training variant '" + name + "'");
}

std::vector<std::string> model_names() {
  return {"causal_lm", "bert", "bert_ft", "electra", "electra_ft", "pelectra", "pelectra_ft", "untrained"};
}

rescore::ScorerKind default_scorer(const std::string& model) {
  if (model == "causal_lm") return rescore::ScorerKind::kAutoregressive;
  if (model == "bert") return rescore::ScorerKind::kBertPll;
  for (const auto& m : model_names()) {
    if (m == model) return rescore::ScorerKind::kElectra;
  }
  throw ConfigError("unknown model '" + model + "'");
}

void cmd_gen_data(const RunConfig& cfg) {
  StageTimer timer("gen-data");
  const Layout L{cfg.dir()};
  const auto toy = corpus::generate_toy_corpus(stage_seed(cfg, "corpus"), cfg.corpus.n_sentences + cfg.splits.total(),
                                               cfg.corpus.vocab_size);
  const std::vector<corpus::Sentence> text(toy.sentences.begin(),
                                           toy.sentences.begin() + static_cast<long>(cfg.corpus.n_sentences));
  const std::vector<corpus::Sentence> utts(toy.sentences.begin() + static_cast<long>(cfg.corpus.n_sentences),
                                           toy.sentences.end());
  const auto merges = corpus::learn_bpe(text, cfg.corpus.bpe_vocab);
  corpus::write_corpus(L.corpus(), text);
  corpus::write_corpus(L.utterances(), utts);
  corpus::write_lexicon(L.lexicon(), toy.lexicon);
  corpus::write_merge_table(L.merges(), merges);
  corpus::write_phone_corpus(L.phones(), text, toy.lexicon);
  // Without the work directory and thread cap: neither changes any output,
  // and leaving them out lets runs in different places compare equal.
  auto saved = to_json(cfg);
  saved.erase("workdir");
  saved.erase("workers");
  write_json(L.root / "config.json", saved);
}

void cmd_simulate(const RunConfig& cfg) {
  StageTimer timer("simulate");
  const Layout L{cfg.dir()};
  require(L.utterances(), "gen-data");
  const auto utts = corpus::read_corpus(L.utterances());
  if (utts.size() != cfg.splits.total()) {
    throw InputError("utterance file has " + std::to_string(utts.size()) + " sentences, config expects " +
                     std::to_string(cfg.splits.total()));
  }
  const auto table = asr::build_confusion_table(corpus::read_lexicon(L.lexicon()), cfg.channel.tau,
                                                cfg.channel.k_nearest);
  const std::size_t sizes[] = {cfg.splits.train, cfg.splits.dev, cfg.splits.test};
  std::size_t offset = 0;
  for (int s = 0; s < 3; ++s) {
    std::vector<asr::NBestList> lists(sizes[s]);
    parallel_for(sizes[s], cfg.workers, [&](std::size_t i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05zu", kSplits[s], i);
      Rng rng(stage_seed(cfg, std::string("asr.") + id));
      lists[i] = asr::generate_nbest(utts[offset + i], cfg.channel, table, rng);
      lists[i].utt_id = id;
    });
    asr::write_nbest(L.nbest(kSplits[s]), lists);
    offset += sizes[s];
  }
}

void cmd_pretrain(const RunConfig& cfg, Variant variant) {
  const Layout L{cfg.dir()};
  require(L.corpus(), "gen-data");
  const auto merges = load_merges(L);
  const auto lexicon = corpus::read_lexicon(L.lexicon());
  const auto examples = pretrain::make_examples(corpus::read_corpus(L.corpus()), merges, lexicon);
  const std::size_t V = merges.vocab_size();

  switch (variant) {
    case Variant::kElectra: {
      StageTimer timer("pretrain electra");
      auto pc = cfg.electra;
      pc.seed = stage_seed(cfg, "electra.train");
      nn::EncoderModel gen(with_vocab(cfg.models.generator, V), true, false, stage_seed(cfg, "electra.gen.init"));
      nn::EncoderModel disc(with_vocab(cfg.models.discriminator, V), false, true, stage_seed(cfg, "electra.disc.init"));
      const auto log = pretrain::train_electra(gen, disc, examples, pc);
      nn::save_checkpoint(gen, {pc.steps, cfg.seed, "electra generator"}, L.model("electra_gen"));
      nn::save_checkpoint(disc, {pc.steps, cfg.seed, "electra discriminator"}, L.model("electra_disc"));
      pretrain::write_loss_csv(L.loss("electra"), log);
      break;
    }
    case Variant::kPelectra: {
      StageTimer timer("pretrain pelectra");
      auto pc = cfg.pelectra;
      pc.seed = stage_seed(cfg, "pelectra.train");
      nn::CmlmConfig cc{with_vocab(cfg.models.cmlm.encoder, lexicon.inventory_size()),
                        with_vocab(cfg.models.cmlm.decoder, V)};
      nn::CmlmModel gen(cc, stage_seed(cfg, "pelectra.gen.init"));
      nn::EncoderModel disc(with_vocab(cfg.models.discriminator, V), false, true, stage_seed(cfg, "pelectra.disc.init"));
      const auto log = pretrain::train_pelectra(gen, disc, examples, pc);
      nn::save_checkpoint(gen, {pc.steps, cfg.seed, "p-electra cmlm generator"}, L.model("pelectra_cmlm"));
      nn::save_checkpoint(disc, {pc.steps, cfg.seed, "p-electra discriminator"}, L.model("pelectra_disc"));
      pretrain::write_loss_csv(L.loss("pelectra"), log);
      break;
    }
    case Variant::kBertMlm: {
      StageTimer timer("pretrain bert_mlm");
      auto pc = cfg.bert_mlm;
      pc.seed = stage_seed(cfg, "bert.train");
      nn::EncoderModel bert(with_vocab(cfg.models.bert, V), true, false, stage_seed(cfg, "bert.init"));
      const auto log = pretrain::train_mlm(bert, examples, pc);
      nn::save_checkpoint(bert, {pc.steps, cfg.seed, "masked LM"}, L.model("bert"));
      pretrain::write_loss_csv(L.loss("bert_mlm"), log);
      break;
    }
    case Variant::kCausalLm: {
      StageTimer timer("pretrain causal_lm");
      auto pc = cfg.causal_lm;
      pc.seed = stage_seed(cfg, "causal.train");
      nn::CausalLmModel lm(with_vocab(cfg.models.causal_lm, V), stage_seed(cfg, "causal.init"));
      const auto log = pretrain::train_causal(lm, examples, pc);
      nn::save_checkpoint(lm, {pc.steps, cfg.seed, "causal LM"}, L.model("causal_lm"));
      pretrain::write_loss_csv(L.loss("causal_lm"), log);
      break;
    }
  }
}

void cmd_finetune(const RunConfig& cfg, const std::string& model, std::size_t k) {
  StageTimer timer("finetune " + model);
  const Layout L{cfg.dir()};
  const auto merges = load_merges(L);
  const auto train = load_split(L, "train");
  const auto set = finetune::build_finetune_set(train, k, merges);
  finetune::write_labeled(L.labeled(), set);

  nn::EncoderModel m;
  if (model == "electra" || model == "pelectra") {
    const auto path = L.model(checkpoint_of(model));
    require(path, producer_of(model));
    m = nn::load_encoder(path);
  } else if (model == "bert") {
    require(L.model("bert"), producer_of("bert"));
    m = finetune::attach_new_disc_head(nn::load_encoder(L.model("bert")), nn::Init::kNormal002,
                                       stage_seed(cfg, "bert_ft.head"));
  } else {
    throw ConfigError("cannot fine-tune '" + model + "' (expected electra, pelectra or bert)");
  }
  auto fc = cfg.finetune;
  fc.k = k;
  fc.seed = stage_seed(cfg, model + ".finetune");
  const auto losses = finetune::train_finetune(m, set, fc);
  nn::save_checkpoint(m, {fc.steps, cfg.seed, model + " fine-tuned on " + std::to_string(k) + "-best"},
                      L.model(model + "_ft"));
  write_finetune_csv(L.loss(model + "_ft"), losses);
}

RescoreOutcome cmd_rescore(const RunConfig& cfg, const std::string& model,
                           std::optional<rescore::ScorerKind> scorer) {
  const Layout L{cfg.dir()};
  const auto merges = load_merges(L);
  const auto dev = load_split(L, "dev");
  const auto test = load_split(L, "test");
  const auto kind = scorer.value_or(default_scorer(model));
  const auto d = rescore_model(cfg, L, model, kind, dev, test, merges);
  rescore::write_rescore_jsonl(L.rescore(model + "_test.jsonl"), d.test_scored, d.test_chosen);
  write_json(L.rescore(model + ".json"), outcome_json(d.outcome));
  return d.outcome;
}

ConfidenceOutcome cmd_confidence(const RunConfig& cfg, const std::string& model) {
  const Layout L{cfg.dir()};
  const auto merges = load_merges(L);
  const auto o = confidence_model(cfg, L, model, load_split(L, "dev"), load_split(L, "test"), merges);
  write_json(L.confidence(model + ".json"), confidence_json(o));
  return o;
}

std::vector<rescore::BenchmarkRow> cmd_benchmark(const RunConfig& cfg) {
  StageTimer timer("benchmark");
  const Layout L{cfg.dir()};
  const auto merges = load_merges(L);
  auto test = load_split(L, "test");
  test.resize(std::min(test.size(), cfg.benchmark.n_lists));
  std::vector<ScoringModel> models;
  std::vector<rescore::NamedScorer> scorers;
  for (const std::string name : {"causal_lm", "bert", "electra_ft", "pelectra_ft"}) {
    if (model_enabled(cfg, name) && fs::exists(L.model(checkpoint_of(name)))) models.push_back(load_model(cfg, L, name));
  }
  for (const auto& m : models) {
    const auto kind = default_scorer(m.name);
    scorers.push_back({display_name(m.name) + " [" + rescore::to_string(kind) + "]", m.scorer(kind)});
  }
  const auto rows = rescore::benchmark_scorers(scorers, test, merges, cfg.benchmark.repetitions);
  rescore::write_benchmark_csv(L.benchmark(), rows);
  return rows;
}

PhoneAwareness phone_awareness(const RunConfig& cfg, std::size_t n_samples) {
  StageTimer timer("phone awareness");
  const Layout L{cfg.dir()};
  const auto merges = load_merges(L);
  const auto lexicon = corpus::read_lexicon(L.lexicon());
  require(L.model("electra_gen"), "pretrain --variant electra");
  require(L.model("pelectra_cmlm"), "pretrain --variant pelectra");
  const auto bert_gen = nn::load_encoder(L.model("electra_gen"));
  const auto cmlm = nn::load_cmlm(L.model("pelectra_cmlm"));
  auto sentences = corpus::read_corpus(L.utterances());
  // Held-out utterance sentences, not seen in pre-training.
  std::vector<corpus::Sentence> pool(sentences.begin() + static_cast<long>(cfg.splits.train), sentences.end());
  if (pool.empty()) throw InputError("no held-out sentences for the phone-awareness probe");

  PhoneAwareness out;
  std::size_t sum_p = 0, sum_b = 0;
  Rng plan_rng(stage_seed(cfg, "phone_awareness.plan"));
  Rng p_rng(stage_seed(cfg, "phone_awareness.pelectra"));
  Rng b_rng(stage_seed(cfg, "phone_awareness.bert"));
  const double T = cfg.pelectra.temperature;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto& words = pool[s % pool.size()];
    const auto y = corpus::tokenize(words, merges);
    const auto phones = corpus::words_to_phones(words, lexicon);
    if (y.size() > bert_gen.config().max_len || y.size() > cmlm.config().decoder.max_len ||
        phones.size() > cmlm.config().encoder.max_len) {
      continue;
    }
    const auto m = pretrain::select_mask_positions(y, cfg.electra.mask_rate, plan_rng);
    const auto y_masked = pretrain::apply_mask(y, m);

    const auto p_masked = pretrain::apply_phone_mask(
        phones, pretrain::select_phone_positions(phones, cfg.pelectra.phone_mask_rate, p_rng));
    nn::Tape tape(cmlm.params());
    const auto logits = nn::cmlm_logits(cmlm, tape, p_masked, y_masked, false, nullptr);
    const auto ps = pretrain::sample_from_logits(y, y_masked, m, tape.value(logits), T, p_rng);
    const auto bs = pretrain::generator_sample(bert_gen, y, y_masked, m, cfg.electra.temperature, b_rng);

    for (auto d : pretrain::replacement_phone_distances(ps, merges)) {
      sum_p += d;
      ++out.pelectra_replacements;
    }
    for (auto d : pretrain::replacement_phone_distances(bs, merges)) {
      sum_b += d;
      ++out.bert_replacements;
    }
    ++out.samples;
  }
  if (out.pelectra_replacements > 0) {
    out.pelectra_mean_distance = static_cast<double>(sum_p) / static_cast<double>(out.pelectra_replacements);
  }
  if (out.bert_replacements > 0) {
    out.bert_mean_distance = static_cast<double>(sum_b) / static_cast<double>(out.bert_replacements);
  }
  return out;
}

json cmd_report(const RunConfig& cfg) {
  StageTimer timer("report");
  const Layout L{cfg.dir()};
  const auto merges = load_merges(L);
  const auto dev = load_split(L, "dev");
  const auto test = load_split(L, "test");

  json report;
  report["seed"] = cfg.seed;
  report["splits"] = {{"train", cfg.splits.train}, {"dev", cfg.splits.dev}, {"test", cfg.splits.test}};

  // Table 2 and Table 3 share the scored lists.
  std::map<std::string, RescoreData> results;
  for (const auto& name : model_names()) {
    if (!model_enabled(cfg, name)) continue;
    results.emplace(name, rescore_model(cfg, L, name, default_scorer(name), dev, test, merges));
    const auto& d = results.at(name);
    rescore::write_rescore_jsonl(L.rescore(name + "_test.jsonl"), d.test_scored, d.test_chosen);
  }

  const double dev_base = rescore::baseline_wer(dev), test_base = rescore::baseline_wer(test);
  const double dev_oracle = rescore::oracle_wer(dev), test_oracle = rescore::oracle_wer(test);
  json table2 = json::array();
  auto t2 = open_csv(L.report("table2.csv"));
  t2 << "row,dev_wer,test_wer,alpha,beta,passes_per_hyp\n";
  table2.push_back({{"row", "baseline"}, {"dev_wer", dev_base}, {"test_wer", test_base}});
  t2 << "baseline," << dev_base << ',' << test_base << ",,,\n";
  for (const std::string name : {"causal_lm", "bert", "bert_ft", "electra", "electra_ft", "pelectra", "pelectra_ft"}) {
    if (!results.count(name)) continue;
    const auto& o = results.at(name).outcome;
    table2.push_back({{"row", row_labels().at(name)},
                      {"model", name},
                      {"scorer", rescore::to_string(o.scorer)},
                      {"dev_wer", o.dev_wer},
                      {"test_wer", o.test_wer},
                      {"alpha", o.alpha},
                      {"beta", o.beta},
                      {"passes_per_hyp", o.mean_passes}});
    t2 << row_labels().at(name) << ',' << o.dev_wer << ',' << o.test_wer << ',' << o.alpha << ',' << o.beta << ','
       << o.mean_passes << '\n';
  }
  table2.push_back({{"row", "oracle"}, {"dev_wer", dev_oracle}, {"test_wer", test_oracle}});
  t2 << "oracle," << dev_oracle << ',' << test_oracle << ",,,\n";
  report["table2"] = table2;

  json table3 = json::array();
  auto t3 = open_csv(L.report("table3.csv"));
  t3 << "model,scoring,rho\n";
  for (const auto& name : model_names()) {
    if (!results.count(name)) continue;
    const auto& o = results.at(name).outcome;
    const char* scoring = o.scorer == rescore::ScorerKind::kElectra ? "error_count" : "likelihood";
    table3.push_back({{"model", display_name(name)}, {"key", name}, {"scoring", scoring}, {"rho", o.test_pearson}});
    t3 << display_name(name) << ',' << scoring << ',' << o.test_pearson << '\n';
  }
  report["table3"] = table3;

  // Fig. 2 data: a likelihood scorer against a fine-tuned error counter.
  for (const std::string name : {"causal_lm", "pelectra_ft", "electra_ft"}) {
    if (!results.count(name)) continue;
    const auto& rows = results.at(name).test_rows;
    metrics::write_score_error_csv(L.report("fig2_" + name + "_scatter.csv"), rows);
    metrics::write_error_means_csv(L.report("fig2_" + name + "_means.csv"), rows);
  }

  json table4 = json::array();
  auto t4 = open_csv(L.report("table4.csv"));
  t4 << "cem,gamma,dev_auc,dev_nce,test_auc,test_nce\n";
  std::vector<ConfidenceOutcome> conf;
  for (const std::string name : {"bert_ft", "electra", "electra_ft", "pelectra", "pelectra_ft", "untrained"}) {
    if (!model_enabled(cfg, name)) continue;
    conf.push_back(confidence_model(cfg, L, name, dev, test, merges));
  }
  if (!conf.empty()) {
    const auto& c0 = conf.front();
    table4.push_back({{"cem", "ASR"}, {"test_auc", c0.test_auc_p}, {"test_nce", c0.test_nce_p}});
    t4 << "ASR,,,," << c0.test_auc_p << ',' << c0.test_nce_p << '\n';
  }
  for (const auto& c : conf) {
    table4.push_back({{"cem", display_name(c.model)}, {"test_auc", c.test_auc_c}, {"test_nce", c.test_nce_c}});
    t4 << display_name(c.model) << ",,,," << c.test_auc_c << ',' << c.test_nce_c << '\n';
  }
  for (const auto& c : conf) {
    table4.push_back({{"cem", "ASR+" + display_name(c.model)},
                      {"gamma", c.gamma},
                      {"dev_auc", c.dev_auc},
                      {"dev_nce", c.dev_nce},
                      {"dev_nce_gamma0", c.dev_nce_gamma0},
                      {"dev_nce_gamma1", c.dev_nce_gamma1},
                      {"test_auc", c.test_auc_interp},
                      {"test_nce", c.test_nce_interp}});
    t4 << "ASR+" << display_name(c.model) << ',' << c.gamma << ',' << c.dev_auc << ',' << c.dev_nce << ','
       << c.test_auc_interp << ',' << c.test_nce_interp << '\n';
  }
  report["table4"] = table4;

  if (cfg.stages.pelectra) {
    const auto pa = phone_awareness(cfg, 500);
    report["phone_awareness"] = {{"samples", pa.samples},
                                 {"pelectra_replacements", pa.pelectra_replacements},
                                 {"bert_replacements", pa.bert_replacements},
                                 {"pelectra_mean_distance", pa.pelectra_mean_distance},
                                 {"bert_generator_mean_distance", pa.bert_mean_distance}};
  }
  write_json(L.report("report.json"), report);
  return report;
}

json run_all(const RunConfig& cfg) {
  cmd_gen_data(cfg);
  cmd_simulate(cfg);
  cmd_pretrain(cfg, Variant::kElectra);
  if (cfg.stages.pelectra) cmd_pretrain(cfg, Variant::kPelectra);
  if (cfg.stages.bert) cmd_pretrain(cfg, Variant::kBertMlm);
  if (cfg.stages.causal_lm) cmd_pretrain(cfg, Variant::kCausalLm);
  cmd_finetune(cfg, "electra", cfg.finetune.k);
  if (cfg.stages.pelectra) cmd_finetune(cfg, "pelectra", cfg.finetune.k);
  if (cfg.stages.bert) cmd_finetune(cfg, "bert", cfg.finetune.k);
  return cmd_report(cfg);
}

}  // namespace rtd::pipeline
