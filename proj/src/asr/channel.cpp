#include "rtd/asr/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "rtd/common/counters.hpp"
#include "rtd/common/edit_distance.hpp"
#include "rtd/common/errors.hpp"
#include "rtd/finetune/align.hpp"

namespace rtd::asr {

namespace {

void check_probability(double p, const char* field) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("channel.") + field + " must lie in [0, 1]");
  }
}

struct Effective {
  double sub, del, ins;
};

Effective effective(const EditProbs& p, bool has_subs) {
  return {has_subs ? p.sub : 0.0, p.del, has_subs ? p.ins : 0.0};
}

std::vector<double> weights_of(std::span<const Substitute> subs) {
  std::vector<double> w;
  w.reserve(subs.size());
  for (const auto& s : subs) w.push_back(s.weight);
  return w;
}

double weight_of(std::span<const Substitute> subs, const Word& word) {
  for (const auto& s : subs) {
    if (s.word == word) return s.weight;
  }
  throw StructuralError("'" + word + "' is not a listed confusion");
}

}  // namespace

void ChannelConfig::validate() const {
  check_probability(p_sub, "p_sub");
  check_probability(p_ins, "p_ins");
  check_probability(p_del, "p_del");
  if (!(p_sub + p_ins + p_del < 1.0)) throw ConfigError("channel: p_sub + p_ins + p_del must be < 1");
  if (!(tau > 0.0)) throw ConfigError("channel.tau must be > 0");
  if (n_best < 1) throw ConfigError("channel.n_best must be >= 1");
  if (k_nearest < 1) throw ConfigError("channel.k_nearest must be >= 1");
  if (!(ambiguity_boost >= 1.0)) throw ConfigError("channel.ambiguity_boost must be >= 1");
  check_probability(clean_ambiguity, "clean_ambiguity");
  if (attempts_per_hyp < 1) throw ConfigError("channel.attempts_per_hyp must be >= 1");
}

std::span<const Substitute> ConfusionTable::substitutes(const Word& word) const {
  const auto it = entries_.find(word);
  if (it == entries_.end()) return {};
  return it->second;
}

ConfusionTable build_confusion_table(const corpus::Lexicon& lexicon, double tau,
                                     std::size_t k_nearest) {
  if (!(tau > 0.0)) throw ConfigError("confusion temperature tau must be > 0");
  const auto& entries = lexicon.entries();
  std::vector<const std::pair<const Word, std::vector<int>>*> all;
  for (const auto& e : entries) all.push_back(&e);
  if (all.size() < 2) Counters::global().increment("asr.no_substitutes");

  std::map<Word, std::vector<Substitute>> table;
  for (const auto* a : all) {
    std::vector<Substitute> cands;
    for (const auto* b : all) {
      if (a == b) continue;
      cands.push_back({b->first, 0.0, edit_distance(a->second, b->second)});
    }
    // Lexicon iteration is sorted, so a stable sort breaks distance ties by spelling.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Substitute& x, const Substitute& y) { return x.distance < y.distance; });
    if (cands.size() > k_nearest) cands.resize(k_nearest);
    double total = 0.0;
    for (auto& c : cands) {
      c.weight = std::exp(-static_cast<double>(c.distance) / tau);
      total += c.weight;
    }
    for (auto& c : cands) c.weight /= total;
    table.emplace(a->first, std::move(cands));
  }
  return ConfusionTable(std::move(table));
}

double edit_log_prob(std::span<const Word> ref, std::span<const EditProbs> probs,
                     const ConfusionTable& table, std::span<const Edit> edits) {
  if (edits.size() != ref.size() || probs.size() != ref.size()) {
    throw StructuralError("edit sequence does not match the reference length");
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto subs = table.substitutes(ref[i]);
    const auto p = effective(probs[i], !subs.empty());
    switch (edits[i].kind) {
      case EditKind::kSubstitute:
        lp += std::log(p.sub) + std::log(weight_of(subs, edits[i].output));
        break;
      case EditKind::kDelete:
        lp += std::log(p.del);
        break;
      case EditKind::kKeep:
        lp += std::log1p(-(p.sub + p.del));
        break;
    }
    if (edits[i].inserted) {
      lp += std::log(p.ins) + std::log(weight_of(subs, *edits[i].inserted));
    } else if (p.ins > 0.0) {
      lp += std::log1p(-p.ins);
    }
  }
  return lp;
}

Sentence apply_edits(std::span<const Word> ref, std::span<const Edit> edits) {
  Sentence out;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (edits[i].kind == EditKind::kKeep) out.push_back(ref[i]);
    if (edits[i].kind == EditKind::kSubstitute) out.push_back(edits[i].output);
    if (edits[i].inserted) out.push_back(*edits[i].inserted);
  }
  return out;
}

Corruption corrupt_with(std::span<const Word> ref, std::span<const EditProbs> probs,
                        const ConfusionTable& table, Rng& rng) {
  if (probs.size() != ref.size()) throw StructuralError("one EditProbs per reference word expected");
  Corruption c;
  c.edits.resize(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto subs = table.substitutes(ref[i]);
    const auto p = effective(probs[i], !subs.empty());
    Edit& e = c.edits[i];
    const double u = rng.uniform();
    if (u < p.sub) {
      e.kind = EditKind::kSubstitute;
      e.output = subs[rng.categorical(weights_of(subs))].word;
    } else if (u < p.sub + p.del) {
      e.kind = EditKind::kDelete;
    }
    if (p.ins > 0.0 && rng.bernoulli(p.ins)) e.inserted = subs[rng.categorical(weights_of(subs))].word;
  }
  c.words = apply_edits(ref, c.edits);
  c.log_prob = edit_log_prob(ref, probs, table, c.edits);
  return c;
}

Corruption corrupt_utterance(std::span<const Word> ref, const ChannelConfig& cfg,
                             const ConfusionTable& table, Rng& rng) {
  const std::vector<EditProbs> probs(ref.size(), EditProbs{cfg.p_sub, cfg.p_del, cfg.p_ins});
  return corrupt_with(ref, probs, table, rng);
}

NBestList generate_nbest(std::span<const Word> ref, const ChannelConfig& cfg,
                         const ConfusionTable& table, Rng& rng, NBestTrace* trace) {
  cfg.validate();
  if (ref.empty()) throw InputError("cannot simulate an empty reference");
  const std::size_t budget = cfg.attempts_per_hyp * cfg.n_best;

  // Stage 1: the evidence the recognizer "heard".
  Corruption evidence = corrupt_utterance(ref, cfg, table, rng);
  for (std::size_t a = 1; evidence.words.empty() && a < budget; ++a) {
    evidence = corrupt_utterance(ref, cfg, table, rng);
  }
  if (evidence.words.empty()) {
    evidence.words.assign(ref.begin(), ref.end());
    evidence.edits.assign(ref.size(), Edit{});
  }

  // Stage 2 edit probabilities per evidence position.
  std::vector<bool> ambiguous;
  for (std::size_t i = 0; i < evidence.edits.size(); ++i) {
    const auto& e = evidence.edits[i];
    const bool next_deleted =
        i + 1 < evidence.edits.size() && evidence.edits[i + 1].kind == EditKind::kDelete;
    if (e.kind != EditKind::kDelete) {
      ambiguous.push_back(e.kind == EditKind::kSubstitute || next_deleted ||
                          rng.bernoulli(cfg.clean_ambiguity));
    }
    if (e.inserted) ambiguous.push_back(true);
  }
  const EditProbs base{cfg.p_sub, cfg.p_del, cfg.p_ins};
  EditProbs boosted{cfg.p_sub * cfg.ambiguity_boost, cfg.p_del * cfg.ambiguity_boost,
                    std::min(0.5, cfg.p_ins * cfg.ambiguity_boost)};
  if (boosted.sub + boosted.del > 0.9) {
    const double s = 0.9 / (boosted.sub + boosted.del);
    boosted.sub *= s;
    boosted.del *= s;
  }
  std::vector<EditProbs> stage2;
  for (bool a : ambiguous) stage2.push_back(a ? boosted : base);
  const bool noiseless = std::all_of(stage2.begin(), stage2.end(), [](const EditProbs& p) {
    return p.sub == 0.0 && p.del == 0.0 && p.ins == 0.0;
  });

  struct Found {
    double log_prob;
    std::vector<Edit> edits;
  };
  std::map<Sentence, Found> found;
  std::size_t attempts = 0;
  while (found.size() < cfg.n_best && attempts < budget) {
    ++attempts;
    auto c = corrupt_with(evidence.words, stage2, table, rng);
    if (c.words.empty()) {
      Counters::global().increment("asr.empty_hypothesis");
    } else {
      auto [it, inserted] = found.try_emplace(c.words, Found{c.log_prob, c.edits});
      if (!inserted && c.log_prob > it->second.log_prob) it->second = Found{c.log_prob, c.edits};
    }
    if (noiseless) break;
  }
  if (found.size() < cfg.n_best && !noiseless) Counters::global().increment("asr.budget_exhausted");

  NBestList list;
  list.reference = Sentence(ref.begin(), ref.end());
  std::vector<std::pair<const Sentence*, const Found*>> order;
  for (const auto& [words, f] : found) order.emplace_back(&words, &f);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.second->log_prob > b.second->log_prob;
  });
  for (const auto& [words, f] : order) list.hyps.push_back({*words, f->log_prob, {}});
  word_posteriors(list);

  if (trace != nullptr) {
    trace->evidence = evidence;
    trace->stage2 = stage2;
    trace->edits.clear();
    for (const auto& [words, f] : order) trace->edits.push_back(f->edits);
  }
  return list;
}

void word_posteriors(NBestList& list) {
  if (list.hyps.empty()) throw InputError("word_posteriors needs at least one hypothesis");
  const double mx = list.hyps.front().asr_log_prob;
  std::vector<double> weight;
  double total = 0.0;
  for (const auto& h : list.hyps) {
    weight.push_back(std::exp(h.asr_log_prob - mx));
    total += weight.back();
  }
  for (auto& w : weight) w /= total;

  const auto& top = list.hyps.front().words;
  using Slot = std::pair<long, std::size_t>;
  std::vector<std::vector<Slot>> slots(list.hyps.size());
  for (std::size_t h = 0; h < list.hyps.size(); ++h) {
    const auto a = finetune::align(top, list.hyps[h].words);
    slots[h].resize(list.hyps[h].words.size());
    long anchor = -1;
    std::size_t ordinal = 0;
    for (const auto& op : a.ops) {
      if (op.ref_index) {
        anchor = static_cast<long>(*op.ref_index);
        ordinal = 0;
      }
      if (!op.hyp_index) continue;
      slots[h][*op.hyp_index] =
          op.kind == finetune::OpKind::kInsert ? Slot{anchor, ++ordinal} : Slot{anchor, 0};
    }
  }
  std::map<std::pair<Slot, Word>, double> mass;
  for (std::size_t h = 0; h < list.hyps.size(); ++h) {
    for (std::size_t i = 0; i < slots[h].size(); ++i) {
      mass[{slots[h][i], list.hyps[h].words[i]}] += weight[h];
    }
  }
  for (std::size_t h = 0; h < list.hyps.size(); ++h) {
    auto& post = list.hyps[h].word_post;
    post.resize(slots[h].size());
    for (std::size_t i = 0; i < slots[h].size(); ++i) {
      post[i] = std::min(1.0, mass[{slots[h][i], list.hyps[h].words[i]}]);
    }
  }
}

void write_nbest(const std::filesystem::path& path, std::span<const NBestList> lists) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& l : lists) {
    nlohmann::json j;
    j["utt_id"] = l.utt_id;
    j["ref"] = l.reference ? nlohmann::json(*l.reference) : nlohmann::json(nullptr);
    j["hyps"] = nlohmann::json::array();
    for (const auto& h : l.hyps) {
      j["hyps"].push_back({{"words", h.words}, {"asr_log_prob", h.asr_log_prob}, {"word_post", h.word_post}});
    }
    out << j.dump() << '\n';
  }
}

std::vector<NBestList> read_nbest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open n-best file " + path.string());
  std::vector<NBestList> lists;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      NBestList l;
      l.utt_id = j.at("utt_id").get<std::string>();
      if (j.contains("ref") && !j.at("ref").is_null()) l.reference = j.at("ref").get<Sentence>();
      for (const auto& h : j.at("hyps")) {
        l.hyps.push_back({h.at("words").get<Sentence>(), h.at("asr_log_prob").get<double>(),
                          h.at("word_post").get<std::vector<double>>()});
      }
      lists.push_back(std::move(l));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lists;
}

}  // namespace rtd::asr
