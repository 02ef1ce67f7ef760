#include "defmod/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "defmod/error.hpp"
#include "json.hpp"

namespace defmod {

double perplexity(const NllSum& sum) {
  require(sum.tokens > 0, ErrorCode::Usage, "perplexity over zero tokens");
  return std::exp(sum.nll / static_cast<double>(sum.tokens));
}

double perplexity(const DefinitionModel& model, std::span<const EncodedEntry> data) {
  require(!data.empty(), ErrorCode::Usage, "perplexity over an empty dataset");
  return perplexity(dataset_nll(model, data));
}

namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts ngrams(const Tokens& seq, std::size_t n) {
  NgramCounts out;
  if (seq.size() < n) return out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    std::vector<std::string_view> g;
    for (std::size_t j = 0; j < n; ++j) g.emplace_back(seq[i + j]);
    ++out[g];
  }
  return out;
}

}  // namespace

double bleu_corpus(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  require(hypotheses.size() == references.size(), ErrorCode::Usage,
          "BLEU needs aligned lists (" + std::to_string(hypotheses.size()) + " hypotheses vs " +
              std::to_string(references.size()) + " references)");
  require(!hypotheses.empty(), ErrorCode::Usage, "BLEU over an empty corpus");
  constexpr std::size_t kMaxN = 4;
  std::size_t matches[kMaxN + 1] = {}, totals[kMaxN + 1] = {};
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto h = ngrams(hypotheses[i], n);
      const auto r = ngrams(references[i], n);
      std::size_t count = 0;
      for (const auto& [g, c] : h) {
        auto it = r.find(g);
        if (it != r.end()) matches[n] += std::min(c, it->second);
        count += c;
      }
      // Each sentence contributes at least one candidate n-gram, so orders
      // longer than the hypothesis still get a defined precision.
      totals[n] += std::max<std::size_t>(1, count);
    }
  }
  if (matches[1] == 0 || hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxN; ++n) {
    const double den = static_cast<double>(totals[n]);
    const double p = n == 1 ? static_cast<double>(matches[n]) / den : (static_cast<double>(matches[n]) + 1.0) / (den + 1.0);
    log_sum += std::log(p) / static_cast<double>(kMaxN);
  }
  const double c = static_cast<double>(hyp_len), r = static_cast<double>(ref_len);
  const double log_bp = c < r ? 1.0 - r / c : 0.0;
  return 100.0 * std::exp(log_sum + log_bp);
}

std::vector<DefinitionEntry> multi_meaning_subset(std::span<const DefinitionEntry> data) {
  std::map<std::string_view, std::size_t> counts;
  for (const auto& e : data) ++counts[e.headword];
  std::vector<DefinitionEntry> out;
  for (const auto& e : data)
    if (counts[e.headword] >= 2) out.push_back(e);
  return out;
}

std::string format_mean_std(double mean, double std) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, std);
  return buf;
}

std::string EvalReport::bleu_text() const { return format_mean_std(bleu_mean, bleu_std); }

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model_id;
  j["split"] = split;
  j["perplexity"] = perplexity;
  j["bleu_mean"] = bleu_mean;
  j["bleu_std"] = bleu_std;
  j["bleu_trials"] = bleu_trials;
  j["bleu"] = bleu_text();
  j["trials"] = trials;
  j["filter"] = filter;
  return j.dump(2);
}

std::string report_table(std::span<const EvalReport> reports) {
  std::size_t w_model = 5;
  for (const auto& r : reports) w_model = std::max(w_model, r.model_id.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s | %10s | %s\n", static_cast<int>(w_model), "Model", "PPL", "BLEU");
  out << buf;
  out << std::string(w_model, '-') << "-+-" << std::string(10, '-') << "-+-" << std::string(16, '-') << '\n';
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-*s | %10.2f | %s\n", static_cast<int>(w_model), r.model_id.c_str(),
                  r.perplexity, r.bleu_text().c_str());
    out << buf;
  }
  return out.str();
}

EvalReport eval_trials(const HypothesisFn& hypotheses, double ppl, std::span<const DefinitionEntry> dataset,
                       std::span<const std::uint64_t> seeds) {
  require(!seeds.empty(), ErrorCode::Usage, "at least one trial is required");
  EvalReport rep;
  rep.perplexity = ppl;
  rep.trials = static_cast<int>(seeds.size());
  rep.filter = "multi-meaning headwords (>= 2 entries in split); corpus BLEU-4, add-one smoothing on n >= 2";
  const auto subset = multi_meaning_subset(dataset);
  std::vector<Tokens> refs;
  for (const auto& e : subset) refs.push_back(e.definition);
  for (auto seed : seeds) {
    const auto hyps = hypotheses(subset, seed);
    rep.bleu_trials.push_back(subset.empty() ? 0.0 : bleu_corpus(hyps, refs));
  }
  double mean = 0.0;
  for (double b : rep.bleu_trials) mean += b;
  mean /= static_cast<double>(rep.bleu_trials.size());
  double var = 0.0;
  for (double b : rep.bleu_trials) var += (b - mean) * (b - mean);
  rep.bleu_mean = mean;
  rep.bleu_std = std::sqrt(var / static_cast<double>(rep.bleu_trials.size()));
  return rep;
}

std::vector<Tokens> generate_definitions(const DefinitionModel& model, std::span<const DefinitionEntry> entries,
                                         const GenerationConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<Tokens> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const auto enc = encode_entry(e, model.vocab());
    const auto g = generate(model, enc.headword, enc.context, cfg, rng);
    out.push_back(model.vocab().decode(g.tokens));
  }
  return out;
}

EvalReport evaluate_model(const DefinitionModel& model, std::span<const DefinitionEntry> dataset,
                          std::span<const std::uint64_t> seeds, double temperature, std::size_t max_length,
                          const std::string& model_id, const std::string& split) {
  const auto encoded = encode_entries(dataset, model.vocab());
  const double ppl = perplexity(model, encoded);
  auto hyps = [&](std::span<const DefinitionEntry> subset, std::uint64_t seed) {
    return generate_definitions(model, subset, GenerationConfig{temperature, max_length, seed});
  };
  auto rep = eval_trials(hyps, ppl, dataset, seeds);
  rep.model_id = model_id;
  rep.split = split;
  return rep;
}

// ---------------------------------------------------------------------------

SyntheticData make_synthetic(SyntheticPolysemySpec spec) {
  require(spec.senses >= 2, ErrorCode::Usage, "synthetic benchmark needs at least 2 senses");
  require(spec.senses <= 26, ErrorCode::Usage, "at most 26 senses are supported");
  require(spec.topic_size >= 1 && spec.context_length >= 2 && spec.template_length >= 1 && spec.entries >= 1 &&
              spec.sentence_length >= 2 && spec.corpus_sentences >= 0,
          ErrorCode::Usage, "invalid synthetic benchmark sizes");
  require(spec.val_fraction >= 0 && spec.test_fraction >= 0 && spec.val_fraction + spec.test_fraction < 1,
          ErrorCode::Usage, "split fractions must leave room for a training split");
  const auto senses = static_cast<std::size_t>(spec.senses);
  if (spec.topics.empty()) {
    for (std::size_t k = 0; k < senses; ++k) {
      Tokens t;
      for (int i = 0; i < spec.topic_size; ++i) t.push_back(std::string("t") + char('a' + k) + std::to_string(i));
      spec.topics.push_back(std::move(t));
    }
  }
  if (spec.templates.empty()) {
    for (std::size_t k = 0; k < senses; ++k) {
      Tokens t;
      for (int i = 0; i < spec.template_length; ++i) t.push_back(std::string("d") + char('a' + k) + std::to_string(i));
      spec.templates.push_back(std::move(t));
    }
  }
  require(spec.topics.size() == senses && spec.templates.size() == senses, ErrorCode::Usage,
          "one topic vocabulary and one template per sense required");
  std::set<std::string> seen;
  for (const auto& topic : spec.topics) {
    require(!topic.empty(), ErrorCode::Usage, "empty topic vocabulary");
    std::set<std::string> own(topic.begin(), topic.end());
    for (const auto& w : own) {
      require(w != spec.pseudoword, ErrorCode::Usage, "the pseudoword cannot be a topic word");
      require(seen.insert(w).second, ErrorCode::Usage, "topic vocabularies overlap on '" + w + "'");
    }
  }

  Rng rng(spec.seed);
  auto sentence = [&](std::size_t sense, int length) {
    Tokens s;
    const auto& topic = spec.topics[sense];
    const auto at = rng.below(static_cast<std::uint64_t>(length));
    for (int i = 0; i < length; ++i)
      s.push_back(static_cast<std::uint64_t>(i) == at ? spec.pseudoword : topic[rng.below(topic.size())]);
    return s;
  };

  SyntheticData data;
  const auto n = static_cast<std::size_t>(spec.entries);
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
  const auto n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    const auto sense = static_cast<std::size_t>(rng.below(senses));
    DefinitionEntry e{spec.pseudoword, spec.templates[sense], sentence(sense, spec.context_length)};
    auto& split = i < n_train ? data.train : (i < n_train + n_val ? data.val : data.test);
    split.entries.push_back(std::move(e));
    split.labels.push_back(static_cast<int>(sense));
  }
  for (int i = 0; i < spec.corpus_sentences; ++i) {
    const auto sense = static_cast<std::size_t>(rng.below(senses));
    data.corpus.push_back(sentence(sense, spec.sentence_length));
    data.corpus_labels.push_back(static_cast<int>(sense));
  }
  data.spec = std::move(spec);
  return data;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_split = [&](const SyntheticSplit& s, const std::string& name) {
    write_definitions(dir / (name + ".jsonl"), s.entries);
    std::ofstream out(dir / (name + ".labels"), std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Missing, "cannot write labels for " + name);
    for (std::size_t i = 0; i < s.labels.size(); ++i) out << i << '\t' << s.labels[i] << '\n';
  };
  write_split(data.train, "train");
  write_split(data.val, "val");
  write_split(data.test, "test");
  std::ofstream corpus(dir / "corpus.txt", std::ios::binary);
  require(static_cast<bool>(corpus), ErrorCode::Missing, "cannot write corpus.txt");
  for (const auto& s : data.corpus) corpus << join_tokens(s) << '\n';
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Missing, "cannot open " + path.string());
  std::vector<int> labels;
  std::size_t idx = 0;
  int sense = 0;
  while (in >> idx >> sense) {
    require(idx == labels.size(), ErrorCode::Format, "labels file must list indices in order");
    labels.push_back(sense);
  }
  return labels;
}

}  // namespace defmod
