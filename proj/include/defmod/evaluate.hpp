#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "defmod/corpus.hpp"
#include "defmod/defmodel.hpp"

namespace defmod {

// exp(-sum log p / N) over definition tokens plus <eos>, excluding the Seed step.
double perplexity(const DefinitionModel& model, std::span<const EncodedEntry> data);
double perplexity(const NllSum& sum);

// Corpus BLEU-4 on a 0-100 scale: clipped n-gram counts pooled over the
// corpus (each sentence counting at least one candidate n-gram per order),
// add-one smoothing on the 2..4-gram precisions, brevity penalty
// exp(1 - r/c) when c < r. Zero unigram overlap gives 0.
double bleu_corpus(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

// Entries whose headword occurs at least twice in `data`.
std::vector<DefinitionEntry> multi_meaning_subset(std::span<const DefinitionEntry> data);

struct EvalReport {
  std::string model_id;
  std::string split;
  double perplexity = 0.0;
  double bleu_mean = 0.0;
  double bleu_std = 0.0;  // population standard deviation over trials
  std::vector<double> bleu_trials;
  int trials = 0;
  std::string filter;

  std::string to_json() const;
  // Two-decimal "mean ± std", e.g. "12.08 ± 0.02".
  std::string bleu_text() const;
};

std::string format_mean_std(double mean, double std);
// Aligned Model / PPL / BLEU table.
std::string report_table(std::span<const EvalReport> reports);

// Generates one hypothesis per entry for a given trial seed.
using HypothesisFn = std::function<std::vector<Tokens>(std::span<const DefinitionEntry>, std::uint64_t seed)>;

// BLEU per seed on the multi-meaning subset (mean and std), plus perplexity
// computed once over the whole split.
EvalReport eval_trials(const HypothesisFn& hypotheses, double ppl, std::span<const DefinitionEntry> dataset,
                       std::span<const std::uint64_t> seeds);

// Temperature-sampled definitions for each entry (one Rng per trial seed,
// consumed in entry order).
std::vector<Tokens> generate_definitions(const DefinitionModel& model, std::span<const DefinitionEntry> entries,
                                         const GenerationConfig& cfg);

EvalReport evaluate_model(const DefinitionModel& model, std::span<const DefinitionEntry> dataset,
                          std::span<const std::uint64_t> seeds, double temperature, std::size_t max_length,
                          const std::string& model_id, const std::string& split);

struct SyntheticPolysemySpec {
  std::string pseudoword = "pseudo";
  int senses = 2;
  int topic_size = 30;
  int context_length = 5;
  int entries = 2000;
  int template_length = 6;
  int corpus_sentences = 4000;
  int sentence_length = 10;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 1;
  // Optional explicit vocabularies; generated when empty.
  std::vector<Tokens> topics;
  std::vector<Tokens> templates;
};

struct SyntheticSplit {
  std::vector<DefinitionEntry> entries;
  std::vector<int> labels;  // true sense per entry
};

struct SyntheticData {
  SyntheticPolysemySpec spec;  // with topics and templates filled in
  std::vector<Tokens> corpus;
  std::vector<int> corpus_labels;
  SyntheticSplit train, val, test;
};

// Contexts and corpus sentences contain the pseudoword plus words drawn from
// the chosen sense's topic vocabulary; definitions follow the sense's template.
SyntheticData make_synthetic(SyntheticPolysemySpec spec);

// Writes train/val/test.jsonl, matching .labels sidecars ("index<TAB>sense")
// and corpus.txt into dir.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);
std::vector<int> read_labels(const std::filesystem::path& path);

}  // namespace defmod
