#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "defmod/corpus.hpp"
#include "defmod/tensor.hpp"

namespace defmod {

// Binary Huffman tree over leaf ids 0..n-1. Inner nodes are numbered
// 0..n-2 (root is n-2). Each leaf stores the inner nodes on its root-to-leaf
// path and the sign ch(n) of the branch taken at each of them: +1 for the
// left child (the lighter subtree at merge time), -1 for the right.
class HuffmanTree {
 public:
  // Ties are broken by (count, node id) with leaves numbered before inner nodes.
  static HuffmanTree build(std::span<const std::uint64_t> counts);
  static HuffmanTree build(const Vocabulary& vocab);

  std::size_t leaves() const { return paths_.size(); }
  std::size_t inner_nodes() const { return leaves() - 1; }
  std::span<const std::int32_t> path(std::size_t leaf) const { return paths_[leaf]; }
  std::span<const std::int8_t> signs(std::size_t leaf) const { return signs_[leaf]; }
  std::size_t depth(std::size_t leaf) const { return paths_[leaf].size(); }

 private:
  std::vector<std::vector<std::int32_t>> paths_;
  std::vector<std::vector<std::int8_t>> signs_;
};

// log p(leaf | rep) = sum over path nodes of log sigma(ch(n) <rep, out_n>).
double hsoftmax_logprob(std::size_t leaf, std::span<const double> rep, const HuffmanTree& tree,
                        const ParamTensor& nodes);

// Same value; adds scale * d/d(rep) into rep_grad and scale * d/d(out_n) into
// nodes.grad.
double hsoftmax_logprob_backward(std::size_t leaf, std::span<const double> rep, const HuffmanTree& tree,
                                 ParamTensor& nodes, std::span<double> rep_grad, double scale = 1.0);

struct EmbeddingTable {
  ParamTensor in;   // |V| x d
  ParamTensor out;  // |V| x d (negative sampling) or (|V|-1) x d tree nodes

  std::size_t dim() const { return in.cols(); }
};

// in ~ uniform(-0.5/d, 0.5/d), out = 0.
EmbeddingTable make_embedding_table(std::size_t vocab_size, std::size_t dim, std::size_t out_rows, Rng& rng);

// Noise distribution P_n(w) proportional to count(w)^power over non-reserved ids.
class NoiseSampler {
 public:
  NoiseSampler() = default;
  NoiseSampler(const Vocabulary& vocab, double power = 0.75);
  NoiseSampler(std::span<const std::uint64_t> counts, double power = 0.75);

  TokenId sample(Rng& rng) const;
  double probability(TokenId id) const;
  bool empty() const { return cdf_.empty(); }

 private:
  std::vector<TokenId> ids_;
  Vec probs_;
  Vec cdf_;
};

struct NegSamplingConfig {
  int negatives = 5;
  int window = 5;
  double noise_power = 0.75;
  int max_resample = 10;
};

// Per-example negative-sampling loss
//   -log sigma(<out_pos, v>) - sum_i log sigma(-<out_neg_i, v>)
// with gradients. d loss / d out_t = coef_t * v for each listed output row.
struct NsTerms {
  double loss = 0.0;
  Vec dv;
  std::vector<std::pair<TokenId, double>> out_coef;
};

NsTerms negative_sampling_terms(std::span<const double> v, TokenId positive, std::span<const TokenId> negatives,
                                const ParamTensor& out);

// Draws k negatives from the noise distribution. A draw equal to the positive
// is retried up to cfg.max_resample times, then dropped.
std::vector<TokenId> draw_negatives(TokenId positive, const NegSamplingConfig& cfg, const NoiseSampler& noise,
                                    Rng& rng);

// One SGD step on a (center, context) pair. Returns the loss before the update.
double sgns_step(const SkipGramPair& pair, EmbeddingTable& table, const NegSamplingConfig& cfg,
                 const NoiseSampler& noise, Rng& rng, double lr);

struct SkipGramConfig {
  std::size_t dim = 100;
  NegSamplingConfig ns;
  int epochs = 5;
  double lr = 0.025;
  double min_lr = 1e-4;
  double subsample = 1e-5;
  std::uint64_t seed = 1;
  // Also evaluate skipgram_objective after every epoch (one extra pass each).
  bool track_objective = false;
};

struct SkipGramResult {
  EmbeddingTable table;
  std::vector<double> epoch_loss;       // running mean over the epoch's updates
  std::vector<double> epoch_objective;  // end-of-epoch objective, if tracked
};

// Mean negative-sampling loss over every window pair of `sentences` at fixed
// parameters, without subsampling. Negatives come from an Rng seeded with
// `seed`, so repeated calls see the same draws.
double skipgram_objective(std::span<const Ids> sentences, const EmbeddingTable& table, const NegSamplingConfig& cfg,
                          const NoiseSampler& noise, std::uint64_t seed);

// Linear learning-rate decay from cfg.lr to cfg.min_lr over all epochs.
SkipGramResult train_skipgram(std::span<const Ids> sentences, const Vocabulary& vocab, const SkipGramConfig& cfg);

// Top-n rows by cosine similarity to `word`, excluding the query and reserved
// ids; ties go to the lower id.
std::vector<std::pair<TokenId, double>> nearest_neighbors(TokenId word, const ParamTensor& table, std::size_t n);

// Plain-text vectors: "count dim" header then "token v1 ... vdim" per line.
struct VectorsFile {
  std::size_t dim = 0;
  std::vector<std::string> tokens;
  std::vector<Vec> rows;
};

VectorsFile read_vectors(const std::filesystem::path& path);
void write_vectors(const std::filesystem::path& path, const VectorsFile& vectors);
VectorsFile table_to_vectors(const ParamTensor& table, const Vocabulary& vocab, bool skip_reserved = true);

// Copies rows for tokens present in both. Returns the number copied; a
// dimension mismatch throws Error(Format).
std::size_t import_vectors(const VectorsFile& vectors, const Vocabulary& vocab, ParamTensor& table);

// nearest_neighbors over the rows of a vectors file, by token.
std::vector<std::pair<std::string, double>> nearest_neighbors(const VectorsFile& vectors, const std::string& word,
                                                              std::size_t n);

std::string format_double(double x);

}  // namespace defmod
