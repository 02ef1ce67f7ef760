#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "defmod/checkpoint.hpp"
#include "defmod/corpus.hpp"
#include "defmod/skipgram.hpp"

namespace defmod {

// Context-word embeddings, a one-hidden-layer tanh network applied to each
// context word, and a linear head producing a sigmoid mask over the defined
// word's embedding:
//   mask = sigmoid(W * mean_i tanh(A * ctx(c_i) + a) + b)
struct AttentionBlock {
  ParamTensor context_emb;  // |V| x d_c
  ParamTensor ann_w;        // d_a x d_c
  ParamTensor ann_b;        // d_a
  ParamTensor mask_w;       // d x d_a
  ParamTensor mask_b;       // d

  // d_c = d_a = dim.
  static AttentionBlock create(std::size_t vocab_size, std::size_t dim, Rng& rng, double init_scale = 0.05);

  std::size_t dim() const { return mask_b.rows(); }
  ParamList params() { return {&context_emb, &ann_w, &ann_b, &mask_w, &mask_b}; }

  void save(Checkpoint& ck, const std::string& prefix) const;
  static AttentionBlock load(const Checkpoint& ck, const std::string& prefix);
};

struct MaskCache {
  Ids context;              // filtered, ascending id order
  std::vector<Vec> hidden;  // tanh outputs per context word
  Vec pooled;
  Vec mask;
};

// Reserved ids are dropped and the rest summed in ascending id order, so the
// mask is bit-identical under permutation. Empty context gives sigmoid(b).
Vec compute_mask(std::span<const TokenId> context, const AttentionBlock& block, MaskCache* cache = nullptr);

// Accumulates d loss / d block parameters given d loss / d mask.
void mask_backward(const MaskCache& cache, std::span<const double> dmask, AttentionBlock& block);

Vec apply_mask(std::span<const double> v, std::span<const double> mask);

// Block plus the anchor word embeddings and output vectors it is pretrained with.
struct AttentionSkipGram {
  AttentionBlock block;
  ParamTensor word_emb;  // |V| x d anchor embeddings
  ParamTensor out;       // |V| x d output vectors

  static AttentionSkipGram create(std::size_t vocab_size, std::size_t dim, Rng& rng);
  ParamList params() {
    auto p = block.params();
    p.push_back(&word_emb);
    p.push_back(&out);
    return p;
  }
};

// Anchor representation v = word_emb(anchor) * mask(context).
Vec anchor_vector(const AttentionSkipGram& m, TokenId anchor, std::span<const TokenId> context,
                  MaskCache* cache = nullptr);

// Negative-sampling loss of one (anchor, positive) pair with the anchor
// computed through the mask.
double attention_ns_loss(const AttentionSkipGram& m, TokenId anchor, std::span<const TokenId> context,
                         TokenId positive, std::span<const TokenId> negatives);

// Same loss; accumulates gradients into every parameter's .grad.
double attention_ns_backward(AttentionSkipGram& m, TokenId anchor, std::span<const TokenId> context,
                             TokenId positive, std::span<const TokenId> negatives);

struct AttentionPretrainConfig {
  std::size_t dim = 100;
  NegSamplingConfig ns;
  int epochs = 5;
  double lr = 0.025;
  double min_lr = 1e-4;
  double subsample = 1e-5;
  bool freeze_embeddings = false;
  std::uint64_t seed = 1;
};

struct AttentionPretrainResult {
  AttentionSkipGram model;
  std::vector<double> epoch_loss;  // mean per pair
};

// For each anchor position the context is the window words excluding the
// anchor; every window word is a positive. SGD with linear decay.
AttentionPretrainResult pretrain_attention(std::span<const Ids> sentences, const Vocabulary& vocab,
                                           const AttentionPretrainConfig& cfg,
                                           const ParamTensor* init_embeddings = nullptr);

// CSV rows "word,context_hash,m1,...,md" for mask inspection.
std::string mask_csv_row(const std::string& word, std::span<const std::string> context, std::span<const double> mask);
std::string mask_csv_header(std::size_t dim);

}  // namespace defmod
