#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "defmod/checkpoint.hpp"
#include "defmod/corpus.hpp"
#include "defmod/skipgram.hpp"

namespace defmod {

// Multi-prototype embeddings with a truncated stick-breaking prior over senses.
// Stick k of word w has variational posterior Beta(a_wk, b_wk); the last stick
// is fixed to 1 so the prior over K senses is exactly normalized.
class SenseEmbeddings {
 public:
  SenseEmbeddings() = default;
  SenseEmbeddings(const Vocabulary& vocab, std::size_t max_senses, std::size_t dim, double alpha);
  // Tree over the first `leaves` ids of `counts`; as many words as leaves.
  SenseEmbeddings(std::span<const std::uint64_t> counts, std::size_t leaves, std::size_t max_senses, std::size_t dim,
                  double alpha);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t max_senses() const { return max_senses_; }
  std::size_t dim() const { return in.cols(); }
  double alpha() const { return alpha_; }
  const HuffmanTree& tree() const { return tree_; }
  // Ids below this are tree leaves; ids added by extend_vocab are not.
  std::size_t tree_leaves() const { return tree_.leaves(); }
  bool in_tree(TokenId id) const {
    return !Vocabulary::is_reserved(id) && static_cast<std::size_t>(id) < tree_leaves();
  }

  std::size_t slot(TokenId w, std::size_t k) const { return static_cast<std::size_t>(w) * max_senses_ + k; }
  std::span<const double> sense(TokenId w, std::size_t k) const { return in.row(slot(w, k)); }
  std::span<double> sense(TokenId w, std::size_t k) { return in.row(slot(w, k)); }
  double& a(TokenId w, std::size_t k) { return beta_a[slot(w, k)]; }
  double& b(TokenId w, std::size_t k) { return beta_b[slot(w, k)]; }
  double a(TokenId w, std::size_t k) const { return beta_a[slot(w, k)]; }
  double b(TokenId w, std::size_t k) const { return beta_b[slot(w, k)]; }
  bool active(TokenId w, std::size_t k) const { return active_[slot(w, k)] != 0; }
  void set_active(TokenId w, std::size_t k, bool on) { active_[slot(w, k)] = on ? 1 : 0; }

  // Resets every stick to the prior Beta(1, alpha) and reactivates all senses.
  void reset_sticks();

  // Sense vectors from uniform(-0.5/d, 0.5/d), or from single-sense vectors
  // plus per-sense noise of norm about noise * |v| when `base` is given.
  void init_vectors(Rng& rng, const ParamTensor* base = nullptr, double noise = 0.01);

  // Grows to a vocabulary that extends the training one. New words get zero
  // sense vectors with only the first sense active; they are skipped as
  // context words. Such a model cannot be trained further.
  void extend_vocab(std::size_t vocab_size);

  void save(Checkpoint& ck, const Vocabulary& vocab) const;
  static SenseEmbeddings load(const Checkpoint& ck, Vocabulary* vocab_out = nullptr);

  ParamTensor in;     // (|V| * K) x d, row w*K + k
  ParamTensor nodes;  // (|V| - 1) x d Huffman inner-node vectors
  Vec beta_a;
  Vec beta_b;
  std::vector<long> word_updates;  // per-word SVI step counters

 private:
  std::size_t vocab_size_ = 0;
  std::size_t max_senses_ = 0;
  double alpha_ = 0.1;
  HuffmanTree tree_;
  std::vector<std::uint8_t> active_;
};

// Stick-breaking prior using expected sticks a/(a+b); the last component is
// the remaining stick, so the result sums to exactly 1.
Vec stick_prior(TokenId word, const SenseEmbeddings& model);

// E_q[log p(z = k | beta)] under the Beta variational factors (digamma form).
Vec expected_log_prior(TokenId word, const SenseEmbeddings& model);

// sum_j log p(context_j | sense k of word) for every sense.
Vec context_loglik(TokenId word, std::span<const TokenId> context, const SenseEmbeddings& model);

struct SensePosterior {
  TokenId word = Vocabulary::kUnk;
  Vec probs;
};

// posterior_k proportional to stick_prior_k * exp(context_loglik_k) over active
// senses. Reserved context ids are ignored; an empty context yields the prior
// restricted to active senses.
SensePosterior sense_posterior(TokenId word, std::span<const TokenId> context, const SenseEmbeddings& model);

struct Disambiguation {
  std::size_t sense = 0;
  Vec vector;
};

// Vector of the most probable sense (lowest index on ties). Reserved ids,
// <unk> included, map to their first sense.
Disambiguation disambiguate(TokenId word, std::span<const TokenId> context, const SenseEmbeddings& model);

// A center word with its window of context words.
struct Datapoint {
  TokenId center;
  Ids context;
};

std::vector<Datapoint> make_datapoints(std::span<const Ids> sentences, int window);

// q(z_i) proportional to exp(E[log pi] + loglik) over active senses.
Vec local_posterior(const Datapoint& dp, const SenseEmbeddings& model);

// Evidence lower bound for fixed local factors `q` (one per datapoint):
//   sum_i sum_k q_ik (E[log pi_k] + loglik_ik - log q_ik)
//   + sum_{w,k<K} (E[log Beta(beta_wk | 1, alpha)] - E[log q(beta_wk)]).
double elbo(std::span<const Datapoint> data, std::span<const Vec> q, const SenseEmbeddings& model);

struct SviSchedule {
  double tau0 = 1.0;
  double kappa = 0.7;
  double lr = 0.025;       // sense/node vector step size at the start
  double min_lr = 1e-4;
  double total_steps = 0;  // for linear lr decay; 0 keeps lr constant
  double step = 0;         // datapoints processed so far

  double rho(long t) const;
  double current_lr() const;
};

struct SviResult {
  double elbo = 0.0;       // running estimate (stochastic) or exact (full batch)
  std::vector<Vec> q;      // full batch only: local factors used this epoch
};

// Stochastic pass: one datapoint at a time, local step, natural-gradient
// update of that word's sticks with rho_t = (tau0 + t)^-kappa (t counts the
// word's own updates), then SGD ascent on its sense vectors and the tree
// nodes weighted by q. `word_totals` gives each word's datapoint count N_w.
SviResult svi_epoch(std::span<const Datapoint> data, SenseEmbeddings& model, SviSchedule& schedule,
                    std::span<const double> word_totals);

// Full-batch coordinate ascent: all local factors, then the exact Beta
// update, then a line-searched gradient step on the vectors that never
// lowers the objective. The ELBO is non-decreasing across calls.
SviResult svi_full_batch_epoch(std::span<const Datapoint> data, SenseEmbeddings& model, double step_size);

struct AdaGramConfig {
  std::size_t dim = 100;
  std::size_t max_senses = 5;
  double alpha = 0.1;
  int window = 5;
  int epochs = 5;
  double lr = 0.025;
  double min_lr = 1e-4;
  double subsample = 1e-5;
  double tau0 = 1.0;
  double kappa = 0.7;
  double init_noise = 0.01;
  std::uint64_t seed = 1;
};

struct AdaGramResult {
  SenseEmbeddings model;
  std::vector<double> epoch_elbo;  // mean per datapoint
};

AdaGramResult train_adagram(std::span<const Ids> sentences, const Vocabulary& vocab, const AdaGramConfig& cfg,
                            const ParamTensor* init_vectors = nullptr);
// Continues SVI from existing sense embeddings (e.g. imported "#k" vectors).
AdaGramResult train_adagram(std::span<const Ids> sentences, const Vocabulary& vocab, const AdaGramConfig& cfg,
                            SenseEmbeddings initial);

// Marks senses whose stick_prior falls below threshold inactive (the most
// probable sense always stays). Returns the active count per word.
std::vector<std::size_t> prune_senses(SenseEmbeddings& model, double threshold);

// "#k"-suffixed plain-text export (k is 1-based) of active senses.
VectorsFile export_sense_vectors(const SenseEmbeddings& model, const Vocabulary& vocab);
// Loads "#k" rows into matching slots; listed senses become active, others
// of a listed word inactive. Returns the number of rows copied.
std::size_t import_sense_vectors(const VectorsFile& vf, const Vocabulary& vocab, SenseEmbeddings& model);

}  // namespace defmod
