#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "defmod/adagram.hpp"
#include "defmod/attention.hpp"
#include "defmod/checkpoint.hpp"
#include "defmod/corpus.hpp"
#include "defmod/lstm.hpp"

namespace defmod {

enum class CondMode { None, Seed, SeedInput, SeedAdaptive, SeedAttention };

// "NONE", "S", "S+I", "S+I-Adaptive", "S+I-Attention"
std::string to_string(CondMode mode);
CondMode parse_cond_mode(std::string_view name);

inline bool uses_seed(CondMode m) { return m != CondMode::None; }
inline bool uses_input(CondMode m) {
  return m == CondMode::SeedInput || m == CondMode::SeedAdaptive || m == CondMode::SeedAttention;
}

struct DefModelConfig {
  CondMode mode = CondMode::SeedAttention;
  std::size_t emb_dim = 100;   // d_e, token embeddings
  std::size_t cond_dim = 100;  // d, conditioning vector width
  std::size_t hidden = 256;
  std::size_t layers = 2;
  double dropout = 0.3;
  double init_scale = 0.05;
  bool fine_tune_attention = false;
  bool exclude_headword = false;
};

// Conditioning sub-models. Which ones are required depends on the mode.
struct Conditioning {
  std::optional<ParamTensor> word_emb;  // |V| x d, I and I-Attention
  std::optional<AttentionBlock> attention;
  std::optional<SenseEmbeddings> senses;
};

// One teacher-forced sequence. Step 0 reads `first` (<bos>, or the headword
// for Seed modes); step t > 0 reads targets[t-1]. Every step predicts
// targets[t], so the Seed token itself is never scored.
struct SequenceInput {
  TokenId first = Vocabulary::kBos;
  Ids targets;  // definition ids followed by <eos>
  Vec cond;     // conditioning vector, empty for modes without Input
};

struct SequenceResult {
  double log_prob = 0.0;
  Vec token_losses;  // -log p per target
};

class DefinitionModel;

// Incremental decoder over a frozen model.
class DecoderState {
 public:
  DecoderState(const DefinitionModel& model, TokenId first, Vec cond);
  // Logits for the next token given everything fed so far.
  const Vec& logits() const { return logits_; }
  void advance(TokenId token);

 private:
  void run(TokenId token);
  const DefinitionModel* model_;
  Vec cond_;
  std::vector<LstmState> states_;
  Vec logits_;
};

class DefinitionModel {
 public:
  DefinitionModel(const Vocabulary& vocab, const DefModelConfig& cfg, Conditioning cond, Rng& rng);

  const DefModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  CondMode mode() const { return cfg_.mode; }
  const Conditioning& conditioning() const { return cond_; }
  Conditioning& conditioning() { return cond_; }

  // Vector v* (or a*): plain headword embedding (I), disambiguated sense
  // vector (I-Adaptive) or masked embedding (I-Attention). Zero vector for
  // modes without Input.
  Vec condition_vector(TokenId headword, std::span<const TokenId> context, MaskCache* cache = nullptr) const;

  // Builds the teacher-forced input for an entry. `unconditional` forces
  // <bos> as the first token and a zero conditioning vector.
  SequenceInput make_input(const EncodedEntry& entry, bool unconditional = false) const;
  SequenceInput make_sentence_input(std::span<const TokenId> sentence) const;

  SequenceResult forward(const SequenceInput& input) const;

  // Forward + backward; accumulates gradients into trainable parameters and
  // returns d loss / d cond through `dcond` when non-null. Loss is the sum of
  // token losses scaled by `scale`.
  SequenceResult backward(const SequenceInput& input, double scale, Rng* dropout_rng, Vec* dcond = nullptr);

  // Pushes d loss / d cond of an S+I-Attention input into the word vectors
  // and the attention block; `cache` comes from condition_vector.
  void condition_backward(TokenId headword, const MaskCache& cache, std::span<const double> dcond);

  // Sum over definition tokens and <eos> of log p.
  SequenceResult teacher_forced_logprob(const EncodedEntry& entry) const;

  // Parameters updated by the optimizer: embeddings, LSTM stack, projection,
  // and the attention block plus word embeddings when fine-tuning.
  ParamList trainable_params();
  ParamList core_params();

  void save(Checkpoint& ck) const;
  static DefinitionModel load(const Checkpoint& ck);

  ParamTensor emb;
  std::vector<LstmCell> lstm;
  ParamTensor proj_w;
  ParamTensor proj_b;

 private:
  friend class DecoderState;
  std::size_t input_width() const;
  void step_input(TokenId token, std::span<const double> cond, Vec& x) const;

  Vocabulary vocab_;
  DefModelConfig cfg_;
  Conditioning cond_;
};

// Adam training step helpers -------------------------------------------------

struct TrainConfig {
  AdamConfig adam;
  int epochs = 10;
  std::size_t batch_size = 32;
  double clip = 5.0;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_ppl = 0.0;
  double val_ppl = 0.0;
  double lr = 0.0;
};

// Divides the learning rate by 10 whenever a validation loss fails to
// improve on the best seen so far.
class LrAnnealer {
 public:
  explicit LrAnnealer(double lr) : lr_(lr) {}
  // Returns the learning rate to use for the next epoch.
  double observe(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  double best_ = INFINITY;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double best_val_ppl = INFINITY;
  int best_epoch = 0;
};

// Maximum-likelihood training on definition triplets with length-bucketed
// minibatches, gradient clipping, Adam and x10 annealing. The parameters with
// the best validation perplexity are restored at the end.
TrainHistory train_definitions(DefinitionModel& model, std::span<const EncodedEntry> train,
                               std::span<const EncodedEntry> val, TrainConfig cfg);

// Unconditional language-model training on plain sentences with v* = 0.
TrainHistory pretrain_unconditional(DefinitionModel& model, std::span<const Ids> train, std::span<const Ids> val,
                                    TrainConfig cfg);

// Mean per-token negative log likelihood and token count.
struct NllSum {
  double nll = 0.0;
  std::size_t tokens = 0;
};

NllSum dataset_nll(const DefinitionModel& model, std::span<const EncodedEntry> data, bool unconditional = false);
NllSum sentences_nll(const DefinitionModel& model, std::span<const Ids> data);

struct GenerationConfig {
  double temperature = 0.1;
  std::size_t max_length = 30;
  std::uint64_t seed = 1;
};

void validate(const GenerationConfig& cfg);

struct Generation {
  Ids tokens;        // without <eos>
  Vec token_logprobs;  // log p of each emitted token (and <eos> when reached) under the model at tau = 1
};

// Samples w_t from softmax(logits / tau) until <eos> or max_length tokens.
Generation generate(const DefinitionModel& model, TokenId headword, std::span<const TokenId> context,
                    const GenerationConfig& cfg);
Generation generate(const DefinitionModel& model, TokenId headword, std::span<const TokenId> context,
                    const GenerationConfig& cfg, Rng& rng);

}  // namespace defmod
