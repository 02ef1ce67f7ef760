#include "defmod/defmodel.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

#include "defmod/error.hpp"

namespace defmod {

std::string to_string(CondMode mode) {
  switch (mode) {
    case CondMode::None: return "NONE";
    case CondMode::Seed: return "S";
    case CondMode::SeedInput: return "S+I";
    case CondMode::SeedAdaptive: return "S+I-Adaptive";
    case CondMode::SeedAttention: return "S+I-Attention";
  }
  return "?";
}

CondMode parse_cond_mode(std::string_view name) {
  for (auto m : {CondMode::None, CondMode::Seed, CondMode::SeedInput, CondMode::SeedAdaptive, CondMode::SeedAttention})
    if (to_string(m) == name) return m;
  fail(ErrorCode::Usage, "unknown conditioning mode '" + std::string(name) +
                             "' (expected NONE, S, S+I, S+I-Adaptive or S+I-Attention)");
}

// ---------------------------------------------------------------------------

DefinitionModel::DefinitionModel(const Vocabulary& vocab, const DefModelConfig& cfg, Conditioning cond, Rng& rng)
    : emb("emb", vocab.size(), cfg.emb_dim),
      proj_w("proj_w", vocab.size(), cfg.hidden),
      proj_b("proj_b", vocab.size()),
      vocab_(vocab),
      cfg_(cfg),
      cond_(std::move(cond)) {
  require(cfg.layers >= 1 && cfg.hidden >= 1 && cfg.emb_dim >= 1 && cfg.cond_dim >= 1, ErrorCode::Usage,
          "model sizes must be positive");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, ErrorCode::Usage, "dropout must lie in [0, 1)");
  const std::size_t d = cfg.cond_dim;
  const std::size_t v = vocab.size();
  if (cfg.mode == CondMode::SeedInput || cfg.mode == CondMode::SeedAttention) {
    require(cond_.word_emb.has_value(), ErrorCode::Usage, to_string(cfg.mode) + " needs word embeddings");
    require(cond_.word_emb->rows() == v && cond_.word_emb->cols() == d, ErrorCode::Usage,
            "conditioning word embeddings must be |V| x d");
  }
  if (cfg.mode == CondMode::SeedAttention) {
    require(cond_.attention.has_value(), ErrorCode::Usage, "S+I-Attention needs an attention block");
    require(cond_.attention->dim() == d && cond_.attention->context_emb.rows() == v, ErrorCode::Usage,
            "attention block does not match the vocabulary or conditioning width");
  }
  if (cfg.mode == CondMode::SeedAdaptive) {
    require(cond_.senses.has_value(), ErrorCode::Usage, "S+I-Adaptive needs sense embeddings");
    require(cond_.senses->dim() == d && cond_.senses->vocab_size() == v, ErrorCode::Usage,
            "sense embeddings do not match the vocabulary or conditioning width");
  }
  for (std::size_t l = 0; l < cfg.layers; ++l)
    lstm.emplace_back("lstm" + std::to_string(l), l == 0 ? input_width() : cfg.hidden, cfg.hidden);
  emb.fill_uniform(rng, -cfg.init_scale, cfg.init_scale);
  for (auto& cell : lstm) cell.init(rng, cfg.init_scale);
  proj_w.fill_uniform(rng, -cfg.init_scale, cfg.init_scale);
}

std::size_t DefinitionModel::input_width() const {
  return cfg_.emb_dim + (uses_input(cfg_.mode) ? cfg_.cond_dim : 0);
}

void DefinitionModel::step_input(TokenId token, std::span<const double> cond, Vec& x) const {
  x.clear();
  if (uses_input(cfg_.mode)) x.insert(x.end(), cond.begin(), cond.end());
  const auto e = emb.row(static_cast<std::size_t>(token));
  x.insert(x.end(), e.begin(), e.end());
}

Vec DefinitionModel::condition_vector(TokenId headword, std::span<const TokenId> context, MaskCache* cache) const {
  const std::size_t d = cfg_.cond_dim;
  Ids ctx(context.begin(), context.end());
  if (cfg_.exclude_headword) std::erase(ctx, headword);
  switch (cfg_.mode) {
    case CondMode::None:
    case CondMode::Seed: return Vec(d, 0.0);
    case CondMode::SeedInput: {
      const auto r = cond_.word_emb->row(static_cast<std::size_t>(headword));
      return Vec(r.begin(), r.end());
    }
    case CondMode::SeedAdaptive: return disambiguate(headword, ctx, *cond_.senses).vector;
    case CondMode::SeedAttention: {
      const Vec mask = compute_mask(ctx, *cond_.attention, cache);
      return apply_mask(cond_.word_emb->row(static_cast<std::size_t>(headword)), mask);
    }
  }
  return Vec(d, 0.0);
}

SequenceInput DefinitionModel::make_input(const EncodedEntry& entry, bool unconditional) const {
  require(!entry.definition.empty(), ErrorCode::Format, "entry has an empty definition");
  SequenceInput in;
  in.first = uses_seed(cfg_.mode) && !unconditional ? entry.headword : Vocabulary::kBos;
  in.targets = entry.definition;
  in.targets.push_back(Vocabulary::kEos);
  if (uses_input(cfg_.mode))
    in.cond = unconditional ? Vec(cfg_.cond_dim, 0.0) : condition_vector(entry.headword, entry.context);
  return in;
}

SequenceInput DefinitionModel::make_sentence_input(std::span<const TokenId> sentence) const {
  SequenceInput in;
  in.first = Vocabulary::kBos;
  in.targets.assign(sentence.begin(), sentence.end());
  in.targets.push_back(Vocabulary::kEos);
  if (uses_input(cfg_.mode)) in.cond.assign(cfg_.cond_dim, 0.0);
  return in;
}

SequenceResult DefinitionModel::forward(const SequenceInput& input) const {
  DecoderState dec(*this, input.first, input.cond);
  SequenceResult res;
  res.token_losses.reserve(input.targets.size());
  for (std::size_t t = 0; t < input.targets.size(); ++t) {
    const auto target = static_cast<std::size_t>(input.targets[t]);
    const double loss = log_sum_exp(dec.logits()) - dec.logits()[target];
    res.token_losses.push_back(loss);
    res.log_prob -= loss;
    if (t + 1 < input.targets.size()) dec.advance(input.targets[t]);
  }
  return res;
}

SequenceResult DefinitionModel::teacher_forced_logprob(const EncodedEntry& entry) const {
  return forward(make_input(entry));
}

SequenceResult DefinitionModel::backward(const SequenceInput& input, double scale, Rng* dropout_rng, Vec* dcond) {
  const std::size_t T = input.targets.size();
  const std::size_t L = lstm.size();
  const std::size_t H = cfg_.hidden;
  const double keep = 1.0 - cfg_.dropout;
  const bool drop = dropout_rng && cfg_.dropout > 0.0;

  std::vector<std::vector<LstmCache>> caches(T, std::vector<LstmCache>(L));
  std::vector<std::vector<Vec>> masks(T, std::vector<Vec>(L > 0 ? L - 1 : 0));
  std::vector<Vec> top(T);
  std::vector<TokenId> tokens(T);
  std::vector<LstmState> states;
  for (const auto& cell : lstm) states.push_back(cell.zero_state());

  SequenceResult res;
  Vec x;
  for (std::size_t t = 0; t < T; ++t) {
    tokens[t] = t == 0 ? input.first : input.targets[t - 1];
    step_input(tokens[t], input.cond, x);
    for (std::size_t l = 0; l < L; ++l) {
      states[l] = lstm[l].step(x, states[l], &caches[t][l]);
      x = states[l].h;
      if (l + 1 < L && drop) {
        Vec m(H);
        for (auto& mi : m) mi = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        for (std::size_t k = 0; k < H; ++k) x[k] *= m[k];
        masks[t][l] = std::move(m);
      }
    }
    top[t] = x;
  }

  std::vector<Vec> dtop(T, Vec(H, 0.0));
  Vec logits(proj_b.rows());
  for (std::size_t t = 0; t < T; ++t) {
    logits = proj_b.value;
    matvec_add(proj_w, top[t], logits);
    auto xe = softmax_xent(logits, static_cast<std::size_t>(input.targets[t]));
    res.token_losses.push_back(xe.loss);
    res.log_prob -= xe.loss;
    for (auto& g : xe.grad) g *= scale;
    outer_add_grad(proj_w, xe.grad, top[t]);
    for (std::size_t r = 0; r < proj_b.rows(); ++r) proj_b.grad[r] += xe.grad[r];
    matvec_t_add(proj_w, xe.grad, dtop[t]);
  }

  std::vector<Vec> dh_next(L, Vec(H, 0.0)), dc_next(L, Vec(H, 0.0));
  if (dcond) dcond->assign(input.cond.size(), 0.0);
  Vec dx, dh_prev, dc_prev, dh(H);
  const std::size_t ncond = uses_input(cfg_.mode) ? cfg_.cond_dim : 0;
  for (std::size_t t = T; t-- > 0;) {
    Vec from_above = dtop[t];
    for (std::size_t l = L; l-- > 0;) {
      for (std::size_t k = 0; k < H; ++k) dh[k] = from_above[k] + dh_next[l][k];
      lstm[l].backward(caches[t][l], dh, dc_next[l], dx, dh_prev, dc_prev);
      dh_next[l] = dh_prev;
      dc_next[l] = dc_prev;
      if (l > 0) {
        if (drop)
          for (std::size_t k = 0; k < H; ++k) dx[k] *= masks[t][l - 1][k];
        from_above = dx;
      }
    }
    if (dcond)
      for (std::size_t j = 0; j < ncond; ++j) (*dcond)[j] += dx[j];
    auto g = emb.grad_row(static_cast<std::size_t>(tokens[t]));
    for (std::size_t j = 0; j < cfg_.emb_dim; ++j) g[j] += dx[ncond + j];
  }
  return res;
}

void DefinitionModel::condition_backward(TokenId headword, const MaskCache& cache, std::span<const double> dcond) {
  require(cfg_.mode == CondMode::SeedAttention, ErrorCode::Usage, "only S+I-Attention conditioning is trainable");
  const auto v = cond_.word_emb->row(static_cast<std::size_t>(headword));
  auto gv = cond_.word_emb->grad_row(static_cast<std::size_t>(headword));
  Vec dmask(dcond.size());
  for (std::size_t j = 0; j < dcond.size(); ++j) {
    gv[j] += dcond[j] * cache.mask[j];
    dmask[j] = dcond[j] * v[j];
  }
  mask_backward(cache, dmask, *cond_.attention);
}

ParamList DefinitionModel::core_params() {
  ParamList p{&emb};
  for (auto& cell : lstm)
    for (auto* t : cell.params()) p.push_back(t);
  p.push_back(&proj_w);
  p.push_back(&proj_b);
  return p;
}

ParamList DefinitionModel::trainable_params() {
  ParamList p = core_params();
  if (cfg_.fine_tune_attention && cfg_.mode == CondMode::SeedAttention) {
    for (auto* t : cond_.attention->params()) p.push_back(t);
    p.push_back(&*cond_.word_emb);
  }
  return p;
}

void DefinitionModel::save(Checkpoint& ck) const {
  if (cond_.senses) cond_.senses->save(ck, vocab_);
  ck.meta["kind"] = "defmodel";
  ck.meta["vocab"] = vocab_.serialize();
  ck.meta["def.mode"] = to_string(cfg_.mode);
  ck.meta["def.emb_dim"] = std::to_string(cfg_.emb_dim);
  ck.meta["def.cond_dim"] = std::to_string(cfg_.cond_dim);
  ck.meta["def.hidden"] = std::to_string(cfg_.hidden);
  ck.meta["def.layers"] = std::to_string(cfg_.layers);
  ck.meta["def.dropout"] = format_double(cfg_.dropout);
  ck.meta["def.init_scale"] = format_double(cfg_.init_scale);
  ck.meta["def.fine_tune_attention"] = cfg_.fine_tune_attention ? "1" : "0";
  ck.meta["def.exclude_headword"] = cfg_.exclude_headword ? "1" : "0";
  ck.put("def.", emb);
  for (const auto& cell : lstm)
    for (const auto* t : {&cell.wx, &cell.wh, &cell.b}) ck.put("def.", *t);
  ck.put("def.", proj_w);
  ck.put("def.", proj_b);
  if (cond_.word_emb) ck.put("cond.", *cond_.word_emb);
  if (cond_.attention) cond_.attention->save(ck, "att.");
}

DefinitionModel DefinitionModel::load(const Checkpoint& ck) {
  require(ck.has_meta("kind") && ck.get_meta("kind") == "defmodel", ErrorCode::Format,
          "checkpoint does not hold a definition model");
  const auto vocab = Vocabulary::deserialize(ck.get_meta("vocab"));
  DefModelConfig cfg;
  cfg.mode = parse_cond_mode(ck.get_meta("def.mode"));
  cfg.emb_dim = std::stoul(ck.get_meta("def.emb_dim"));
  cfg.cond_dim = std::stoul(ck.get_meta("def.cond_dim"));
  cfg.hidden = std::stoul(ck.get_meta("def.hidden"));
  cfg.layers = std::stoul(ck.get_meta("def.layers"));
  cfg.dropout = std::stod(ck.get_meta("def.dropout"));
  cfg.init_scale = std::stod(ck.get_meta("def.init_scale"));
  cfg.fine_tune_attention = ck.get_meta("def.fine_tune_attention") == "1";
  cfg.exclude_headword = ck.get_meta("def.exclude_headword") == "1";
  Conditioning cond;
  if (ck.tensors.contains("cond.word_emb")) {
    cond.word_emb.emplace("word_emb", vocab.size(), cfg.cond_dim);
    ck.get("cond.", *cond.word_emb);
  }
  if (ck.tensors.contains("att.context_emb")) cond.attention = AttentionBlock::load(ck, "att.");
  if (ck.tensors.contains("adagram.senses")) cond.senses = SenseEmbeddings::load(ck);
  Rng rng(0);
  DefinitionModel m(vocab, cfg, std::move(cond), rng);
  ck.get("def.", m.core_params());
  return m;
}

// ---------------------------------------------------------------------------

DecoderState::DecoderState(const DefinitionModel& model, TokenId first, Vec cond)
    : model_(&model), cond_(std::move(cond)) {
  for (const auto& cell : model.lstm) states_.push_back(cell.zero_state());
  run(first);
}

void DecoderState::advance(TokenId token) { run(token); }

void DecoderState::run(TokenId token) {
  require(token >= 0 && static_cast<std::size_t>(token) < model_->vocab().size(), ErrorCode::Usage,
          "token id out of range");
  Vec x;
  model_->step_input(token, cond_, x);
  for (std::size_t l = 0; l < states_.size(); ++l) {
    states_[l] = model_->lstm[l].step(x, states_[l]);
    x = states_[l].h;
  }
  logits_ = model_->proj_b.value;
  matvec_add(model_->proj_w, x, logits_);
}

// ---------------------------------------------------------------------------

double LrAnnealer::observe(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
  } else {
    lr_ /= 10.0;
  }
  return lr_;
}

NllSum dataset_nll(const DefinitionModel& model, std::span<const EncodedEntry> data, bool unconditional) {
  NllSum s;
  for (const auto& e : data) {
    const auto r = model.forward(model.make_input(e, unconditional));
    for (double l : r.token_losses) s.nll += l;
    s.tokens += r.token_losses.size();
  }
  return s;
}

NllSum sentences_nll(const DefinitionModel& model, std::span<const Ids> data) {
  NllSum s;
  for (const auto& sentence : data) {
    const auto r = model.forward(model.make_sentence_input(sentence));
    for (double l : r.token_losses) s.nll += l;
    s.tokens += r.token_losses.size();
  }
  return s;
}

namespace {

// One training example: its teacher-forced input plus whatever is needed to
// push the conditioning gradient into the attention block.
struct Example {
  SequenceInput input;
  TokenId headword = Vocabulary::kUnk;
  MaskCache mask_cache;
};

std::vector<std::vector<std::size_t>> make_buckets(std::span<const std::size_t> lengths, std::size_t batch_size) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  return batches;
}

TrainHistory train_loop(DefinitionModel& model, std::size_t n_train,
                        const std::function<Example(std::size_t)>& example,
                        std::span<const std::size_t> lengths, const std::function<NllSum()>& validate_fn,
                        TrainConfig cfg, bool attention_path, const char* what) {
  require(n_train > 0, ErrorCode::Usage, std::string(what) + ": empty training set");
  require(cfg.batch_size >= 1 && cfg.epochs >= 0, ErrorCode::Usage, "invalid training configuration");
  validate(cfg.adam);
  Rng rng(cfg.seed);
  auto params = attention_path ? model.trainable_params() : model.core_params();
  auto batches = make_buckets(lengths, cfg.batch_size);
  LrAnnealer annealer(cfg.adam.lr);
  TrainHistory hist;
  std::vector<Vec> best;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng.below(i)]);
    double train_nll = 0.0;
    std::size_t train_tokens = 0;
    for (const auto& batch : batches) {
      std::vector<Example> exs;
      std::size_t tokens = 0;
      for (auto idx : batch) {
        exs.push_back(example(idx));
        tokens += exs.back().input.targets.size();
      }
      const double scale = 1.0 / static_cast<double>(tokens);
      Vec dcond;
      for (const auto& ex : exs) {
        const auto r = model.backward(ex.input, scale, &rng, attention_path ? &dcond : nullptr);
        for (double l : r.token_losses) train_nll += l;
        train_tokens += r.token_losses.size();
        if (attention_path) model.condition_backward(ex.headword, ex.mask_cache, dcond);
      }
      require(std::isfinite(train_nll), ErrorCode::Numeric, std::string(what) + ": non-finite training loss");
      clip_grad_norm(params, cfg.clip);
      adam_step(params, cfg.adam);
    }
    const NllSum val = validate_fn();
    const double val_loss = val.tokens ? val.nll / static_cast<double>(val.tokens) : train_nll / static_cast<double>(train_tokens);
    require(std::isfinite(val_loss), ErrorCode::Numeric, std::string(what) + ": non-finite validation loss");
    EpochRecord rec{epoch, std::exp(train_nll / static_cast<double>(train_tokens)), std::exp(val_loss), cfg.adam.lr};
    hist.epochs.push_back(rec);
    if (rec.val_ppl < hist.best_val_ppl) {
      hist.best_val_ppl = rec.val_ppl;
      hist.best_epoch = epoch;
      best.clear();
      for (const auto* p : params) best.push_back(p->value);
    }
    if (cfg.verbose)
      std::cerr << what << " epoch " << epoch << " train_ppl " << rec.train_ppl << " val_ppl " << rec.val_ppl
                << " lr " << rec.lr << '\n';
    cfg.adam.lr = annealer.observe(val_loss);
  }
  if (!best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return hist;
}

}  // namespace

TrainHistory train_definitions(DefinitionModel& model, std::span<const EncodedEntry> train,
                               std::span<const EncodedEntry> val, TrainConfig cfg) {
  std::vector<std::size_t> lengths;
  for (const auto& e : train) lengths.push_back(e.definition.size());
  const bool attention_path = model.config().fine_tune_attention && model.mode() == CondMode::SeedAttention;
  auto example = [&](std::size_t i) {
    Example ex;
    const auto& e = train[i];
    ex.headword = e.headword;
    ex.input = model.make_input(e);
    if (attention_path) {
      ex.input.cond = model.condition_vector(e.headword, e.context, &ex.mask_cache);
    }
    return ex;
  };
  auto validate_fn = [&] { return dataset_nll(model, val); };
  return train_loop(model, train.size(), example, lengths, validate_fn, cfg, attention_path, "train-def");
}

TrainHistory pretrain_unconditional(DefinitionModel& model, std::span<const Ids> train, std::span<const Ids> val,
                                    TrainConfig cfg) {
  std::vector<std::size_t> lengths;
  for (const auto& s : train) lengths.push_back(s.size());
  auto example = [&](std::size_t i) {
    Example ex;
    ex.input = model.make_sentence_input(train[i]);
    return ex;
  };
  auto validate_fn = [&] { return sentences_nll(model, val); };
  // The conditioning path carries no signal while v* is pinned to zero.
  return train_loop(model, train.size(), example, lengths, validate_fn, cfg, false, "pretrain-lm");
}

// ---------------------------------------------------------------------------

void validate(const GenerationConfig& cfg) {
  require(cfg.temperature > 0.0, ErrorCode::Usage, "temperature must be positive");
  require(cfg.max_length >= 1, ErrorCode::Usage, "max length must be >= 1");
}

Generation generate(const DefinitionModel& model, TokenId headword, std::span<const TokenId> context,
                    const GenerationConfig& cfg) {
  Rng rng(cfg.seed);
  return generate(model, headword, context, cfg, rng);
}

Generation generate(const DefinitionModel& model, TokenId headword, std::span<const TokenId> context,
                    const GenerationConfig& cfg, Rng& rng) {
  validate(cfg);
  const TokenId first = uses_seed(model.mode()) ? headword : Vocabulary::kBos;
  Vec cond;
  if (uses_input(model.mode())) cond = model.condition_vector(headword, context);
  DecoderState dec(model, first, std::move(cond));
  Generation out;
  Vec scaled;
  for (;;) {
    const Vec& logits = dec.logits();
    scaled.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / cfg.temperature;
    const Vec p = softmax(scaled);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    while (p[pick] == 0.0 && pick > 0) --pick;
    const auto tok = static_cast<TokenId>(pick);
    out.token_logprobs.push_back(logits[pick] - log_sum_exp(logits));
    if (tok == Vocabulary::kEos) break;
    out.tokens.push_back(tok);
    if (out.tokens.size() >= cfg.max_length) break;
    dec.advance(tok);
  }
  return out;
}

}  // namespace defmod
