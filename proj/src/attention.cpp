#include "defmod/attention.hpp"

#include <algorithm>
#include <cstdio>

#include "defmod/error.hpp"

namespace defmod {

AttentionBlock AttentionBlock::create(std::size_t vocab_size, std::size_t dim, Rng& rng, double init_scale) {
  AttentionBlock b{ParamTensor("context_emb", vocab_size, dim), ParamTensor("ann_w", dim, dim),
                   ParamTensor("ann_b", dim), ParamTensor("mask_w", dim, dim), ParamTensor("mask_b", dim)};
  const double r = 0.5 / static_cast<double>(dim);
  b.context_emb.fill_uniform(rng, -r, r);
  b.ann_w.fill_uniform(rng, -init_scale, init_scale);
  b.mask_w.fill_uniform(rng, -init_scale, init_scale);
  return b;
}

void AttentionBlock::save(Checkpoint& ck, const std::string& prefix) const {
  for (const auto* p : {&context_emb, &ann_w, &ann_b, &mask_w, &mask_b}) ck.put(prefix, *p);
}

AttentionBlock AttentionBlock::load(const Checkpoint& ck, const std::string& prefix) {
  const auto& ce = ck.get_tensor(prefix + "context_emb");
  const auto& mb = ck.get_tensor(prefix + "mask_b");
  require(ce.shape.size() == 2 && mb.shape.size() == 2, ErrorCode::Format, "bad attention block tensors");
  const auto v = static_cast<std::size_t>(ce.shape[0]);
  const auto d = static_cast<std::size_t>(mb.shape[0]);
  AttentionBlock b{ParamTensor("context_emb", v, static_cast<std::size_t>(ce.shape[1])),
                   ParamTensor("ann_w", d, static_cast<std::size_t>(ce.shape[1])), ParamTensor("ann_b", d),
                   ParamTensor("mask_w", d, d), ParamTensor("mask_b", d)};
  ck.get(prefix, b.params());
  return b;
}

Vec compute_mask(std::span<const TokenId> context, const AttentionBlock& block, MaskCache* cache) {
  const std::size_t d = block.dim();
  const std::size_t da = block.ann_b.rows();
  Ids ctx;
  for (auto id : context)
    if (!Vocabulary::is_reserved(id) && static_cast<std::size_t>(id) < block.context_emb.rows()) ctx.push_back(id);
  std::sort(ctx.begin(), ctx.end());

  Vec pooled(da, 0.0);
  std::vector<Vec> hidden;
  hidden.reserve(ctx.size());
  for (auto id : ctx) {
    Vec h(block.ann_b.value);
    matvec_add(block.ann_w, block.context_emb.row(static_cast<std::size_t>(id)), h);
    for (auto& x : h) x = std::tanh(x);
    for (std::size_t j = 0; j < da; ++j) pooled[j] += h[j];
    hidden.push_back(std::move(h));
  }
  if (!ctx.empty())
    for (auto& x : pooled) x /= static_cast<double>(ctx.size());

  Vec mask(block.mask_b.value);
  matvec_add(block.mask_w, pooled, mask);
  for (auto& x : mask) x = sigmoid(x);
  (void)d;
  if (cache) {
    cache->context = std::move(ctx);
    cache->hidden = std::move(hidden);
    cache->pooled = std::move(pooled);
    cache->mask = mask;
  }
  return mask;
}

void mask_backward(const MaskCache& cache, std::span<const double> dmask, AttentionBlock& block) {
  const std::size_t d = block.dim();
  const std::size_t da = block.ann_b.rows();
  Vec dz(d);
  for (std::size_t j = 0; j < d; ++j) dz[j] = dmask[j] * cache.mask[j] * (1.0 - cache.mask[j]);
  for (std::size_t j = 0; j < d; ++j) block.mask_b.grad[j] += dz[j];
  outer_add_grad(block.mask_w, dz, cache.pooled);
  if (cache.context.empty()) return;
  Vec dpooled(da, 0.0);
  matvec_t_add(block.mask_w, dz, dpooled);
  const double inv = 1.0 / static_cast<double>(cache.context.size());
  Vec dpre(da);
  for (std::size_t i = 0; i < cache.context.size(); ++i) {
    const auto& h = cache.hidden[i];
    for (std::size_t j = 0; j < da; ++j) dpre[j] = dpooled[j] * inv * (1.0 - h[j] * h[j]);
    for (std::size_t j = 0; j < da; ++j) block.ann_b.grad[j] += dpre[j];
    const auto row = static_cast<std::size_t>(cache.context[i]);
    outer_add_grad(block.ann_w, dpre, block.context_emb.row(row));
    matvec_t_add(block.ann_w, dpre, block.context_emb.grad_row(row));
  }
}

Vec apply_mask(std::span<const double> v, std::span<const double> mask) {
  require(v.size() == mask.size(), ErrorCode::Usage,
          "mask width " + std::to_string(mask.size()) + " != embedding width " + std::to_string(v.size()));
  Vec out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j] * mask[j];
  return out;
}

AttentionSkipGram AttentionSkipGram::create(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  AttentionSkipGram m{AttentionBlock::create(vocab_size, dim, rng), ParamTensor("word_emb", vocab_size, dim),
                      ParamTensor("out", vocab_size, dim)};
  const double r = 0.5 / static_cast<double>(dim);
  m.word_emb.fill_uniform(rng, -r, r);
  return m;
}

Vec anchor_vector(const AttentionSkipGram& m, TokenId anchor, std::span<const TokenId> context, MaskCache* cache) {
  const Vec mask = compute_mask(context, m.block, cache);
  return apply_mask(m.word_emb.row(static_cast<std::size_t>(anchor)), mask);
}

double attention_ns_loss(const AttentionSkipGram& m, TokenId anchor, std::span<const TokenId> context,
                         TokenId positive, std::span<const TokenId> negatives) {
  const Vec v = anchor_vector(m, anchor, context);
  return negative_sampling_terms(v, positive, negatives, m.out).loss;
}

double attention_ns_backward(AttentionSkipGram& m, TokenId anchor, std::span<const TokenId> context,
                             TokenId positive, std::span<const TokenId> negatives) {
  MaskCache cache;
  const Vec v = anchor_vector(m, anchor, context, &cache);
  const auto terms = negative_sampling_terms(v, positive, negatives, m.out);
  for (const auto& [id, coef] : terms.out_coef) {
    auto g = m.out.grad_row(static_cast<std::size_t>(id));
    for (std::size_t j = 0; j < v.size(); ++j) g[j] += coef * v[j];
  }
  const auto e = m.word_emb.row(static_cast<std::size_t>(anchor));
  auto ge = m.word_emb.grad_row(static_cast<std::size_t>(anchor));
  Vec dmask(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    ge[j] += terms.dv[j] * cache.mask[j];
    dmask[j] = terms.dv[j] * e[j];
  }
  mask_backward(cache, dmask, m.block);
  return terms.loss;
}

namespace {

void sgd_rows(ParamTensor& p, std::span<const TokenId> rows, double lr) {
  for (auto r : rows) {
    auto v = p.row(static_cast<std::size_t>(r));
    auto g = p.grad_row(static_cast<std::size_t>(r));
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] -= lr * g[j];
      g[j] = 0.0;
    }
  }
}

}  // namespace

AttentionPretrainResult pretrain_attention(std::span<const Ids> sentences, const Vocabulary& vocab,
                                           const AttentionPretrainConfig& cfg, const ParamTensor* init_embeddings) {
  require(cfg.ns.window >= 1 && cfg.ns.negatives >= 1 && cfg.epochs >= 0, ErrorCode::Usage,
          "invalid attention pretraining configuration");
  Rng rng(cfg.seed);
  AttentionPretrainResult res{AttentionSkipGram::create(vocab.size(), cfg.dim, rng), {}};
  auto& m = res.model;
  if (init_embeddings) {
    require(init_embeddings->rows() == m.word_emb.rows() && init_embeddings->cols() == m.word_emb.cols(),
            ErrorCode::Format, "initial embeddings do not match the attention model shape");
    m.word_emb.value = init_embeddings->value;
  }
  const NoiseSampler noise(vocab, cfg.ns.noise_power);
  require(!noise.empty(), ErrorCode::Format, "corpus has no trainable tokens");

  std::uint64_t corpus_tokens = 0;
  for (const auto& s : sentences) corpus_tokens += s.size();
  const double total = std::max<double>(1.0, static_cast<double>(corpus_tokens) * cfg.epochs);
  std::uint64_t seen = 0;
  const ParamList dense{&m.block.ann_w, &m.block.ann_b, &m.block.mask_w, &m.block.mask_b};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0.0;
    std::uint64_t pairs = 0;
    for (const auto& sentence : sentences) {
      const double lr = std::max(cfg.min_lr, cfg.lr * (1.0 - static_cast<double>(seen) / total));
      seen += sentence.size();
      const Ids s = subsample(sentence, vocab, cfg.subsample, rng);
      const auto n = static_cast<std::ptrdiff_t>(s.size());
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        Ids window;
        for (auto j = std::max<std::ptrdiff_t>(0, i - cfg.ns.window); j <= std::min(n - 1, i + cfg.ns.window); ++j)
          if (j != i) window.push_back(s[j]);
        if (window.empty()) continue;
        const TokenId anchor = s[i];
        MaskCache cache;
        const Vec v = anchor_vector(m, anchor, window, &cache);
        Vec dv(v.size(), 0.0);
        for (auto positive : window) {
          const auto negs = draw_negatives(positive, cfg.ns, noise, rng);
          const auto terms = negative_sampling_terms(v, positive, negs, m.out);
          loss += terms.loss;
          ++pairs;
          for (std::size_t j = 0; j < v.size(); ++j) dv[j] += terms.dv[j];
          for (const auto& [id, coef] : terms.out_coef) {
            auto row = m.out.row(static_cast<std::size_t>(id));
            for (std::size_t j = 0; j < v.size(); ++j) row[j] -= lr * coef * v[j];
          }
        }
        auto e = m.word_emb.row(static_cast<std::size_t>(anchor));
        Vec dmask(v.size());
        for (std::size_t j = 0; j < v.size(); ++j) dmask[j] = dv[j] * e[j];
        if (!cfg.freeze_embeddings)
          for (std::size_t j = 0; j < v.size(); ++j) e[j] -= lr * dv[j] * cache.mask[j];
        mask_backward(cache, dmask, m.block);
        Ids touched = cache.context;
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        sgd_rows(m.block.context_emb, touched, lr);
        sgd_step(dense, lr);
      }
    }
    require(std::isfinite(loss), ErrorCode::Numeric, "non-finite attention pretraining loss");
    res.epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
  }
  return res;
}

std::string mask_csv_header(std::size_t dim) {
  std::string h = "word,context_hash";
  for (std::size_t j = 1; j <= dim; ++j) h += ",m" + std::to_string(j);
  return h;
}

std::string mask_csv_row(const std::string& word, std::span<const std::string> context, std::span<const double> mask) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(join_tokens(context))));
  std::string row = word + "," + hash;
  for (double x : mask) row += "," + format_double(x);
  return row;
}

}  // namespace defmod
