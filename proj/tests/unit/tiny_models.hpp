#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <string>

#include "defmod/defmodel.hpp"

namespace test {

// Vocabulary with n ordinary words "x0".."x{n-1}" after the reserved ids.
inline defmod::Vocabulary tiny_vocab(std::size_t n) {
  std::map<std::string, std::uint64_t> counts;
  for (std::size_t i = 0; i < n; ++i) counts["x" + std::to_string(i)] = 1 + i;
  return defmod::Vocabulary::build(counts, 1);
}

// Randomly initialized model with whatever sub-models the mode needs.
inline defmod::DefinitionModel tiny_model(defmod::CondMode mode, const defmod::Vocabulary& vocab, std::uint64_t seed,
                                          std::size_t hidden = 4, double scale = 0.5, std::size_t layers = 2) {
  defmod::Rng rng(seed);
  defmod::DefModelConfig cfg;
  cfg.mode = mode;
  cfg.emb_dim = 3;
  cfg.cond_dim = 3;
  cfg.hidden = hidden;
  cfg.layers = layers;
  cfg.init_scale = scale;
  cfg.dropout = 0.0;
  cfg.fine_tune_attention = true;
  defmod::Conditioning cond;
  if (mode == defmod::CondMode::SeedInput || mode == defmod::CondMode::SeedAttention) {
    cond.word_emb.emplace("word_emb", vocab.size(), cfg.cond_dim);
    cond.word_emb->fill_uniform(rng, -1, 1);
  }
  if (mode == defmod::CondMode::SeedAttention) {
    cond.attention = defmod::AttentionBlock::create(vocab.size(), cfg.cond_dim, rng, scale);
    for (auto* p : cond.attention->params()) p->fill_uniform(rng, -scale, scale);
  }
  if (mode == defmod::CondMode::SeedAdaptive) {
    cond.senses = defmod::SenseEmbeddings(vocab, 2, cfg.cond_dim, 0.5);
    cond.senses->init_vectors(rng);
    cond.senses->nodes.fill_uniform(rng, -1, 1);
  }
  defmod::DefinitionModel m(vocab, cfg, std::move(cond), rng);
  for (auto& cell : m.lstm) cell.b.fill_uniform(rng, -scale, scale);
  m.proj_b.fill_uniform(rng, -scale, scale);
  return m;
}

inline bool bit_equal(const defmod::Vec& a, const defmod::Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Copies the weights of an unconditional model into a model whose first LSTM
// layer also reads the conditioning vector (placed before the embedding).
inline void share_weights(const defmod::DefinitionModel& from, defmod::DefinitionModel& to, defmod::Rng& rng) {
  to.emb.value = from.emb.value;
  to.proj_w.value = from.proj_w.value;
  to.proj_b.value = from.proj_b.value;
  for (std::size_t l = 0; l < from.lstm.size(); ++l) {
    const auto& src = from.lstm[l];
    auto& dst = to.lstm[l];
    dst.wh.value = src.wh.value;
    dst.b.value = src.b.value;
    const std::size_t extra = dst.wx.cols() - src.wx.cols();
    for (std::size_t r = 0; r < dst.wx.rows(); ++r) {
      for (std::size_t c = 0; c < extra; ++c) dst.wx(r, c) = rng.uniform(-1, 1);
      for (std::size_t c = 0; c < src.wx.cols(); ++c) dst.wx(r, extra + c) = src.wx(r, c);
    }
  }
}

// Sum of p(sequence) over every continuation tree of depth `depth`:
// terminated sequences plus unterminated prefixes of full depth.
inline double enumerate_mass(const defmod::DefinitionModel& model, const defmod::SequenceInput& base,
                             std::size_t depth) {
  const auto V = static_cast<defmod::TokenId>(model.vocab().size());
  double total = 0.0;
  std::function<void(defmod::Ids&)> walk = [&](defmod::Ids& prefix) {
    for (defmod::TokenId tok = 0; tok < V; ++tok) {
      defmod::SequenceInput in = base;
      in.targets = prefix;
      in.targets.push_back(tok);
      const double lp = model.forward(in).log_prob;
      if (tok == defmod::Vocabulary::kEos || prefix.size() + 1 == depth) {
        total += std::exp(lp);
      } else {
        prefix.push_back(tok);
        walk(prefix);
        prefix.pop_back();
      }
    }
  };
  defmod::Ids prefix;
  walk(prefix);
  return total;
}

}  // namespace test
