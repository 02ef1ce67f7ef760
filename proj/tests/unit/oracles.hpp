#pragma once

// Reference computations kept independent of the library's own formulas.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "defmod/adagram.hpp"

namespace test {

// Asymptotic series after shifting the argument above 10.
inline double digamma(double x) {
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return acc + std::log(x) - 0.5 / x -
         f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132)))));
}

// log p(y | rep) as a product of branch probabilities along the tree path.
inline double path_logprob(std::size_t leaf, std::span<const double> rep, const defmod::SenseEmbeddings& m) {
  const auto path = m.tree().path(leaf);
  const auto signs = m.tree().signs(leaf);
  double p = 1.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    double s = 0.0;
    const auto node = m.nodes.row(static_cast<std::size_t>(path[i]));
    for (std::size_t j = 0; j < rep.size(); ++j) s += rep[j] * node[j];
    p *= 1.0 / (1.0 + std::exp(-signs[i] * s));
  }
  return std::log(p);
}

// E[log pi_k] for the stick-breaking prior with a fixed final stick.
inline std::vector<double> elog_pi(defmod::TokenId w, const defmod::SenseEmbeddings& m) {
  const std::size_t K = m.max_senses();
  std::vector<double> out(K);
  double rest = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (k + 1 == K) {
      out[k] = rest;
      break;
    }
    const double a = m.a(w, k), b = m.b(w, k);
    out[k] = rest + digamma(a) - digamma(a + b);
    rest += digamma(b) - digamma(a + b);
  }
  return out;
}

// log p(z = k, context | w) up to the Beta terms.
inline std::vector<double> joint_terms(const defmod::Datapoint& dp, const defmod::SenseEmbeddings& m) {
  auto out = elog_pi(dp.center, m);
  for (std::size_t k = 0; k < out.size(); ++k)
    for (auto y : dp.context) out[k] += path_logprob(static_cast<std::size_t>(y), m.sense(dp.center, k), m);
  return out;
}

// sum over sticks of E[log Beta(beta | 1, alpha)] - E[log q(beta)].
inline double beta_terms(const defmod::SenseEmbeddings& m) {
  const double alpha = m.alpha();
  double total = 0.0;
  for (std::size_t w = 0; w < m.vocab_size(); ++w)
    for (std::size_t k = 0; k + 1 < m.max_senses(); ++k) {
      const double a = m.a(static_cast<defmod::TokenId>(w), k), b = m.b(static_cast<defmod::TokenId>(w), k);
      const double el = digamma(a) - digamma(a + b), el1m = digamma(b) - digamma(a + b);
      const double log_norm_q = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
      total += std::log(alpha) + (alpha - 1.0) * el1m - (log_norm_q + (a - 1.0) * el + (b - 1.0) * el1m);
    }
  return total;
}

// ELBO for given local factors, summing over every latent sense of every
// datapoint explicitly.
inline double elbo_by_enumeration(std::span<const defmod::Datapoint> data, std::span<const std::vector<double>> q,
                                  const defmod::SenseEmbeddings& m) {
  double total = beta_terms(m);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto j = joint_terms(data[i], m);
    for (std::size_t z = 0; z < j.size(); ++z)
      if (q[i][z] > 0.0) total += q[i][z] * (j[z] - std::log(q[i][z]));
  }
  return total;
}

// Same bound maximized over q: sum_i log sum_z exp(joint).
inline double optimal_elbo(std::span<const defmod::Datapoint> data, const defmod::SenseEmbeddings& m) {
  double total = beta_terms(m);
  for (const auto& dp : data) {
    double s = 0.0;
    for (double x : joint_terms(dp, m)) s += std::exp(x);
    total += std::log(s);
  }
  return total;
}

// The AdaGram toy instance: six words, two senses, 50 datapoints.
struct ToyAdaGram {
  defmod::Vocabulary vocab;
  std::vector<defmod::Datapoint> data;
  defmod::SenseEmbeddings model;
};

inline ToyAdaGram make_toy_adagram(std::uint64_t seed) {
  defmod::Rng rng(seed);
  std::map<std::string, std::uint64_t> counts;
  for (int i = 0; i < 6; ++i) counts["w" + std::to_string(i)] = 10 + static_cast<std::uint64_t>(i);
  ToyAdaGram toy{defmod::Vocabulary::build(counts, 1), {}, {}};
  toy.model = defmod::SenseEmbeddings(toy.vocab, 2, 3, 0.5);
  toy.model.in.fill_uniform(rng, -0.5, 0.5);
  toy.model.nodes.fill_uniform(rng, -0.5, 0.5);
  for (int i = 0; i < 50; ++i) {
    const auto center = static_cast<defmod::TokenId>(defmod::Vocabulary::kNumReserved + rng.below(6));
    // Hidden sense picks which half of the vocabulary appears nearby.
    const std::uint64_t half = rng.below(2) * 3;
    defmod::Datapoint dp{center, {}};
    for (int c = 0; c < 2; ++c)
      dp.context.push_back(static_cast<defmod::TokenId>(defmod::Vocabulary::kNumReserved + half + rng.below(3)));
    toy.data.push_back(dp);
  }
  return toy;
}

}  // namespace test
