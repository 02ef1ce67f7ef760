#include "defmod/adagram.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>

#include "defmod/error.hpp"

namespace defmod {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double digamma(double x) { return boost::math::digamma(x); }

// q-weighted terms below this are skipped in the stochastic vector update.
constexpr double kMinResponsibility = 1e-4;

Vec normalize_log(const Vec& logits) {
  Vec p(logits.size(), 0.0);
  double mx = kNegInf;
  for (double x : logits) mx = std::max(mx, x);
  if (mx == kNegInf) return p;
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = logits[k] == kNegInf ? 0.0 : std::exp(logits[k] - mx);
    z += p[k];
  }
  for (auto& x : p) x /= z;
  return p;
}

bool has_signal(std::span<const TokenId> context, const SenseEmbeddings& model) {
  return std::any_of(context.begin(), context.end(), [&](TokenId id) { return model.in_tree(id); });
}

std::size_t tree_size(std::span<const std::uint64_t> counts, std::size_t leaves) {
  require(leaves <= counts.size(), ErrorCode::Usage, "more tree leaves than vocabulary entries");
  require(leaves >= static_cast<std::size_t>(Vocabulary::kNumReserved) + 2, ErrorCode::Usage,
          "Huffman tree needs at least 2 non-reserved tokens");
  return leaves;
}

}  // namespace

SenseEmbeddings::SenseEmbeddings(const Vocabulary& vocab, std::size_t max_senses, std::size_t dim, double alpha)
    : SenseEmbeddings(vocab.counts(), vocab.size(), max_senses, dim, alpha) {}

SenseEmbeddings::SenseEmbeddings(std::span<const std::uint64_t> counts, std::size_t leaves, std::size_t max_senses,
                                 std::size_t dim, double alpha)
    : in("senses", leaves * max_senses, dim),
      nodes("nodes", leaves - 1, dim),
      beta_a(leaves * max_senses, 1.0),
      beta_b(leaves * max_senses, alpha),
      word_updates(leaves, 0),
      vocab_size_(leaves),
      max_senses_(max_senses),
      alpha_(alpha),
      tree_(HuffmanTree::build(counts.first(tree_size(counts, leaves)))),
      active_(leaves * max_senses, 1) {
  require(max_senses >= 1, ErrorCode::Usage, "max_senses must be >= 1");
  require(alpha > 0, ErrorCode::Usage, "alpha must be positive");
  require(dim >= 1, ErrorCode::Usage, "dim must be >= 1");
}

void SenseEmbeddings::reset_sticks() {
  std::fill(beta_a.begin(), beta_a.end(), 1.0);
  std::fill(beta_b.begin(), beta_b.end(), alpha_);
  std::fill(active_.begin(), active_.end(), 1);
  std::fill(word_updates.begin(), word_updates.end(), 0);
}

void SenseEmbeddings::init_vectors(Rng& rng, const ParamTensor* base, double noise) {
  const std::size_t d = dim();
  const double r = 0.5 / static_cast<double>(d);
  if (!base) {
    in.fill_uniform(rng, -r, r);
    return;
  }
  require(base->cols() == d && base->rows() == vocab_size_, ErrorCode::Format,
          "initial vectors do not match the sense model shape");
  const double per_dim = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t w = 0; w < vocab_size_; ++w) {
    const auto v = base->row(w);
    const double scale = noise * norm(v) * per_dim;
    for (std::size_t k = 0; k < max_senses_; ++k) {
      auto s = sense(static_cast<TokenId>(w), k);
      for (std::size_t j = 0; j < d; ++j) s[j] = v[j] + scale * rng.normal();
    }
  }
}

void SenseEmbeddings::extend_vocab(std::size_t vocab_size) {
  require(vocab_size >= vocab_size_, ErrorCode::Usage, "sense embeddings cannot shrink");
  const std::size_t added = vocab_size - vocab_size_;
  in.append_rows(added * max_senses_);
  beta_a.resize(vocab_size * max_senses_, 1.0);
  beta_b.resize(vocab_size * max_senses_, alpha_);
  word_updates.resize(vocab_size, 0);
  active_.resize(vocab_size * max_senses_, 0);
  for (std::size_t w = vocab_size_; w < vocab_size; ++w) active_[w * max_senses_] = 1;
  vocab_size_ = vocab_size;
}

void SenseEmbeddings::save(Checkpoint& ck, const Vocabulary& vocab) const {
  require(vocab.size() == vocab_size_, ErrorCode::Usage, "vocabulary does not match the sense embeddings");
  ck.meta["kind"] = "adagram";
  ck.meta["vocab"] = vocab.serialize();
  ck.meta["adagram.tree_leaves"] = std::to_string(tree_leaves());
  ck.meta["adagram.max_senses"] = std::to_string(max_senses_);
  ck.meta["adagram.dim"] = std::to_string(dim());
  ck.meta["adagram.alpha"] = format_double(alpha_);
  ck.put("adagram.", in);
  ck.put("adagram.", nodes);
  const std::uint64_t n = beta_a.size();
  ck.tensors["adagram.beta_a"] = {{n, 1}, beta_a};
  ck.tensors["adagram.beta_b"] = {{n, 1}, beta_b};
  Vec act(active_.begin(), active_.end());
  ck.tensors["adagram.active"] = {{n, 1}, act};
  Vec upd(word_updates.begin(), word_updates.end());
  ck.tensors["adagram.word_updates"] = {{upd.size(), 1}, upd};
}

SenseEmbeddings SenseEmbeddings::load(const Checkpoint& ck, Vocabulary* vocab_out) {
  const auto vocab = Vocabulary::deserialize(ck.get_meta("vocab"));
  const auto k = static_cast<std::size_t>(std::stoul(ck.get_meta("adagram.max_senses")));
  const auto d = static_cast<std::size_t>(std::stoul(ck.get_meta("adagram.dim")));
  const double alpha = std::stod(ck.get_meta("adagram.alpha"));
  // Older files and unextended models have a tree over the whole vocabulary.
  const std::size_t leaves =
      ck.has_meta("adagram.tree_leaves") ? std::stoul(ck.get_meta("adagram.tree_leaves")) : vocab.size();
  require(leaves <= vocab.size(), ErrorCode::Format, "adagram.tree_leaves exceeds the vocabulary");
  SenseEmbeddings m(vocab.counts(), leaves, k, d, alpha);
  m.extend_vocab(vocab.size());
  ck.get("adagram.", m.in);
  ck.get("adagram.", m.nodes);
  auto take = [&](const char* name, std::size_t n) -> const Vec& {
    const auto& t = ck.get_tensor(name);
    require(t.data.size() == n, ErrorCode::Format, std::string("bad size for ") + name);
    return t.data;
  };
  m.beta_a = take("adagram.beta_a", m.beta_a.size());
  m.beta_b = take("adagram.beta_b", m.beta_b.size());
  const auto& act = take("adagram.active", m.active_.size());
  for (std::size_t i = 0; i < act.size(); ++i) m.active_[i] = act[i] != 0.0;
  const auto& upd = take("adagram.word_updates", m.word_updates.size());
  for (std::size_t i = 0; i < upd.size(); ++i) m.word_updates[i] = static_cast<long>(upd[i]);
  if (vocab_out) *vocab_out = vocab;
  return m;
}

Vec stick_prior(TokenId word, const SenseEmbeddings& model) {
  const std::size_t K = model.max_senses();
  Vec pi(K, 0.0);
  double rest = 1.0;
  double used = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double e = model.a(word, k) / (model.a(word, k) + model.b(word, k));
    pi[k] = e * rest;
    rest *= 1.0 - e;
    used += pi[k];
  }
  pi[K - 1] = std::max(0.0, 1.0 - used);
  return pi;
}

Vec expected_log_prior(TokenId word, const SenseEmbeddings& model) {
  const std::size_t K = model.max_senses();
  Vec out(K, 0.0);
  double acc = 0.0;  // sum_{r<k} E[log(1 - beta_r)]
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double a = model.a(word, k), b = model.b(word, k);
    const double dab = digamma(a + b);
    out[k] = acc + digamma(a) - dab;
    acc += digamma(b) - dab;
  }
  out[K - 1] = acc;
  return out;
}

Vec context_loglik(TokenId word, std::span<const TokenId> context, const SenseEmbeddings& model) {
  const std::size_t K = model.max_senses();
  Vec ll(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto rep = model.sense(word, k);
    for (auto y : context) {
      if (!model.in_tree(y)) continue;
      ll[k] += hsoftmax_logprob(static_cast<std::size_t>(y), rep, model.tree(), model.nodes);
    }
  }
  return ll;
}

SensePosterior sense_posterior(TokenId word, std::span<const TokenId> context, const SenseEmbeddings& model) {
  require(word >= 0 && static_cast<std::size_t>(word) < model.vocab_size(), ErrorCode::Usage,
          "word id out of range");
  const std::size_t K = model.max_senses();
  const Vec prior = stick_prior(word, model);
  const Vec ll = has_signal(context, model) ? context_loglik(word, context, model) : Vec(K, 0.0);
  Vec logits(K, kNegInf);
  for (std::size_t k = 0; k < K; ++k)
    if (model.active(word, k) && prior[k] > 0.0) logits[k] = std::log(prior[k]) + ll[k];
  SensePosterior post{word, normalize_log(logits)};
  if (std::all_of(post.probs.begin(), post.probs.end(), [](double p) { return p == 0.0; })) post.probs[0] = 1.0;
  return post;
}

Disambiguation disambiguate(TokenId word, std::span<const TokenId> context, const SenseEmbeddings& model) {
  if (word < 0 || static_cast<std::size_t>(word) >= model.vocab_size()) word = Vocabulary::kUnk;
  std::size_t best = 0;
  if (!Vocabulary::is_reserved(word)) {
    const auto post = sense_posterior(word, context, model);
    for (std::size_t k = 1; k < post.probs.size(); ++k)
      if (post.probs[k] > post.probs[best]) best = k;
  }
  const auto v = model.sense(word, best);
  return {best, Vec(v.begin(), v.end())};
}

std::vector<Datapoint> make_datapoints(std::span<const Ids> sentences, int window) {
  require(window >= 1, ErrorCode::Usage, "window must be >= 1");
  std::vector<Datapoint> data;
  for (const auto& s : sentences) {
    const auto n = static_cast<std::ptrdiff_t>(s.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      if (Vocabulary::is_reserved(s[i])) continue;
      Datapoint dp{s[i], {}};
      for (auto j = std::max<std::ptrdiff_t>(0, i - window); j <= std::min(n - 1, i + window); ++j)
        if (j != i && !Vocabulary::is_reserved(s[j])) dp.context.push_back(s[j]);
      if (!dp.context.empty()) data.push_back(std::move(dp));
    }
  }
  return data;
}

Vec local_posterior(const Datapoint& dp, const SenseEmbeddings& model) {
  const std::size_t K = model.max_senses();
  const Vec elp = expected_log_prior(dp.center, model);
  const Vec ll = context_loglik(dp.center, dp.context, model);
  Vec logits(K, kNegInf);
  for (std::size_t k = 0; k < K; ++k)
    if (model.active(dp.center, k)) logits[k] = elp[k] + ll[k];
  return normalize_log(logits);
}

double elbo(std::span<const Datapoint> data, std::span<const Vec> q, const SenseEmbeddings& model) {
  require(q.size() == data.size(), ErrorCode::Usage, "one local factor per datapoint required");
  const std::size_t K = model.max_senses();
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec elp = expected_log_prior(data[i].center, model);
    const Vec ll = context_loglik(data[i].center, data[i].context, model);
    for (std::size_t k = 0; k < K; ++k) {
      const double qk = q[i][k];
      if (qk <= 0.0) continue;
      total += qk * (elp[k] + ll[k] - std::log(qk));
    }
  }
  const double alpha = model.alpha();
  for (std::size_t w = 0; w < model.vocab_size(); ++w) {
    for (std::size_t k = 0; k + 1 < K; ++k) {
      const double a = model.a(static_cast<TokenId>(w), k), b = model.b(static_cast<TokenId>(w), k);
      const double dab = digamma(a + b);
      const double elog = digamma(a) - dab;
      const double elog1m = digamma(b) - dab;
      const double log_prior = std::log(alpha) + (alpha - 1.0) * elog1m;
      const double log_q = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * elog + (b - 1.0) * elog1m;
      total += log_prior - log_q;
    }
  }
  return total;
}

double SviSchedule::rho(long t) const { return std::pow(tau0 + static_cast<double>(t), -kappa); }

double SviSchedule::current_lr() const {
  if (total_steps <= 0) return lr;
  return std::max(min_lr, lr * (1.0 - step / total_steps));
}

namespace {

// Natural-gradient step of word w's sticks toward prior + scaled expected counts.
void update_sticks(SenseEmbeddings& model, TokenId w, std::span<const double> counts, double rho) {
  const std::size_t K = model.max_senses();
  double tail = 0.0;
  for (std::size_t k = K; k-- > 0;) {
    if (k + 1 < K) {
      const double a_hat = 1.0 + counts[k];
      const double b_hat = model.alpha() + tail;
      model.a(w, k) = (1.0 - rho) * model.a(w, k) + rho * a_hat;
      model.b(w, k) = (1.0 - rho) * model.b(w, k) + rho * b_hat;
    }
    tail += counts[k];
  }
}

// objective: sum_i sum_k q_ik * loglik_ik (the vector-dependent ELBO part)
double vector_objective(std::span<const Datapoint> data, std::span<const Vec> q, const SenseEmbeddings& model) {
  double f = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec ll = context_loglik(data[i].center, data[i].context, model);
    for (std::size_t k = 0; k < ll.size(); ++k)
      if (q[i][k] > 0.0) f += q[i][k] * ll[k];
  }
  return f;
}

}  // namespace

SviResult svi_epoch(std::span<const Datapoint> data, SenseEmbeddings& model, SviSchedule& schedule,
                    std::span<const double> word_totals) {
  require(word_totals.size() == model.vocab_size(), ErrorCode::Usage, "word_totals must cover the vocabulary");
  const std::size_t K = model.max_senses();
  const std::size_t d = model.dim();
  SviResult res;
  double acc = 0.0;
  Vec grad(d), node_grad;
  for (const auto& dp : data) {
    const TokenId w = dp.center;
    const Vec elp = expected_log_prior(w, model);
    const Vec ll = context_loglik(w, dp.context, model);
    Vec logits(K, kNegInf);
    for (std::size_t k = 0; k < K; ++k)
      if (model.active(w, k)) logits[k] = elp[k] + ll[k];
    const Vec q = normalize_log(logits);

    double local = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      if (q[k] > 0.0) local += q[k] * (elp[k] + ll[k] - std::log(q[k]));
    require(std::isfinite(local), ErrorCode::Numeric, "non-finite ELBO for word id " + std::to_string(w));
    acc += local;

    Vec counts(K);
    for (std::size_t k = 0; k < K; ++k) counts[k] = word_totals[static_cast<std::size_t>(w)] * q[k];
    update_sticks(model, w, counts, schedule.rho(model.word_updates[static_cast<std::size_t>(w)]++));

    const double lr = schedule.current_lr();
    for (std::size_t k = 0; k < K; ++k) {
      if (q[k] < kMinResponsibility) continue;
      auto rep = model.sense(w, k);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (auto y : dp.context) {
        if (Vocabulary::is_reserved(y)) continue;
        const auto path = model.tree().path(static_cast<std::size_t>(y));
        const auto signs = model.tree().signs(static_cast<std::size_t>(y));
        for (std::size_t p = 0; p < path.size(); ++p) {
          auto node = model.nodes.row(static_cast<std::size_t>(path[p]));
          const double s = signs[p] * dot(rep, node);
          const double coef = lr * q[k] * signs[p] * (1.0 - sigmoid(s));
          for (std::size_t j = 0; j < d; ++j) {
            grad[j] += coef * node[j];
            node[j] += coef * rep[j];
          }
        }
      }
      for (std::size_t j = 0; j < d; ++j) rep[j] += grad[j];
    }
    schedule.step += 1.0;
  }
  res.elbo = data.empty() ? 0.0 : acc / static_cast<double>(data.size());
  return res;
}

SviResult svi_full_batch_epoch(std::span<const Datapoint> data, SenseEmbeddings& model, double step_size) {
  const std::size_t K = model.max_senses();
  SviResult res;
  res.q.reserve(data.size());
  for (const auto& dp : data) res.q.push_back(local_posterior(dp, model));

  std::vector<Vec> counts(model.vocab_size(), Vec(K, 0.0));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t k = 0; k < K; ++k) counts[static_cast<std::size_t>(data[i].center)][k] += res.q[i][k];
  for (std::size_t w = 0; w < model.vocab_size(); ++w) update_sticks(model, static_cast<TokenId>(w), counts[w], 1.0);

  // Gradient of the q-weighted log likelihood w.r.t. sense and node vectors.
  model.in.zero_grad();
  model.nodes.zero_grad();
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const double qk = res.q[i][k];
      if (qk <= 0.0) continue;
      const std::size_t row = model.slot(data[i].center, k);
      const Vec rep(model.in.row(row).begin(), model.in.row(row).end());
      for (auto y : data[i].context) {
        if (Vocabulary::is_reserved(y)) continue;
        hsoftmax_logprob_backward(static_cast<std::size_t>(y), rep, model.tree(), model.nodes, model.in.grad_row(row), qk);
      }
    }
  }
  const double f0 = vector_objective(data, res.q, model);
  const Vec in0 = model.in.value, nodes0 = model.nodes.value;
  double eta = step_size;
  for (int tries = 0; tries < 40; ++tries, eta *= 0.5) {
    for (std::size_t j = 0; j < in0.size(); ++j) model.in.value[j] = in0[j] + eta * model.in.grad[j];
    for (std::size_t j = 0; j < nodes0.size(); ++j) model.nodes.value[j] = nodes0[j] + eta * model.nodes.grad[j];
    if (vector_objective(data, res.q, model) >= f0) break;
    model.in.value = in0;
    model.nodes.value = nodes0;
  }
  model.in.zero_grad();
  model.nodes.zero_grad();

  res.elbo = elbo(data, res.q, model);
  require(std::isfinite(res.elbo), ErrorCode::Numeric, "non-finite ELBO");
  return res;
}

namespace {
AdaGramResult run_svi(std::span<const Ids> sentences, const Vocabulary& vocab, const AdaGramConfig& cfg,
                      SenseEmbeddings model, Rng& rng);
}  // namespace

AdaGramResult train_adagram(std::span<const Ids> sentences, const Vocabulary& vocab, const AdaGramConfig& cfg,
                            const ParamTensor* init_vectors) {
  Rng rng(cfg.seed);
  SenseEmbeddings model(vocab, cfg.max_senses, cfg.dim, cfg.alpha);
  model.init_vectors(rng, init_vectors, cfg.init_noise);
  return run_svi(sentences, vocab, cfg, std::move(model), rng);
}

AdaGramResult train_adagram(std::span<const Ids> sentences, const Vocabulary& vocab, const AdaGramConfig& cfg,
                            SenseEmbeddings initial) {
  require(initial.vocab_size() == vocab.size(), ErrorCode::Usage, "sense embeddings do not match the vocabulary");
  Rng rng(cfg.seed);
  return run_svi(sentences, vocab, cfg, std::move(initial), rng);
}

namespace {

AdaGramResult run_svi(std::span<const Ids> sentences, const Vocabulary& vocab, const AdaGramConfig& cfg,
                      SenseEmbeddings model, Rng& rng) {
  require(cfg.window >= 1 && cfg.epochs >= 0, ErrorCode::Usage, "invalid AdaGram configuration");
  require(model.tree_leaves() == model.vocab_size(), ErrorCode::Usage,
          "sense embeddings extended beyond their training vocabulary cannot be trained");
  AdaGramResult res{std::move(model), {}};

  std::vector<std::vector<Datapoint>> epochs;
  double per_epoch = 0.0;
  std::vector<double> totals(vocab.size(), 0.0);
  SviSchedule schedule;
  schedule.tau0 = cfg.tau0;
  schedule.kappa = cfg.kappa;
  schedule.lr = cfg.lr;
  schedule.min_lr = cfg.min_lr;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<Ids> kept;
    kept.reserve(sentences.size());
    for (const auto& s : sentences) kept.push_back(subsample(s, vocab, cfg.subsample, rng));
    auto data = make_datapoints(kept, cfg.window);
    if (e == 0) {
      for (const auto& dp : data) totals[static_cast<std::size_t>(dp.center)] += 1.0;
      per_epoch = static_cast<double>(data.size());
      schedule.total_steps = per_epoch * cfg.epochs;
    }
    const auto r = svi_epoch(data, res.model, schedule, totals);
    res.epoch_elbo.push_back(r.elbo);
  }
  return res;
}

}  // namespace

std::vector<std::size_t> prune_senses(SenseEmbeddings& model, double threshold) {
  std::vector<std::size_t> active(model.vocab_size(), 0);
  for (std::size_t w = 0; w < model.vocab_size(); ++w) {
    const auto id = static_cast<TokenId>(w);
    const Vec prior = stick_prior(id, model);
    const auto best = static_cast<std::size_t>(std::max_element(prior.begin(), prior.end()) - prior.begin());
    for (std::size_t k = 0; k < prior.size(); ++k) {
      const bool on = k == best || prior[k] >= threshold;
      model.set_active(id, k, on);
      active[w] += on;
    }
  }
  return active;
}

VectorsFile export_sense_vectors(const SenseEmbeddings& model, const Vocabulary& vocab) {
  VectorsFile vf;
  vf.dim = model.dim();
  for (std::size_t w = Vocabulary::kNumReserved; w < model.vocab_size(); ++w) {
    const auto id = static_cast<TokenId>(w);
    for (std::size_t k = 0; k < model.max_senses(); ++k) {
      if (!model.active(id, k)) continue;
      vf.tokens.push_back(vocab.token(id) + "#" + std::to_string(k + 1));
      const auto v = model.sense(id, k);
      vf.rows.emplace_back(v.begin(), v.end());
    }
  }
  return vf;
}

std::size_t import_sense_vectors(const VectorsFile& vf, const Vocabulary& vocab, SenseEmbeddings& model) {
  require(vf.dim == model.dim(), ErrorCode::Format, "sense vectors dimension does not match the model");
  std::vector<std::vector<std::size_t>> listed(model.vocab_size());
  std::size_t copied = 0;
  for (std::size_t i = 0; i < vf.tokens.size(); ++i) {
    const auto& tok = vf.tokens[i];
    const auto hash = tok.rfind('#');
    require(hash != std::string::npos && hash + 1 < tok.size(), ErrorCode::Format,
            "sense token '" + tok + "' lacks a #k suffix");
    std::size_t k = 0;
    try {
      k = std::stoul(tok.substr(hash + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::Format, "sense token '" + tok + "' has a bad sense index");
    }
    require(k >= 1, ErrorCode::Format, "sense indices are 1-based: " + tok);
    const auto id = vocab.find(tok.substr(0, hash));
    if (!id || k > model.max_senses()) continue;
    auto dst = model.sense(*id, k - 1);
    std::copy(vf.rows[i].begin(), vf.rows[i].end(), dst.begin());
    listed[static_cast<std::size_t>(*id)].push_back(k - 1);
    ++copied;
  }
  for (std::size_t w = 0; w < listed.size(); ++w) {
    if (listed[w].empty()) continue;
    for (std::size_t k = 0; k < model.max_senses(); ++k)
      model.set_active(static_cast<TokenId>(w), k,
                       std::find(listed[w].begin(), listed[w].end(), k) != listed[w].end());
  }
  return copied;
}

}  // namespace defmod
