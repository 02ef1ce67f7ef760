#include "defmod/skipgram.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <queue>
#include <sstream>

#include "defmod/error.hpp"

namespace defmod {

HuffmanTree HuffmanTree::build(std::span<const std::uint64_t> counts) {
  const std::size_t n = counts.size();
  require(n >= 2, ErrorCode::Usage, "Huffman tree needs at least 2 leaves");
  using Item = std::pair<std::uint64_t, std::size_t>;  // (count, node id)
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t i = 0; i < n; ++i) heap.emplace(counts[i], i);

  std::vector<std::size_t> parent(2 * n - 1, 0);
  std::vector<std::int8_t> branch(2 * n - 1, 0);
  std::size_t next = n;
  while (heap.size() > 1) {
    const auto left = heap.top();
    heap.pop();
    const auto right = heap.top();
    heap.pop();
    parent[left.second] = next;
    branch[left.second] = +1;
    parent[right.second] = next;
    branch[right.second] = -1;
    heap.emplace(left.first + right.first, next);
    ++next;
  }
  const std::size_t root = 2 * n - 2;

  HuffmanTree tree;
  tree.paths_.resize(n);
  tree.signs_.resize(n);
  for (std::size_t leaf = 0; leaf < n; ++leaf) {
    auto& path = tree.paths_[leaf];
    auto& signs = tree.signs_[leaf];
    for (std::size_t node = leaf; node != root; node = parent[node]) {
      path.push_back(static_cast<std::int32_t>(parent[node] - n));
      signs.push_back(branch[node]);
    }
    std::reverse(path.begin(), path.end());
    std::reverse(signs.begin(), signs.end());
  }
  return tree;
}

HuffmanTree HuffmanTree::build(const Vocabulary& vocab) {
  require(vocab.size() >= static_cast<std::size_t>(Vocabulary::kNumReserved) + 2, ErrorCode::Usage,
          "Huffman tree needs at least 2 non-reserved tokens");
  return build(vocab.counts());
}

double hsoftmax_logprob(std::size_t leaf, std::span<const double> rep, const HuffmanTree& tree,
                        const ParamTensor& nodes) {
  const auto path = tree.path(leaf);
  const auto signs = tree.signs(leaf);
  double lp = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i)
    lp += log_sigmoid(signs[i] * dot(rep, nodes.row(static_cast<std::size_t>(path[i]))));
  return lp;
}

double hsoftmax_logprob_backward(std::size_t leaf, std::span<const double> rep, const HuffmanTree& tree,
                                 ParamTensor& nodes, std::span<double> rep_grad, double scale) {
  const auto path = tree.path(leaf);
  const auto signs = tree.signs(leaf);
  const std::size_t d = rep.size();
  double lp = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const auto node = static_cast<std::size_t>(path[i]);
    const double s = signs[i] * dot(rep, nodes.row(node));
    lp += log_sigmoid(s);
    // d log sigma(ch * x) / dx = ch * (1 - sigma(ch * x))
    const double coef = scale * signs[i] * (1.0 - sigmoid(s));
    auto out = nodes.row(node);
    auto g = nodes.grad_row(node);
    for (std::size_t j = 0; j < d; ++j) {
      rep_grad[j] += coef * out[j];
      g[j] += coef * rep[j];
    }
  }
  return lp;
}

EmbeddingTable make_embedding_table(std::size_t vocab_size, std::size_t dim, std::size_t out_rows, Rng& rng) {
  EmbeddingTable t{ParamTensor("in", vocab_size, dim), ParamTensor("out", out_rows, dim)};
  const double r = 0.5 / static_cast<double>(dim);
  t.in.fill_uniform(rng, -r, r);
  return t;
}

NoiseSampler::NoiseSampler(const Vocabulary& vocab, double power) : NoiseSampler(vocab.counts(), power) {}

NoiseSampler::NoiseSampler(std::span<const std::uint64_t> counts, double power) {
  double total = 0.0;
  for (std::size_t i = Vocabulary::kNumReserved; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    ids_.push_back(static_cast<TokenId>(i));
    probs_.push_back(std::pow(static_cast<double>(counts[i]), power));
    total += probs_.back();
  }
  double acc = 0.0;
  for (auto& p : probs_) {
    p /= total;
    acc += p;
    cdf_.push_back(acc);
  }
  if (!cdf_.empty()) cdf_.back() = 1.0;
}

TokenId NoiseSampler::sample(Rng& rng) const {
  require(!cdf_.empty(), ErrorCode::Usage, "noise distribution is empty");
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), ids_.size() - 1);
  return ids_[idx];
}

double NoiseSampler::probability(TokenId id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return 0.0;
  return probs_[static_cast<std::size_t>(it - ids_.begin())];
}

NsTerms negative_sampling_terms(std::span<const double> v, TokenId positive, std::span<const TokenId> negatives,
                                const ParamTensor& out) {
  NsTerms t;
  t.dv.assign(v.size(), 0.0);
  auto term = [&](TokenId id, double sign) {
    const auto row = out.row(static_cast<std::size_t>(id));
    const double s = dot(row, v);
    t.loss -= log_sigmoid(sign * s);
    // d/ds of -log sigma(sign * s) = -sign * (1 - sigma(sign * s))
    const double coef = -sign * (1.0 - sigmoid(sign * s));
    for (std::size_t j = 0; j < v.size(); ++j) t.dv[j] += coef * row[j];
    t.out_coef.emplace_back(id, coef);
  };
  term(positive, +1.0);
  for (auto n : negatives) term(n, -1.0);
  return t;
}

std::vector<TokenId> draw_negatives(TokenId positive, const NegSamplingConfig& cfg, const NoiseSampler& noise,
                                    Rng& rng) {
  std::vector<TokenId> negs;
  negs.reserve(static_cast<std::size_t>(cfg.negatives));
  for (int k = 0; k < cfg.negatives; ++k) {
    TokenId w = noise.sample(rng);
    for (int tries = 0; w == positive && tries < cfg.max_resample; ++tries) w = noise.sample(rng);
    if (w != positive) negs.push_back(w);
  }
  return negs;
}

double sgns_step(const SkipGramPair& pair, EmbeddingTable& table, const NegSamplingConfig& cfg,
                 const NoiseSampler& noise, Rng& rng, double lr) {
  const auto negs = draw_negatives(pair.context, cfg, noise, rng);
  auto in = table.in.row(static_cast<std::size_t>(pair.center));
  const Vec v(in.begin(), in.end());
  const auto terms = negative_sampling_terms(v, pair.context, negs, table.out);
  for (const auto& [id, coef] : terms.out_coef) {
    auto row = table.out.row(static_cast<std::size_t>(id));
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= lr * coef * v[j];
  }
  for (std::size_t j = 0; j < in.size(); ++j) in[j] -= lr * terms.dv[j];
  return terms.loss;
}

double skipgram_objective(std::span<const Ids> sentences, const EmbeddingTable& table, const NegSamplingConfig& cfg,
                          const NoiseSampler& noise, std::uint64_t seed) {
  Rng rng(seed);
  double loss = 0.0;
  std::uint64_t pairs = 0;
  for (const auto& sentence : sentences) {
    for (const auto& pair : window_pairs(sentence, cfg.window)) {
      const auto negs = draw_negatives(pair.context, cfg, noise, rng);
      loss += negative_sampling_terms(table.in.row(static_cast<std::size_t>(pair.center)), pair.context, negs,
                                      table.out)
                  .loss;
      ++pairs;
    }
  }
  return pairs ? loss / static_cast<double>(pairs) : 0.0;
}

SkipGramResult train_skipgram(std::span<const Ids> sentences, const Vocabulary& vocab, const SkipGramConfig& cfg) {
  require(cfg.dim >= 1 && cfg.epochs >= 0 && cfg.ns.negatives >= 1 && cfg.ns.window >= 1, ErrorCode::Usage,
          "invalid skip-gram configuration");
  Rng rng(cfg.seed);
  SkipGramResult res{make_embedding_table(vocab.size(), cfg.dim, vocab.size(), rng), {}, {}};
  const NoiseSampler noise(vocab, cfg.ns.noise_power);
  require(!noise.empty(), ErrorCode::Format, "corpus has no trainable tokens");

  std::uint64_t corpus_tokens = 0;
  for (const auto& s : sentences) corpus_tokens += s.size();
  const double total = std::max<double>(1.0, static_cast<double>(corpus_tokens) * cfg.epochs);
  std::uint64_t seen = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0.0;
    std::uint64_t pairs = 0;
    for (const auto& sentence : sentences) {
      const double progress = static_cast<double>(seen) / total;
      const double lr = std::max(cfg.min_lr, cfg.lr * (1.0 - progress));
      seen += sentence.size();
      const Ids kept = subsample(sentence, vocab, cfg.subsample, rng);
      for (const auto& pair : window_pairs(kept, cfg.ns.window)) {
        loss += sgns_step(pair, res.table, cfg.ns, noise, rng, lr);
        ++pairs;
      }
    }
    require(std::isfinite(loss), ErrorCode::Numeric, "non-finite skip-gram loss in epoch " + std::to_string(epoch));
    res.epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
    if (cfg.track_objective)
      res.epoch_objective.push_back(
          skipgram_objective(sentences, res.table, cfg.ns, noise, component_seed(cfg.seed, "objective")));
  }
  return res;
}

std::vector<std::pair<TokenId, double>> nearest_neighbors(TokenId word, const ParamTensor& table, std::size_t n) {
  require(table.rows() > 0 && table.cols() > 0, ErrorCode::Usage, "embedding table is empty");
  require(word >= 0 && static_cast<std::size_t>(word) < table.rows(), ErrorCode::Usage,
          "query id out of range: " + std::to_string(word));
  const auto q = table.row(static_cast<std::size_t>(word));
  require(norm(q) > 0.0, ErrorCode::Usage, "query vector is zero (untrained table?)");
  std::vector<std::pair<TokenId, double>> scored;
  for (std::size_t r = Vocabulary::kNumReserved; r < table.rows(); ++r) {
    if (static_cast<TokenId>(r) == word) continue;
    scored.emplace_back(static_cast<TokenId>(r), cosine(q, table.row(r)));
  }
  const auto k = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  scored.resize(k);
  return scored;
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

VectorsFile read_vectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Missing, "cannot open vectors file " + path.string());
  VectorsFile vf;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::Format, "vectors file is empty");
  std::size_t count = 0;
  {
    std::istringstream hs(line);
    require(static_cast<bool>(hs >> count >> vf.dim) && vf.dim > 0, ErrorCode::Format,
            "vectors header must be \"count dim\"");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    Vec row;
    row.reserve(vf.dim);
    std::string num;
    while (ls >> num) {
      double x = 0.0;
      auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), x);
      require(ec == std::errc() && p == num.data() + num.size(), ErrorCode::Format,
              "vectors line " + std::to_string(line_no) + ": bad number");
      row.push_back(x);
    }
    require(row.size() == vf.dim, ErrorCode::Format,
            "vectors line " + std::to_string(line_no) + ": expected " + std::to_string(vf.dim) + " values");
    vf.tokens.push_back(std::move(tok));
    vf.rows.push_back(std::move(row));
  }
  require(vf.rows.size() == count, ErrorCode::Format, "vectors header count does not match the number of rows");
  return vf;
}

void write_vectors(const std::filesystem::path& path, const VectorsFile& vf) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Missing, "cannot write " + path.string());
  out << vf.rows.size() << ' ' << vf.dim << '\n';
  for (std::size_t i = 0; i < vf.rows.size(); ++i) {
    out << vf.tokens[i];
    for (double x : vf.rows[i]) out << ' ' << format_double(x);
    out << '\n';
  }
}

VectorsFile table_to_vectors(const ParamTensor& table, const Vocabulary& vocab, bool skip_reserved) {
  VectorsFile vf;
  vf.dim = table.cols();
  for (std::size_t r = 0; r < table.rows() && r < vocab.size(); ++r) {
    if (skip_reserved && Vocabulary::is_reserved(static_cast<TokenId>(r))) continue;
    vf.tokens.push_back(vocab.token(static_cast<TokenId>(r)));
    const auto row = table.row(r);
    vf.rows.emplace_back(row.begin(), row.end());
  }
  return vf;
}

std::size_t import_vectors(const VectorsFile& vf, const Vocabulary& vocab, ParamTensor& table) {
  require(vf.dim == table.cols(), ErrorCode::Format,
          "vectors dimension " + std::to_string(vf.dim) + " does not match model dimension " +
              std::to_string(table.cols()));
  std::size_t copied = 0;
  for (std::size_t i = 0; i < vf.tokens.size(); ++i) {
    const auto id = vocab.find(vf.tokens[i]);
    if (!id) continue;
    auto row = table.row(static_cast<std::size_t>(*id));
    std::copy(vf.rows[i].begin(), vf.rows[i].end(), row.begin());
    ++copied;
  }
  return copied;
}

std::vector<std::pair<std::string, double>> nearest_neighbors(const VectorsFile& vectors, const std::string& word,
                                                              std::size_t n) {
  const auto it = std::find(vectors.tokens.begin(), vectors.tokens.end(), word);
  require(it != vectors.tokens.end(), ErrorCode::Usage, "'" + word + "' has no vector");
  // Rows are offset past the reserved ids the ranking skips.
  const std::size_t off = Vocabulary::kNumReserved;
  ParamTensor table("vectors", off + vectors.rows.size(), vectors.dim);
  for (std::size_t i = 0; i < vectors.rows.size(); ++i)
    std::copy(vectors.rows[i].begin(), vectors.rows[i].end(), table.row(off + i).begin());
  const auto query = static_cast<TokenId>(off + static_cast<std::size_t>(it - vectors.tokens.begin()));
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [id, cos] : nearest_neighbors(query, table, n))
    out.emplace_back(vectors.tokens[static_cast<std::size_t>(id) - off], cos);
  return out;
}

}  // namespace defmod
