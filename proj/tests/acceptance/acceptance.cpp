// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <numeric>
#include <sstream>

#include "defmod/adagram.hpp"
#include "defmod/attention.hpp"
#include "defmod/error.hpp"
#include "defmod/evaluate.hpp"
#include "defmod/lstm.hpp"
#include "defmod/pipeline.hpp"
#include "defmod/skipgram.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "tiny_models.hpp"

using namespace defmod;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += " (over the " + std::to_string(static_cast<int>(budget_s)) + " s budget)";
  }
  char elapsed[32];
  std::snprintf(elapsed, sizeof elapsed, "%.1f s", secs);
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << o.detail << " [" << elapsed
            << "]" << std::endl;
  if (!o.pass) ++failures;
}

std::string num(double x, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vec random_vec(Rng& rng, std::size_t n, double scale) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

// ---------------------------------------------------------------------------

Outcome normalization() {
  Rng rng(1);
  double soft = 0.0, huff = 0.0, post = 0.0;
  bool stick_exact = true;
  for (int i = 0; i < 1000; ++i) {
    const auto p = softmax(random_vec(rng, 1 + rng.below(200), i % 2 ? 30.0 : 3.0));
    soft = std::max(soft, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
  }
  for (int i = 0; i < 100; ++i) {
    std::vector<std::uint64_t> counts(2 + rng.below(60));
    for (auto& c : counts) c = 1 + rng.below(1000);
    const auto tree = HuffmanTree::build(counts);
    ParamTensor nodes("nodes", tree.inner_nodes(), 4);
    nodes.fill_uniform(rng, -2, 2);
    const Vec rep = random_vec(rng, 4, 2.0);
    double s = 0.0;
    for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf) s += std::exp(hsoftmax_logprob(leaf, rep, tree, nodes));
    huff = std::max(huff, std::abs(s - 1.0));
  }
  const auto vocab = test::tiny_vocab(8);
  for (int i = 0; i < 200; ++i) {
    SenseEmbeddings m(vocab, 1 + rng.below(8), 3, 0.1);
    m.init_vectors(rng);
    m.nodes.fill_uniform(rng, -1, 1);
    const TokenId w = static_cast<TokenId>(Vocabulary::kNumReserved + rng.below(8));
    for (std::size_t k = 0; k < m.max_senses(); ++k) {
      m.a(w, k) = std::exp(rng.uniform(-4, 4));
      m.b(w, k) = std::exp(rng.uniform(-4, 4));
    }
    const auto prior = stick_prior(w, m);
    stick_exact &= std::accumulate(prior.begin(), prior.end(), 0.0) == 1.0;
    Ids ctx;
    for (int j = 0; j < 5; ++j) ctx.push_back(static_cast<TokenId>(Vocabulary::kNumReserved + rng.below(8)));
    const auto sp = sense_posterior(w, ctx, m).probs;
    post = std::max(post, std::abs(std::accumulate(sp.begin(), sp.end(), 0.0) - 1.0));
  }
  const bool ok = soft <= 1e-12 && huff <= 1e-12 && stick_exact && post <= 1e-10;
  return {ok, "softmax dev " + num(soft) + ", Huffman dev " + num(huff) + ", stick_prior exact " +
                  (stick_exact ? "yes" : "no") + ", posterior dev " + num(post)};
}

Outcome gradients() {
  std::vector<std::pair<std::string, double>> errs;
  Rng rng(2);

  {  // LSTM
    LstmCell cell("lstm", 4, 5);
    cell.init(rng, 0.5);
    cell.b.fill_uniform(rng, -0.5, 0.5);
    const Vec x = random_vec(rng, 4, 1.0);
    const LstmState st{random_vec(rng, 5, 0.5), random_vec(rng, 5, 0.5)};
    const Vec wh = random_vec(rng, 5, 1.0), wc = random_vec(rng, 5, 1.0);
    auto loss = [&] {
      const auto s = cell.step(x, st);
      return dot(s.h, wh) + dot(s.c, wc);
    };
    zero_grads(cell.params());
    LstmCache cache;
    cell.step(x, st, &cache);
    Vec dx, dh, dc;
    cell.backward(cache, wh, wc, dx, dh, dc);
    errs.emplace_back("LSTM", grad_check(loss, cell.params(), {1e-5, 1000, 1}).max_rel_error);
  }
  {  // softmax cross-entropy
    ParamTensor logits("logits", 9);
    logits.fill_uniform(rng, -3, 3);
    logits.grad = softmax_xent(logits.value, 4).grad;
    errs.emplace_back("softmax-xent",
                      grad_check([&] { return softmax_xent(logits.value, 4).loss; }, {&logits}).max_rel_error);
  }
  {  // hierarchical softmax
    const std::vector<std::uint64_t> counts{9, 5, 4, 3, 2, 1, 1};
    const auto tree = HuffmanTree::build(counts);
    ParamTensor nodes("nodes", tree.inner_nodes(), 4), rep("rep", 4);
    nodes.fill_uniform(rng, -1, 1);
    rep.fill_uniform(rng, -1, 1);
    double worst = 0.0;
    for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf) {
      zero_grads({&nodes, &rep});
      hsoftmax_logprob_backward(leaf, rep.value, tree, nodes, rep.grad);
      worst = std::max(worst, grad_check([&] { return hsoftmax_logprob(leaf, rep.value, tree, nodes); },
                                         {&nodes, &rep}, {1e-5, 1000, 1})
                                  .max_rel_error);
    }
    errs.emplace_back("hsoftmax", worst);
  }
  {  // negative sampling
    ParamTensor out("out", 12, 4), v("v", 4);
    out.fill_uniform(rng, -1, 1);
    v.fill_uniform(rng, -1, 1);
    const std::vector<TokenId> negs{5, 6, 7, 9, 11};
    const auto t = negative_sampling_terms(v.value, 4, negs, out);
    v.grad = t.dv;
    for (const auto& [id, c] : t.out_coef)
      for (std::size_t j = 0; j < 4; ++j) out.grad[static_cast<std::size_t>(id) * 4 + j] += c * v.value[j];
    errs.emplace_back("negative sampling",
                      grad_check([&] { return negative_sampling_terms(v.value, 4, negs, out).loss; }, {&out, &v},
                                 {1e-5, 1000, 1})
                          .max_rel_error);
  }
  {  // attention block with embeddings
    auto m = AttentionSkipGram::create(12, 4, rng);
    for (auto* p : m.params()) p->fill_uniform(rng, -0.7, 0.7);
    const Ids ctx{5, 9, 11, 6};
    const Ids negs{6, 7, 8, 10, 11};
    zero_grads(m.params());
    attention_ns_backward(m, 4, ctx, 9, negs);
    errs.emplace_back("attention", grad_check([&] { return attention_ns_loss(m, 4, ctx, 9, negs); }, m.params(),
                                              {1e-5, 1000, 1})
                                       .max_rel_error);
  }
  {  // full conditional model
    const auto vocab = test::tiny_vocab(5);
    auto model = test::tiny_model(CondMode::SeedAttention, vocab, 3, 4, 0.6);
    const EncodedEntry e{vocab.id("x2"), {vocab.id("x0"), vocab.id("x4"), vocab.id("x1")},
                         {vocab.id("x3"), vocab.id("x2"), vocab.id("x0")}};
    const auto params = model.trainable_params();
    zero_grads(params);
    MaskCache cache;
    SequenceInput in = model.make_input(e);
    in.cond = model.condition_vector(e.headword, e.context, &cache);
    Vec dcond;
    model.backward(in, 1.0, nullptr, &dcond);
    model.condition_backward(e.headword, cache, dcond);
    errs.emplace_back("definition model", grad_check([&] { return -model.forward(model.make_input(e)).log_prob; },
                                                     params, {1e-5, 1000, 1})
                                              .max_rel_error);
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, err] : errs) {
    ok &= err < 1e-4;
    detail += (detail.empty() ? "" : ", ") + name + " " + num(err, 2);
  }
  return {ok, "max rel. err: " + detail};
}

Outcome factorization() {
  const auto vocab = test::tiny_vocab(1);  // |V| = 5 with the reserved ids
  const auto m = test::tiny_model(CondMode::Seed, vocab, 4, 4, 1.0);
  const EncodedEntry e{vocab.id("x0"), {vocab.id("x0")}, {}};
  const double mass = test::enumerate_mass(m, m.make_input(e), 7);
  const double dev = std::abs(mass - 1.0);
  return {dev <= 1e-9, "|V|=5, d_h=4, tree depth 7: total mass " + num(mass, 17) + ", deviation " + num(dev)};
}

Outcome zero_conditioning() {
  const auto vocab = test::tiny_vocab(6);
  int identical = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto none = test::tiny_model(CondMode::None, vocab, 50 + seed);
    auto with_input = test::tiny_model(CondMode::SeedInput, vocab, 50 + seed);
    Rng rng(seed);
    test::share_weights(none, with_input, rng);
    for (int i = 0; i < 10; ++i) {
      EncodedEntry e{static_cast<TokenId>(4 + rng.below(6)), {}, {static_cast<TokenId>(4 + rng.below(6))}};
      for (std::uint64_t t = 0, n = 1 + rng.below(6); t < n; ++t) e.definition.push_back(static_cast<TokenId>(4 + rng.below(6)));
      const auto a = none.forward(none.make_input(e)).token_losses;
      const auto b = with_input.forward(with_input.make_input(e, true)).token_losses;
      identical += test::bit_equal(a, b);
      ++total;
    }
  }
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) + " sequences bit-identical"};
}

Outcome decoding() {
  const auto vocab = test::tiny_vocab(6);
  int greedy_match = 0, reproducible = 0;
  Rng rng(5);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto mode = seed % 2 ? CondMode::SeedAttention : CondMode::SeedInput;
    const auto m = test::tiny_model(mode, vocab, 1000 + seed, 4, 1.5);
    const auto head = static_cast<TokenId>(4 + rng.below(6));
    const Ids ctx{static_cast<TokenId>(4 + rng.below(6)), static_cast<TokenId>(4 + rng.below(6))};
    const auto g = generate(m, head, ctx, GenerationConfig{1e-6, 12, seed});
    Vec cond = m.condition_vector(head, ctx);
    DecoderState dec(m, head, cond);
    Ids greedy;
    for (;;) {
      const auto& l = dec.logits();
      const auto tok = static_cast<TokenId>(std::max_element(l.begin(), l.end()) - l.begin());
      if (tok == Vocabulary::kEos) break;
      greedy.push_back(tok);
      if (greedy.size() >= 12) break;
      dec.advance(tok);
    }
    greedy_match += g.tokens == greedy;
    const GenerationConfig warm{1.0, 12, seed};
    const auto a = generate(m, head, ctx, warm), b = generate(m, head, ctx, warm);
    reproducible += a.tokens == b.tokens && test::bit_equal(a.token_logprobs, b.token_logprobs);
  }
  return {greedy_match == 100 && reproducible == 100,
          "tau=1e-6 equals greedy on " + std::to_string(greedy_match) + "/100 models, fixed-seed reruns identical on " +
              std::to_string(reproducible) + "/100"};
}

Outcome bleu_oracle() {
  std::ifstream in(std::string(DEFMOD_FIXTURES) + "/bleu_pairs.tsv");
  if (!in) return {false, "fixture file missing"};
  std::vector<Tokens> hyps, refs;
  std::vector<double> expect;
  double corpus_expect = NAN;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    if (cols.size() != 3) return {false, "malformed fixture line"};
    if (cols[0] == "#corpus") {
      corpus_expect = std::stod(cols[2]);
      continue;
    }
    hyps.push_back(tokenize(cols[0]));
    refs.push_back(tokenize(cols[1]));
    expect.push_back(std::stod(cols[2]));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const std::vector<Tokens> h{hyps[i]}, r{refs[i]};
    worst = std::max(worst, std::abs(bleu_corpus(h, r) - expect[i]));
  }
  const double corpus_dev = std::abs(bleu_corpus(hyps, refs) - corpus_expect);
  const std::vector<Tokens> same{tokenize("a person who is very important")};
  const std::vector<Tokens> ha{tokenize("da0 da1 da2 da3 da4 da5")}, hb{tokenize("db0 db1 db2 db3 db4 db5")};
  const double identity = bleu_corpus(same, same), disjoint = bleu_corpus(ha, hb);
  const bool ok = hyps.size() == 20 && worst < 1e-6 && corpus_dev < 1e-6 && identity == 100.0 && disjoint == 0.0;
  return {ok, std::to_string(hyps.size()) + " pairs, max dev " + num(worst) + ", corpus dev " + num(corpus_dev) +
                  ", identity " + num(identity) + ", disjoint " + num(disjoint)};
}

Outcome perplexity_identity() {
  const auto big = test::tiny_vocab(96);
  auto uniform = test::tiny_model(CondMode::Seed, big, 6);
  std::fill(uniform.proj_w.value.begin(), uniform.proj_w.value.end(), 0.0);
  std::fill(uniform.proj_b.value.begin(), uniform.proj_b.value.end(), 0.0);
  const std::vector<EncodedEntry> data{{big.id("x1"), {big.id("x5"), big.id("x9")}, {}}, {big.id("x2"), {big.id("x7")}, {}}};
  const double p_uniform = perplexity(uniform, data);

  const auto small = test::tiny_vocab(2);
  auto hand = test::tiny_model(CondMode::None, small, 7);
  std::fill(hand.proj_w.value.begin(), hand.proj_w.value.end(), 0.0);
  hand.proj_b.value = {0.0, 0.0, 0.0, 1.0, 2.0, -1.0};
  const std::vector<EncodedEntry> two{{4, {4, 5}, {}}, {5, {4}, {}}};
  const double z = std::log(3.0 + std::exp(1.0) + std::exp(2.0) + std::exp(-1.0));
  const double expect = std::exp(((z - 2.0) + (z + 1.0) + (z - 1.0) + (z - 2.0) + (z - 1.0)) / 5.0);
  const double p_hand = perplexity(hand, two);
  const bool ok = std::abs(p_uniform - 100.0) <= 1e-9 && std::abs(p_hand - expect) <= 1e-9;
  return {ok, "uniform |V|=100 gives " + num(p_uniform, 15) + ", hand-set logits " + num(p_hand, 15) + " vs " +
                  num(expect, 15)};
}

Outcome elbo_monotone() {
  auto toy = test::make_toy_adagram(8);
  double prev = test::optimal_elbo(toy.data, toy.model);
  const double start = prev;
  double worst_drop = 0.0, worst_mismatch = 0.0;
  for (int epoch = 0; epoch < 10; ++epoch) {
    const auto r = svi_full_batch_epoch(toy.data, toy.model, 0.5);
    worst_mismatch = std::max(worst_mismatch, std::abs(r.elbo - test::elbo_by_enumeration(toy.data, r.q, toy.model)));
    const double now = test::optimal_elbo(toy.data, toy.model);
    worst_drop = std::max(worst_drop, prev - now);
    prev = now;
  }
  const bool ok = worst_drop <= 1e-9 && worst_mismatch <= 1e-9;
  return {ok, "|V|=6, K=2, 50 pairs: ELBO " + num(start, 6) + " -> " + num(prev, 6) + ", largest drop " +
                  num(std::max(0.0, worst_drop)) + ", library vs enumeration " + num(worst_mismatch)};
}

// Synthetic benchmark shared by criteria 9-11.
struct Bench {
  fs::path dir;
  SyntheticData data;
};

Bench make_bench(const fs::path& root, std::uint64_t seed) {
  Bench b{root / ("seed" + std::to_string(seed)), {}};
  std::ostringstream sink;
  RunConfig c;
  c.set("output-dir", b.dir.string());
  c.set("seed", std::to_string(seed));
  run_subcommand("synth", c, sink);
  SyntheticPolysemySpec spec;
  spec.seed = component_seed(seed, "synth");
  b.data = make_synthetic(spec);
  return b;
}

std::vector<Bench> benches;
std::vector<fs::path> attention_models;

Outcome disambiguation(const fs::path& root) {
  std::vector<double> acc, active;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    benches.push_back(make_bench(root, seed));
    const auto& b = benches.back();
    // The files on disk and the in-memory copy must agree before labels are trusted.
    if (parse_definitions(b.dir / "test.jsonl") != b.data.test.entries) return {false, "synthetic data mismatch"};
    std::ostringstream sink;
    RunConfig c;
    c.set("corpus", (b.dir / "corpus.txt").string());
    c.set("output", (b.dir / "adagram.ckpt").string());
    c.set("dim", "32");
    c.set("epochs", "3");
    c.set("subsample", "0");
    c.set("seed", std::to_string(seed));
    run_subcommand("train-adagram", c, sink);
    Vocabulary vocab;
    const auto model = SenseEmbeddings::load(Checkpoint::load(b.dir / "adagram.ckpt"), &vocab);
    const TokenId w = vocab.id(b.data.spec.pseudoword);
    std::size_t on = 0;
    for (std::size_t k = 0; k < model.max_senses(); ++k) on += model.active(w, k);
    // Sense indices are arbitrary; score the best one-to-one sense/label mapping.
    std::map<std::pair<int, std::size_t>, int> hits;
    const auto& test_split = b.data.test;
    for (std::size_t i = 0; i < test_split.entries.size(); ++i)
      ++hits[{test_split.labels[i], disambiguate(w, vocab.encode(test_split.entries[i].context), model).sense}];
    int best = 0;
    for (std::size_t s0 = 0; s0 < model.max_senses(); ++s0)
      for (std::size_t s1 = 0; s1 < model.max_senses(); ++s1)
        if (s0 != s1) best = std::max(best, hits[{0, s0}] + hits[{1, s1}]);
    acc.push_back(static_cast<double>(best) / static_cast<double>(test_split.entries.size()));
    active.push_back(static_cast<double>(on));
    per_seed += (per_seed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": " +
                num(100 * acc.back()) + "% of " + std::to_string(test_split.entries.size()) + ", " +
                std::to_string(on) + " senses";
  }
  const bool ok = median(acc) >= 0.9 && median(active) == 2.0;
  return {ok, "median accuracy " + num(100 * median(acc)) + "%, median active senses " + num(median(active)) + " (" +
                  per_seed + ")"};
}

nlohmann::json train_and_eval(const Bench& b, std::uint64_t seed, const std::string& mode, const fs::path& out) {
  std::ostringstream sink;
  RunConfig c;
  c.set("train", (b.dir / "train.jsonl").string());
  c.set("val", (b.dir / "val.jsonl").string());
  c.set("attention", (b.dir / "attention.ckpt").string());
  c.set("mode", mode);
  c.set("emb-dim", "32");
  c.set("hidden", "64");
  c.set("lr", "0.005");
  c.set("epochs", "12");
  c.set("output", out.string());
  c.set("seed", std::to_string(seed));
  run_subcommand("train-def", c, sink);
  RunConfig e;
  e.set("model", out.string());
  e.set("split", "test");
  e.set("trials", "3");
  e.set("seed", std::to_string(seed));
  std::ostringstream report;
  run_subcommand("eval", e, report);
  return nlohmann::json::parse(report.str());
}

Outcome directional() {
  if (benches.size() != 3) return {false, "benchmark data unavailable"};
  std::vector<double> d_ppl, d_bleu;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto& b = benches[seed - 1];
    std::ostringstream sink;
    RunConfig c;
    c.set("corpus", (b.dir / "corpus.txt").string());
    c.set("output", (b.dir / "attention.ckpt").string());
    c.set("dim", "32");
    c.set("epochs", "3");
    c.set("subsample", "0");
    c.set("seed", std::to_string(seed));
    run_subcommand("pretrain-attention", c, sink);
    const auto plain = train_and_eval(b, seed, "S+I", b.dir / "si.ckpt");
    const auto att = train_and_eval(b, seed, "S+I-Attention", b.dir / "si_att.ckpt");
    attention_models.push_back(b.dir / "si_att.ckpt");
    const double p0 = plain["perplexity"], p1 = att["perplexity"];
    const double b0 = plain["bleu_mean"], b1 = att["bleu_mean"];
    d_ppl.push_back(p0 - p1);
    d_bleu.push_back(b1 - b0);
    per_seed += (per_seed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": PPL " + num(p0, 4) +
                " vs " + num(p1, 4) + ", BLEU " + plain["bleu"].get<std::string>() + " vs " +
                att["bleu"].get<std::string>();
  }
  const bool ok = median(d_ppl) > 0.0 && median(d_bleu) > 0.0;
  return {ok, "S+I vs S+I-Attention, median PPL gain " + num(median(d_ppl)) + ", median BLEU gain " +
                  num(median(d_bleu)) + " (" + per_seed + ")"};
}

Outcome qualitative() {
  if (attention_models.size() != 3) return {false, "trained S+I-Attention models unavailable"};
  std::vector<double> rates;
  std::string per_seed;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto model = DefinitionModel::load(Checkpoint::load(attention_models[s]));
    const auto& b = benches[s];
    const auto& vocab = model.vocab();
    const TokenId w = vocab.id(b.data.spec.pseudoword);
    Rng rng(component_seed(s + 1, "qualitative"));
    double worst = 1.0;
    std::string rates_text;
    for (int sense = 0; sense < 2; ++sense) {
      // 50 sampled generations, each from a fresh held-out context of this sense.
      std::vector<const DefinitionEntry*> contexts;
      for (std::size_t i = 0; i < b.data.test.entries.size(); ++i)
        if (b.data.test.labels[i] == sense) contexts.push_back(&b.data.test.entries[i]);
      int correct = 0;
      for (int g = 0; g < 50; ++g) {
        const auto& e = *contexts[static_cast<std::size_t>(g) % contexts.size()];
        const auto out = generate(model, w, vocab.encode(e.context), GenerationConfig{0.1, 30, 1}, rng);
        correct += vocab.decode(out.tokens) == b.data.spec.templates[static_cast<std::size_t>(sense)];
      }
      worst = std::min(worst, correct / 50.0);
      rates_text += (rates_text.empty() ? "" : "/") + std::to_string(correct);
    }
    rates.push_back(worst);
    per_seed += (per_seed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(s + 1) + ": " + rates_text;
  }
  const bool ok = median(rates) >= 0.8;
  return {ok, "median worst-sense template rate " + num(100 * median(rates)) + "% (" + per_seed +
                  " correct of 50 per sense)"};
}

}  // namespace

int main() {
  test::TempDir root("acceptance");
  report(1, "normalization suite", 10, normalization);
  report(2, "gradient suite", 120, gradients);
  report(3, "factorization oracle", 30, factorization);
  report(4, "zero conditioning equals the unconditional model", 10, zero_conditioning);
  report(5, "decoding", 30, decoding);
  report(6, "BLEU oracle", 5, bleu_oracle);
  report(7, "perplexity identity", 5, perplexity_identity);
  report(8, "AdaGram ELBO monotonicity", 60, elbo_monotone);
  report(9, "disambiguation accuracy", 300, [&] { return disambiguation(root.path()); });
  report(10, "directional benchmark ordering", 900, directional);
  report(11, "sense-correct generations", 120, qualitative);

  const char* oxford = std::getenv("DEFMOD_OXFORD_TRAIN");
  if (!oxford || !*oxford) {
    std::cout << "SKIP [12] full-data statistics: set DEFMOD_OXFORD_TRAIN to the Oxford-format train.jsonl to run"
              << std::endl;
  } else {
    report(12, "full-data statistics", 600, [&]() -> Outcome {
      std::ostringstream out;
      RunConfig c;
      c.set("input", oxford);
      c.set("output-dir", (root.path() / "oxford").string());
      run_subcommand("prepare", c, out);
      const auto s = nlohmann::json::parse(out.str());
      const std::uint64_t words = s["words"], entries = s["entries"], tokens = s["tokens"];
      const double avg = s["avg_length"];
      char avg_text[32];
      std::snprintf(avg_text, sizeof avg_text, "%.2f", avg);
      const bool ok = words == 33128 && entries == 97855 && tokens == 1078828 && std::string(avg_text) == "11.03";
      return {ok, std::to_string(words) + " / " + std::to_string(entries) + " / " + std::to_string(tokens) + " / " +
                      avg_text};
    });
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
