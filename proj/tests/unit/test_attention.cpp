#include <algorithm>
#include <cmath>
#include <cstring>

#include "defmod/attention.hpp"
#include "defmod/error.hpp"
#include "defmod/evaluate.hpp"
#include "doctest.h"

using namespace defmod;

namespace {

AttentionBlock random_block(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  auto block = AttentionBlock::create(vocab, dim, rng, 0.5);
  for (auto* p : block.params()) p->fill_uniform(rng, -0.8, 0.8);
  return block;
}

bool bit_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double l1(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("mask examples") {
  auto block = random_block(10, 4, 1);
  std::fill(block.mask_w.value.begin(), block.mask_w.value.end(), 0.0);
  std::fill(block.mask_b.value.begin(), block.mask_b.value.end(), 0.0);
  const Ids ctx{5, 7, 9};
  CHECK(compute_mask(ctx, block) == Vec(4, 0.5));
  std::fill(block.mask_b.value.begin(), block.mask_b.value.end(), 50.0);
  for (double m : compute_mask(ctx, block)) CHECK(m > 1.0 - 1e-15);
}

TEST_CASE("mask is order invariant, duplication invariant and strictly inside (0,1)") {
  const auto block = random_block(12, 5, 2);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Ids ctx;
    for (int i = 0; i < 6; ++i) ctx.push_back(static_cast<TokenId>(4 + rng.below(8)));
    const auto m = compute_mask(ctx, block);
    for (double x : m) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
    Ids perm = ctx;
    std::reverse(perm.begin(), perm.end());
    std::rotate(perm.begin(), perm.begin() + 2, perm.end());
    CHECK(bit_equal(compute_mask(perm, block), m));
    Ids twice = ctx;
    twice.insert(twice.end(), ctx.begin(), ctx.end());
    const auto m2 = compute_mask(twice, block);
    for (std::size_t j = 0; j < m.size(); ++j) CHECK(std::abs(m2[j] - m[j]) < 1e-15);
  }
}

TEST_CASE("empty or reserved-only context falls back to sigmoid(b)") {
  const auto block = random_block(10, 3, 4);
  const Ids reserved{Vocabulary::kPad, Vocabulary::kUnk};
  for (const auto& ctx : {Ids{}, reserved}) {
    const auto m = compute_mask(ctx, block);
    for (std::size_t j = 0; j < 3; ++j) CHECK(m[j] == sigmoid(block.mask_b.value[j]));
  }
}

TEST_CASE("mask agrees with a direct evaluation") {
  const auto block = random_block(10, 3, 5);
  const Ids ctx{6, 4, 8};
  Vec pooled(3, 0.0);
  for (TokenId c : ctx)
    for (std::size_t r = 0; r < 3; ++r) {
      double s = block.ann_b.value[r];
      for (std::size_t j = 0; j < 3; ++j) s += block.ann_w(r, j) * block.context_emb(static_cast<std::size_t>(c), j);
      pooled[r] += std::tanh(s) / 3.0;
    }
  const auto m = compute_mask(ctx, block);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = block.mask_b.value[r];
    for (std::size_t j = 0; j < 3; ++j) s += block.mask_w(r, j) * pooled[j];
    CHECK(m[r] == doctest::Approx(1.0 / (1.0 + std::exp(-s))).epsilon(1e-14));
  }
}

TEST_CASE("apply_mask examples") {
  CHECK(apply_mask(Vec{2.0, -3.0}, Vec{0.5, 1.0}) == Vec{1.0, -3.0});
  const Vec v{0.1, -7.5, 3.25};
  CHECK(apply_mask(v, Vec(3, 1.0)) == v);
  CHECK(apply_mask(v, Vec(3, 0.0)) == Vec(3, 0.0));
  CHECK_THROWS_AS(apply_mask(v, Vec(2, 1.0)), Error);
}

TEST_CASE("zero parameters give 6 log 2 per pair") {
  Rng rng(6);
  auto m = AttentionSkipGram::create(12, 4, rng);
  for (auto* p : m.params()) std::fill(p->value.begin(), p->value.end(), 0.0);
  const Ids negs{6, 7, 8, 9, 10};
  CHECK(attention_ns_loss(m, 4, Ids{5, 11}, 5, negs) == doctest::Approx(6 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("attention skip-gram gradients match finite differences") {
  Rng rng(7);
  auto m = AttentionSkipGram::create(12, 4, rng);
  for (auto* p : m.params()) p->fill_uniform(rng, -0.7, 0.7);
  const Ids ctx{5, 9, 11, 5};
  const Ids negs{6, 7, 8, 10, 11};
  zero_grads(m.params());
  const double loss = attention_ns_backward(m, 4, ctx, 9, negs);
  CHECK(loss == doctest::Approx(attention_ns_loss(m, 4, ctx, 9, negs)));
  const auto r = grad_check([&] { return attention_ns_loss(m, 4, ctx, 9, negs); }, m.params(), {1e-5, 1000, 1});
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.checked == 3 * 12 * 4 + 2 * (4 * 4 + 4));
}

TEST_CASE("block checkpoint round trip") {
  const auto block = random_block(9, 3, 8);
  Checkpoint ck;
  block.save(ck, "att.");
  const auto back = AttentionBlock::load(ck, "att.");
  const Ids ctx{4, 6};
  CHECK(bit_equal(compute_mask(ctx, back), compute_mask(ctx, block)));
  CHECK_THROWS_AS(AttentionBlock::load(ck, "other."), Error);
}

TEST_CASE("mask csv format") {
  CHECK(mask_csv_header(2) == "word,context_hash,m1,m2");
  const std::vector<std::string> ctx{"a", "b"};
  const auto row = mask_csv_row("w", ctx, Vec{0.5, 0.25});
  CHECK(row.rfind("w,", 0) == 0);
  CHECK(row.find(",0.5,0.25") != std::string::npos);
}

TEST_CASE("pretrained masks separate the senses of the pseudoword") {
  SyntheticPolysemySpec spec;
  spec.topic_size = 8;
  spec.entries = 200;
  spec.corpus_sentences = 800;
  spec.sentence_length = 8;
  spec.seed = 9;
  const auto data = make_synthetic(spec);
  const auto vocab = Vocabulary::build(data.corpus, 1);
  std::vector<Ids> ids;
  for (const auto& s : data.corpus) ids.push_back(vocab.encode(s));
  AttentionPretrainConfig cfg;
  cfg.dim = 12;
  cfg.epochs = 2;
  cfg.subsample = 0.0;
  cfg.ns.window = 3;
  const auto res = pretrain_attention(ids, vocab, cfg);
  REQUIRE(res.epoch_loss.size() == 2);
  CHECK(res.epoch_loss[1] < res.epoch_loss[0]);

  std::vector<Vec> masks;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.test.entries.size(); ++i) {
    Ids ctx;
    for (const auto& t : data.test.entries[i].context)
      if (t != spec.pseudoword) ctx.push_back(vocab.id(t));
    masks.push_back(compute_mask(ctx, res.model.block));
    labels.push_back(data.test.labels[i]);
  }
  double within = 0, across = 0;
  int nw = 0, na = 0;
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = i + 1; j < masks.size(); ++j) {
      if (labels[i] == labels[j]) within += l1(masks[i], masks[j]), ++nw;
      else across += l1(masks[i], masks[j]), ++na;
    }
  REQUIRE(nw > 0);
  REQUIRE(na > 0);
  CHECK(across / na > within / nw);
}
