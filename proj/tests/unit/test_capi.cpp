#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>

#include "defmod/defmod.h"
#include "doctest.h"
#include "support.hpp"

namespace {

void collect(const char* text, size_t len, void* user) { static_cast<std::string*>(user)->append(text, len); }

struct Config {
  dm_config* ptr = nullptr;
  Config() { REQUIRE(dm_config_new(&ptr) == DM_OK); }
  ~Config() { dm_config_free(ptr); }
  void set(const char* k, const std::string& v) { REQUIRE(dm_config_set(ptr, k, v.c_str()) == DM_OK); }
};

}  // namespace

TEST_CASE("registry describes every subcommand") {
  CHECK(std::strlen(dm_version()) > 0);
  REQUIRE(dm_subcommand_count() == 11);
  bool saw_train_def = false;
  for (int i = 0; i < dm_subcommand_count(); ++i) {
    const std::string name = dm_subcommand_name(i);
    CHECK(std::strlen(dm_subcommand_help(i)) > 0);
    CHECK(dm_option_count(name.c_str()) > 0);
    saw_train_def |= name == "train-def";
  }
  CHECK(saw_train_def);
  CHECK(dm_subcommand_name(99) == nullptr);
  CHECK(dm_option_count("nope") == -1);

  const char *key, *def, *help;
  int required, is_flag;
  REQUIRE(dm_option_info("prepare", 0, &key, &def, &help, &required, &is_flag) == DM_OK);
  CHECK(std::string(key) == "input");
  CHECK(required == 1);
  CHECK(dm_option_info("prepare", 999, &key, &def, &help, &required, &is_flag) == DM_ERR_USAGE);
}

TEST_CASE("config handles") {
  Config c;
  const char* v = nullptr;
  CHECK(dm_config_get(c.ptr, "entries", &v) == DM_ERR_MISSING);
  c.set("entries", "12");
  REQUIRE(dm_config_get(c.ptr, "entries", &v) == DM_OK);
  CHECK(std::string(v) == "12");
  test::TempDir dir("capi-cfg");
  std::ofstream(dir / "x.ini") << "entries = 30\nsenses = 3\n";
  REQUIRE(dm_config_load(c.ptr, (dir / "x.ini").c_str()) == DM_OK);
  dm_config_get(c.ptr, "entries", &v);
  CHECK(std::string(v) == "30");
  CHECK(dm_config_load(c.ptr, (dir / "none.ini").c_str()) == DM_ERR_MISSING);
  CHECK(dm_config_set(nullptr, "a", "b") == DM_ERR_USAGE);
}

TEST_CASE("run reports through the sink and maps errors to status codes") {
  test::TempDir dir("capi-run");
  Config c;
  c.set("input", (dir / "missing.jsonl").string());
  std::string text;
  CHECK(dm_run("prepare", c.ptr, collect, &text) == DM_ERR_MISSING);
  CHECK(std::string(dm_last_error()).find("missing.jsonl") != std::string::npos);
  CHECK(dm_run("no-such", c.ptr, collect, &text) == DM_ERR_USAGE);

  std::ofstream(dir / "defs.jsonl") << R"({"word":"star","definition":"a bright sun","example":"a star"})" << "\n";
  c.set("input", (dir / "defs.jsonl").string());
  c.set("output-dir", (dir / "prep").string());
  REQUIRE(dm_run("prepare", c.ptr, collect, &text) == DM_OK);
  CHECK(text.find("\"entries\": 1") != std::string::npos);
}

TEST_CASE("models, senses and vectors through handles") {
  test::TempDir dir("capi-models");
  std::string sink;
  {
    Config c;
    c.set("output-dir", (dir / "data").string());
    c.set("entries", "60");
    c.set("corpus-sentences", "80");
    c.set("topic-size", "4");
    REQUIRE(dm_run("synth", c.ptr, collect, &sink) == DM_OK);
  }
  {
    Config c;
    c.set("corpus", (dir / "data" / "corpus.txt").string());
    c.set("output", (dir / "ada.ckpt").string());
    c.set("dim", "4");
    c.set("epochs", "1");
    c.set("max-senses", "2");
    c.set("export-senses", (dir / "senses.vec").string());
    REQUIRE(dm_run("train-adagram", c.ptr, collect, &sink) == DM_OK);
  }
  {
    Config c;
    c.set("train", (dir / "data" / "train.jsonl").string());
    c.set("val", (dir / "data" / "val.jsonl").string());
    c.set("mode", "S");
    c.set("emb-dim", "4");
    c.set("hidden", "4");
    c.set("layers", "1");
    c.set("epochs", "1");
    c.set("output", (dir / "def.ckpt").string());
    REQUIRE(dm_run("train-def", c.ptr, collect, &sink) == DM_OK);
  }

  dm_model* model = nullptr;
  CHECK(dm_model_load((dir / "nope.ckpt").c_str(), &model) == DM_ERR_MISSING);
  REQUIRE(dm_model_load((dir / "def.ckpt").c_str(), &model) == DM_OK);
  const char* mode = nullptr;
  REQUIRE(dm_model_mode(model, &mode) == DM_OK);
  CHECK(std::string(mode) == "S");
  char buf[512];
  size_t needed = 0;
  REQUIRE(dm_model_generate(model, "pseudo", "pseudo ta1", 0.5, 10, 3, buf, sizeof buf, &needed) == DM_OK);
  const std::string first = buf;
  CHECK(needed == first.size() + 1);
  REQUIRE(dm_model_generate(model, "pseudo", "pseudo ta1", 0.5, 10, 3, buf, sizeof buf, &needed) == DM_OK);
  CHECK(first == buf);
  CHECK(dm_model_generate(model, "pseudo", "", 0.5, 10, 3, buf, 0, &needed) == DM_ERR_USAGE);
  CHECK(needed == first.size() + 1);
  CHECK(dm_model_generate(model, "pseudo", "", 0.0, 10, 3, buf, sizeof buf, &needed) == DM_ERR_USAGE);
  double ppl = 0.0;
  REQUIRE(dm_model_perplexity(model, (dir / "data" / "test.jsonl").c_str(), &ppl) == DM_OK);
  CHECK(ppl > 1.0);
  dm_model_free(model);

  dm_senses* senses = nullptr;
  REQUIRE(dm_senses_load((dir / "ada.ckpt").c_str(), &senses) == DM_OK);
  size_t sense = 0, count = 0;
  double post[8];
  REQUIRE(dm_senses_disambiguate(senses, "pseudo", "ta1 ta2", &sense, post, 8, &count) == DM_OK);
  CHECK(count == 2);
  CHECK(sense >= 1);
  CHECK(post[0] + post[1] == doctest::Approx(1.0));
  dm_senses_free(senses);

  dm_vectors* vectors = nullptr;
  REQUIRE(dm_vectors_load((dir / "senses.vec").c_str(), &vectors) == DM_OK);
  REQUIRE(dm_vectors_neighbors(vectors, "ta1#1", 2, buf, sizeof buf, &needed) == DM_OK);
  const std::string nn = buf;
  CHECK(std::count(nn.begin(), nn.end(), '\n') == 2);
  CHECK(dm_vectors_neighbors(vectors, "zzz#1", 2, buf, sizeof buf, &needed) == DM_ERR_USAGE);
  dm_vectors_free(vectors);
}

TEST_CASE("bleu through the C API") {
  const char* hyps[] = {"a person who is very important"};
  const char* refs[] = {"a person who is very important"};
  double out = 0.0;
  REQUIRE(dm_bleu(hyps, refs, 1, &out) == DM_OK);
  CHECK(out == 100.0);
  const char* other[] = {"nothing in common here"};
  REQUIRE(dm_bleu(hyps, other, 1, &out) == DM_OK);
  CHECK(out == 0.0);
  CHECK(dm_bleu(hyps, refs, 1, nullptr) == DM_ERR_USAGE);
}
