#include "defmod/defmod.h"

#include <cstring>
#include <iostream>
#include <sstream>
#include <string>

#include "defmod/adagram.hpp"
#include "defmod/checkpoint.hpp"
#include "defmod/config.hpp"
#include "defmod/defmodel.hpp"
#include "defmod/error.hpp"
#include "defmod/evaluate.hpp"
#include "defmod/pipeline.hpp"
#include "defmod/skipgram.hpp"

struct dm_config {
  defmod::RunConfig cfg;
};

struct dm_model {
  defmod::DefinitionModel model;
  std::string mode;
};

struct dm_senses {
  defmod::Vocabulary vocab;
  defmod::SenseEmbeddings model;
};

struct dm_vectors {
  defmod::VectorsFile vectors;
};

namespace {

thread_local std::string last_error;

template <typename F>
dm_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return DM_OK;
  } catch (const defmod::Error& e) {
    last_error = e.what();
    return static_cast<dm_status>(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return DM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return DM_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  defmod::require(p != nullptr, defmod::ErrorCode::Usage, std::string(what) + " must not be NULL");
}

void copy_out(const std::string& text, char* buf, std::size_t capacity, std::size_t* needed) {
  if (needed) *needed = text.size() + 1;
  defmod::require(buf != nullptr && capacity > text.size(), defmod::ErrorCode::Usage,
                  "output buffer too small (" + std::to_string(text.size() + 1) + " bytes needed)");
  std::memcpy(buf, text.c_str(), text.size() + 1);
}

const defmod::SubcommandSpec* spec_or_null(const char* name) {
  if (!name) return nullptr;
  for (const auto& s : defmod::subcommands())
    if (s.name == name) return &s;
  return nullptr;
}

}  // namespace

extern "C" {

const char* dm_version(void) { return "1.0.0"; }

const char* dm_last_error(void) { return last_error.c_str(); }

int dm_subcommand_count(void) { return static_cast<int>(defmod::subcommands().size()); }

const char* dm_subcommand_name(int index) {
  const auto& s = defmod::subcommands();
  return index >= 0 && index < static_cast<int>(s.size()) ? s[static_cast<std::size_t>(index)].name.c_str() : nullptr;
}

const char* dm_subcommand_help(int index) {
  const auto& s = defmod::subcommands();
  return index >= 0 && index < static_cast<int>(s.size()) ? s[static_cast<std::size_t>(index)].help.c_str() : nullptr;
}

int dm_option_count(const char* subcommand) {
  const auto* s = spec_or_null(subcommand);
  return s ? static_cast<int>(s->options.size()) : -1;
}

dm_status dm_option_info(const char* subcommand, int index, const char** key, const char** default_value,
                         const char** help, int* required, int* is_flag) {
  return guarded([&] {
    const auto& spec = defmod::find_subcommand(subcommand ? subcommand : "");
    defmod::require(index >= 0 && index < static_cast<int>(spec.options.size()), defmod::ErrorCode::Usage,
                    "option index out of range");
    const auto& o = spec.options[static_cast<std::size_t>(index)];
    if (key) *key = o.key.c_str();
    if (default_value) *default_value = o.default_value.c_str();
    if (help) *help = o.help.c_str();
    if (required) *required = o.required ? 1 : 0;
    if (is_flag) *is_flag = o.is_flag ? 1 : 0;
  });
}

dm_status dm_config_new(dm_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new dm_config;
  });
}

void dm_config_free(dm_config* cfg) { delete cfg; }

dm_status dm_config_set(dm_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

dm_status dm_config_get(const dm_config* cfg, const char* key, const char** value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    defmod::require(cfg->cfg.has(key), defmod::ErrorCode::Missing, std::string("no setting ") + key);
    *value = cfg->cfg.get(key).c_str();
  });
}

dm_status dm_config_load(dm_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "cfg");
    need(path, "path");
    cfg->cfg.merge(defmod::RunConfig::load(path));
  });
}

dm_status dm_run(const char* subcommand, const dm_config* cfg, dm_sink sink, void* user) {
  return guarded([&] {
    need(subcommand, "subcommand");
    const defmod::RunConfig empty;
    std::ostringstream out;
    defmod::run_subcommand(subcommand, cfg ? cfg->cfg : empty, out);
    const auto text = out.str();
    if (sink) sink(text.data(), text.size(), user);
    else std::cout << text << std::flush;
  });
}

dm_status dm_model_load(const char* path, dm_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto model = defmod::DefinitionModel::load(defmod::Checkpoint::load(path));
    const auto mode = defmod::to_string(model.mode());
    *out = new dm_model{std::move(model), mode};
  });
}

void dm_model_free(dm_model* model) { delete model; }

dm_status dm_model_mode(const dm_model* model, const char** mode) {
  return guarded([&] {
    need(model, "model");
    need(mode, "mode");
    *mode = model->mode.c_str();
  });
}

dm_status dm_model_generate(const dm_model* model, const char* word, const char* context, double temperature,
                            size_t max_length, uint64_t seed, char* buf, size_t capacity, size_t* needed) {
  return guarded([&] {
    need(model, "model");
    need(word, "word");
    const auto& vocab = model->model.vocab();
    const auto ctx = vocab.encode(defmod::tokenize(context ? context : ""));
    const defmod::GenerationConfig cfg{temperature, max_length, seed};
    const auto gen = defmod::generate(model->model, vocab.id(defmod::normalize_headword(word)), ctx, cfg);
    copy_out(defmod::join_tokens(vocab.decode(gen.tokens)), buf, capacity, needed);
  });
}

dm_status dm_model_perplexity(const dm_model* model, const char* path, double* out) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    need(out, "out");
    const auto entries = defmod::parse_definitions(path);
    *out = defmod::perplexity(model->model, defmod::encode_entries(entries, model->model.vocab()));
  });
}

dm_status dm_senses_load(const char* path, dm_senses** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    const auto ck = defmod::Checkpoint::load(path);
    defmod::require(ck.has_meta("kind") && ck.get_meta("kind") == "adagram", defmod::ErrorCode::Format,
                    std::string(path) + " is not an AdaGram checkpoint");
    auto* s = new dm_senses;
    try {
      s->model = defmod::SenseEmbeddings::load(ck, &s->vocab);
    } catch (...) {
      delete s;
      throw;
    }
    *out = s;
  });
}

void dm_senses_free(dm_senses* senses) { delete senses; }

dm_status dm_senses_disambiguate(const dm_senses* senses, const char* word, const char* context, size_t* sense,
                                 double* posterior, size_t capacity, size_t* count) {
  return guarded([&] {
    need(senses, "senses");
    need(word, "word");
    const auto id = senses->vocab.id(defmod::normalize_headword(word));
    const auto ctx = senses->vocab.encode(defmod::tokenize(context ? context : ""));
    const auto post = defmod::sense_posterior(id, ctx, senses->model);
    if (count) *count = post.probs.size();
    if (sense) *sense = defmod::disambiguate(id, ctx, senses->model).sense + 1;
    if (posterior)
      for (std::size_t k = 0; k < post.probs.size() && k < capacity; ++k) posterior[k] = post.probs[k];
  });
}

dm_status dm_vectors_load(const char* path, dm_vectors** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dm_vectors{defmod::read_vectors(path)};
  });
}

void dm_vectors_free(dm_vectors* vectors) { delete vectors; }

dm_status dm_vectors_neighbors(const dm_vectors* vectors, const char* word, size_t n, char* buf, size_t capacity,
                               size_t* needed) {
  return guarded([&] {
    need(vectors, "vectors");
    need(word, "word");
    std::string text;
    for (const auto& [token, cos] : defmod::nearest_neighbors(vectors->vectors, word, n))
      text += token + "\t" + defmod::format_double(cos) + "\n";
    copy_out(text, buf, capacity, needed);
  });
}

dm_status dm_bleu(const char* const* hypotheses, const char* const* references, size_t count, double* out) {
  return guarded([&] {
    need(out, "out");
    defmod::require(count == 0 || (hypotheses && references), defmod::ErrorCode::Usage, "sentence arrays are NULL");
    std::vector<defmod::Tokens> hyps, refs;
    auto split = [](const char* s) {
      defmod::Tokens t;
      std::istringstream in(s ? s : "");
      for (std::string w; in >> w;) t.push_back(w);
      return t;
    };
    for (std::size_t i = 0; i < count; ++i) {
      hyps.push_back(split(hypotheses[i]));
      refs.push_back(split(references[i]));
    }
    *out = defmod::bleu_corpus(hyps, refs);
  });
}

}  // extern "C"
