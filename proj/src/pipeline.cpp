#include "defmod/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "defmod/adagram.hpp"
#include "defmod/attention.hpp"
#include "defmod/checkpoint.hpp"
#include "defmod/corpus.hpp"
#include "defmod/defmodel.hpp"
#include "defmod/error.hpp"
#include "defmod/evaluate.hpp"
#include "defmod/skipgram.hpp"
#include "json.hpp"

namespace defmod {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

OptionSpec opt(std::string key, std::string def, std::string help) {
  return {std::move(key), std::move(def), std::move(help), false, false};
}
OptionSpec req(std::string key, std::string help) { return {std::move(key), "", std::move(help), true, false}; }
OptionSpec flag(std::string key, std::string help) { return {std::move(key), "false", std::move(help), false, true}; }

std::vector<OptionSpec> ns_options() {
  return {opt("dim", "100", "embedding width"),
          opt("window", "5", "context window radius"),
          opt("negatives", "5", "negative samples per positive"),
          opt("noise-power", "0.75", "exponent of the unigram noise distribution"),
          opt("epochs", "5", "passes over the corpus"),
          opt("lr", "0.025", "initial SGD learning rate (decays linearly)"),
          opt("min-lr", "0.0001", "final SGD learning rate"),
          opt("subsample", "1e-5", "frequent-word subsampling threshold (0 disables)")};
}

std::vector<OptionSpec> model_options(const std::string& mode) {
  return {opt("mode", mode, "conditioning: NONE, S, S+I, S+I-Adaptive or S+I-Attention"),
          opt("emb-dim", "100", "token embedding width"),
          opt("hidden", "256", "LSTM width"),
          opt("layers", "2", "LSTM layers"),
          opt("dropout", "0.3", "dropout between LSTM layers"),
          opt("init-scale", "0.05", "uniform init range for recurrent and projection weights"),
          opt("lr", "0.001", "Adam learning rate"),
          opt("epochs", "10", "training epochs"),
          opt("batch-size", "32", "sequences per minibatch"),
          opt("clip", "5", "global gradient-norm clip"),
          flag("verbose", "log every epoch to stderr")};
}

std::vector<SubcommandSpec> build_specs() {
  std::vector<SubcommandSpec> specs;
  auto add = [&](std::string name, std::string help, std::vector<OptionSpec> options) {
    options.push_back(opt("seed", "1", "run seed, split per component"));
    specs.push_back({std::move(name), std::move(help), std::move(options)});
  };
  auto cat = [](std::vector<OptionSpec> a, const std::vector<OptionSpec>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  add("prepare", "build the vocabulary and dataset statistics",
      {req("input", "definitions file (JSON Lines)"),
       opt("corpus", "", "optional plain-text corpus added to the vocabulary"),
       opt("min-count", "1", "minimum token count"),
       opt("max-size", "0", "keep at most this many tokens (0 = unlimited)"),
       opt("output-dir", "prepared", "directory for vocab.txt, stats.json and config.ini")});
  add("synth", "write the synthetic polysemy benchmark",
      {opt("output-dir", "synthetic", "destination directory"),
       opt("pseudoword", "pseudo", "the ambiguous word"),
       opt("senses", "2", "number of senses"),
       opt("topic-size", "30", "topic words per sense"),
       opt("context-length", "5", "tokens per example context"),
       opt("entries", "2000", "definition entries across all splits"),
       opt("template-length", "6", "tokens per definition template"),
       opt("corpus-sentences", "4000", "pretraining corpus sentences"),
       opt("sentence-length", "10", "tokens per corpus sentence"),
       opt("val-fraction", "0.1", "share of entries in the validation split"),
       opt("test-fraction", "0.1", "share of entries in the test split")});
  add("train-skipgram", "train single-sense skip-gram vectors with negative sampling",
      cat({req("corpus", "plain-text corpus"),
           opt("vocab", "", "vocabulary file (built from the corpus when empty)"),
           opt("min-count", "1", "minimum count when building the vocabulary"),
           opt("output", "skipgram.vec", "vectors file")},
          ns_options()));
  add("train-adagram", "train multi-sense AdaGram embeddings",
      {req("corpus", "plain-text corpus"),
       opt("vocab", "", "vocabulary file (built from the corpus when empty)"),
       opt("min-count", "1", "minimum count when building the vocabulary"),
       opt("output", "adagram.ckpt", "checkpoint file"),
       opt("dim", "100", "sense vector width"),
       opt("max-senses", "5", "truncation level K"),
       opt("alpha", "0.1", "Dirichlet process concentration"),
       opt("window", "5", "context window radius"),
       opt("epochs", "5", "passes over the corpus"),
       opt("lr", "0.025", "initial vector learning rate (decays linearly)"),
       opt("min-lr", "0.0001", "final vector learning rate"),
       opt("subsample", "1e-5", "frequent-word subsampling threshold (0 disables)"),
       opt("tau0", "1", "SVI step offset"),
       opt("kappa", "0.7", "SVI step decay exponent"),
       opt("init-noise", "0.01", "per-sense noise relative to the initial vector norm"),
       opt("init-vectors", "", "single-sense vectors used to initialise every sense"),
       opt("init-senses", "", "\"#k\" sense vectors to start from"),
       opt("prune-threshold", "0.05", "deactivate senses with smaller prior (0 keeps all)"),
       opt("export-senses", "", "also write \"#k\" sense vectors here")});
  add("pretrain-attention", "pretrain the attention block with attention skip-gram",
      cat({req("corpus", "plain-text corpus"),
           opt("vocab", "", "vocabulary file (built from the corpus when empty)"),
           opt("min-count", "1", "minimum count when building the vocabulary"),
           opt("output", "attention.ckpt", "checkpoint file"),
           opt("init-vectors", "", "vectors used to initialise the anchor embeddings"),
           flag("freeze-embeddings", "keep the anchor embeddings fixed")},
          ns_options()));
  add("pretrain-lm", "unconditional language-model pretraining with zero conditioning",
      cat({req("corpus", "plain-text corpus"),
           opt("vocab", "", "vocabulary file (built from the corpus when empty)"),
           opt("min-count", "1", "minimum count when building the vocabulary"),
           opt("val-corpus", "", "validation corpus (default: hold out val-fraction of the corpus)"),
           opt("val-fraction", "0.05", "held-out share when no validation corpus is given"),
           opt("cond-dim", "100", "conditioning width the model will be fine-tuned with"),
           opt("init-vectors", "", "vectors used to initialise token embeddings"),
           opt("output", "lm.ckpt", "checkpoint file")},
          model_options("S+I-Attention")));
  add("train-def", "train a definition model",
      cat({req("train", "training definitions (JSON Lines)"),
           req("val", "validation definitions (JSON Lines)"),
           opt("vocab", "", "vocabulary file (default: from a conditioning checkpoint, else the training data)"),
           opt("min-count", "1", "minimum count when building the vocabulary"),
           opt("adagram", "", "AdaGram checkpoint (S+I-Adaptive)"),
           opt("attention", "", "attention checkpoint (S+I-Attention; also supplies S+I word vectors)"),
           opt("vectors", "", "word vectors for S+I conditioning and embedding initialisation"),
           opt("init-lm", "", "pretrained language-model checkpoint"),
           opt("cond-dim", "0", "conditioning width (0 = from the conditioning source)"),
           flag("fine-tune-attention", "update the attention block and word vectors end to end"),
           flag("exclude-headword", "drop the headword from its own context"),
           opt("output", "def.ckpt", "checkpoint file")},
          model_options("S+I-Attention")));
  add("eval", "perplexity and multi-trial BLEU on a split",
      {req("model", "definition model checkpoint"),
       opt("data", "", "definitions file (default: <split>.jsonl beside the training file)"),
       opt("split", "test", "split name"),
       opt("trials", "3", "BLEU trials, one seed each"),
       opt("temperature", "0.1", "sampling temperature"),
       opt("max-length", "30", "maximum generated tokens"),
       opt("model-id", "", "row label (default: the conditioning mode)"),
       opt("format", "json", "json or table"),
       opt("output", "", "also write the JSON report here")});
  add("generate", "sample definitions",
      {req("model", "definition model checkpoint"),
       opt("word", "", "headword"),
       opt("context", "", "example of use"),
       opt("input", "", "JSON Lines with word and example fields (instead of --word)"),
       opt("temperature", "0.1", "sampling temperature"),
       opt("max-length", "30", "maximum generated tokens"),
       opt("samples", "1", "definitions per input"),
       opt("format", "text", "text or jsonl")});
  add("disambiguate", "sense posterior (AdaGram) or attention mask for a word in context",
      {req("model", "AdaGram, attention or S+I-Attention checkpoint"),
       opt("word", "", "headword"),
       opt("context", "", "example of use"),
       opt("input", "", "JSON Lines with word and example fields (instead of --word)")});
  add("neighbors", "nearest neighbours by cosine similarity",
      {req("vectors", "vectors file"), req("word", "query token"), opt("n", "10", "neighbours to list")});
  return specs;
}

// ---------------------------------------------------------------------------

std::string fmt(double x) { return format_double(x); }

std::string with_suffix(const fs::path& p, const std::string& suffix) { return p.string() + suffix; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Missing, "cannot write " + path.string());
  out << text;
}

void save_config(const RunConfig& cfg, const fs::path& path, const std::string& note = {}) {
  write_text(path, note + cfg.serialize());
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ck.save(path);
}

std::uint64_t seed_for(const RunConfig& cfg, std::string_view component) {
  return component_seed(cfg.get_u64("seed"), component);
}

std::vector<Ids> encode_sentences(std::span<const Tokens> sentences, const Vocabulary& vocab) {
  std::vector<Ids> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(vocab.encode(s));
  return out;
}

Vocabulary vocab_for(const RunConfig& cfg, std::span<const Tokens> fallback_streams) {
  if (!cfg.get("vocab").empty()) return Vocabulary::load(cfg.get("vocab"));
  return Vocabulary::build(fallback_streams, cfg.get_u64("min-count"));
}

NegSamplingConfig ns_config(const RunConfig& cfg) {
  NegSamplingConfig ns;
  ns.negatives = static_cast<int>(cfg.get_int("negatives"));
  ns.window = static_cast<int>(cfg.get_int("window"));
  ns.noise_power = cfg.get_double("noise-power");
  require(ns.negatives >= 1 && ns.window >= 1, ErrorCode::Usage, "negatives and window must be >= 1");
  return ns;
}

// Rows absent from the file keep their uniform(-0.5/d, 0.5/d) initialisation.
ParamTensor vectors_table(const fs::path& path, const Vocabulary& vocab, std::size_t dim, Rng& rng,
                          std::size_t* copied = nullptr) {
  const auto vf = read_vectors(path);
  require(vf.dim == dim, ErrorCode::Format,
          "vectors in " + path.string() + " have dimension " + std::to_string(vf.dim) + ", expected " +
              std::to_string(dim));
  ParamTensor t("init", vocab.size(), dim);
  const double r = 0.5 / static_cast<double>(dim);
  t.fill_uniform(rng, -r, r);
  const auto n = import_vectors(vf, vocab, t);
  if (copied) *copied = n;
  return t;
}

const std::string kUnkNote = "# <unk> targets count toward the training loss\n";

struct AttentionCheckpoint {
  Vocabulary vocab;
  AttentionBlock block;
  ParamTensor word_emb;
};

AttentionCheckpoint load_attention(const fs::path& path) {
  const auto ck = Checkpoint::load(path);
  require(ck.has_meta("kind") && ck.get_meta("kind") == "attention", ErrorCode::Format,
          path.string() + " is not an attention checkpoint");
  AttentionCheckpoint a;
  a.vocab = Vocabulary::deserialize(ck.get_meta("vocab"));
  a.block = AttentionBlock::load(ck, "att.");
  a.word_emb = ParamTensor("word_emb", a.vocab.size(), a.block.dim());
  ck.get("attn.", a.word_emb);
  return a;
}

struct Query {
  std::string word;
  Tokens context;
  std::string context_text;
};

std::vector<Query> read_queries(const RunConfig& cfg) {
  std::vector<Query> out;
  if (!cfg.get("input").empty()) {
    std::ifstream in(cfg.get("input"), std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Missing, "cannot open " + cfg.get("input"));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = "line " + std::to_string(line_no);
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        fail(ErrorCode::Format, where + ": " + e.what());
      }
      for (const char* f : {"word", "example"})
        require(j.is_object() && j.contains(f) && j[f].is_string(), ErrorCode::Format,
                where + ": missing field \"" + f + "\"");
      const auto ex = j["example"].get<std::string>();
      out.push_back({normalize_headword(j["word"].get<std::string>()), tokenize(ex), ex});
    }
    return out;
  }
  require(!cfg.get("word").empty(), ErrorCode::Usage, "either --word or --input is required");
  out.push_back({normalize_headword(cfg.get("word")), tokenize(cfg.get("context")), cfg.get("context")});
  return out;
}

void print_history(std::ostream& out, const TrainHistory& h) {
  for (const auto& e : h.epochs)
    out << "epoch " << e.epoch << " train_ppl " << fmt(e.train_ppl) << " val_ppl " << fmt(e.val_ppl) << " lr "
        << fmt(e.lr) << '\n';
  out << "best epoch " << h.best_epoch << " val_ppl " << fmt(h.best_val_ppl) << '\n';
}

std::string history_json(const TrainHistory& h) {
  json j;
  j["best_epoch"] = h.best_epoch;
  j["best_val_ppl"] = h.best_val_ppl;
  j["epochs"] = json::array();
  for (const auto& e : h.epochs)
    j["epochs"].push_back({{"epoch", e.epoch}, {"train_ppl", e.train_ppl}, {"val_ppl", e.val_ppl}, {"lr", e.lr}});
  return j.dump(2) + "\n";
}

DefModelConfig model_config(const RunConfig& cfg) {
  DefModelConfig m;
  m.mode = parse_cond_mode(cfg.get("mode"));
  m.emb_dim = cfg.get_size("emb-dim");
  m.hidden = cfg.get_size("hidden");
  m.layers = cfg.get_size("layers");
  m.dropout = cfg.get_double("dropout");
  m.init_scale = cfg.get_double("init-scale");
  require(m.layers >= 1 && m.layers <= 3, ErrorCode::Usage, "layers must be 1, 2 or 3");
  return m;
}

TrainConfig train_config(const RunConfig& cfg, std::string_view component) {
  TrainConfig t;
  t.adam.lr = cfg.get_double("lr");
  t.epochs = static_cast<int>(cfg.get_int("epochs"));
  t.batch_size = cfg.get_size("batch-size");
  t.clip = cfg.get_double("clip");
  t.verbose = cfg.get_bool("verbose");
  t.seed = seed_for(cfg, component);
  return t;
}

// ---------------------------------------------------------------------------

void cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  const auto defs = parse_definitions(cfg.get("input"));
  auto streams = entry_streams(defs);
  if (!cfg.get("corpus").empty())
    for (auto& s : read_corpus(cfg.get("corpus"))) streams.push_back(std::move(s));
  const auto max_size = cfg.get_size("max-size");
  const auto vocab = Vocabulary::build(streams, cfg.get_u64("min-count"),
                                       max_size ? std::optional<std::size_t>(max_size) : std::nullopt);
  const auto st = stats(defs);
  const fs::path dir = cfg.get("output-dir");
  fs::create_directories(dir);
  vocab.save(dir / "vocab.txt");
  json j;
  j["words"] = st.words;
  j["entries"] = st.entries;
  j["tokens"] = st.tokens;
  j["avg_length"] = st.avg_length;
  j["vocab_size"] = vocab.size();
  const auto report = j.dump(2) + "\n";
  write_text(dir / "stats.json", report);
  save_config(cfg, dir / "config.ini");
  out << report;
}

void cmd_synth(const RunConfig& cfg, std::ostream& out) {
  SyntheticPolysemySpec spec;
  spec.pseudoword = cfg.get("pseudoword");
  spec.senses = static_cast<int>(cfg.get_int("senses"));
  spec.topic_size = static_cast<int>(cfg.get_int("topic-size"));
  spec.context_length = static_cast<int>(cfg.get_int("context-length"));
  spec.entries = static_cast<int>(cfg.get_int("entries"));
  spec.template_length = static_cast<int>(cfg.get_int("template-length"));
  spec.corpus_sentences = static_cast<int>(cfg.get_int("corpus-sentences"));
  spec.sentence_length = static_cast<int>(cfg.get_int("sentence-length"));
  spec.val_fraction = cfg.get_double("val-fraction");
  spec.test_fraction = cfg.get_double("test-fraction");
  spec.seed = seed_for(cfg, "synth");
  const auto data = make_synthetic(spec);
  const fs::path dir = cfg.get("output-dir");
  write_synthetic(data, dir);
  save_config(cfg, dir / "config.ini");
  out << "train " << data.train.entries.size() << " val " << data.val.entries.size() << " test "
      << data.test.entries.size() << " corpus " << data.corpus.size() << '\n';
}

void cmd_train_skipgram(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = read_corpus(cfg.get("corpus"));
  const auto vocab = vocab_for(cfg, corpus);
  SkipGramConfig sg;
  sg.dim = cfg.get_size("dim");
  sg.ns = ns_config(cfg);
  sg.epochs = static_cast<int>(cfg.get_int("epochs"));
  sg.lr = cfg.get_double("lr");
  sg.min_lr = cfg.get_double("min-lr");
  sg.subsample = cfg.get_double("subsample");
  sg.seed = seed_for(cfg, "skipgram");
  const auto res = train_skipgram(encode_sentences(corpus, vocab), vocab, sg);
  const fs::path output = cfg.get("output");
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  write_vectors(output, table_to_vectors(res.table.in, vocab));
  save_config(cfg, with_suffix(output, ".ini"));
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e)
    out << "epoch " << e + 1 << " loss " << fmt(res.epoch_loss[e]) << '\n';
}

void cmd_train_adagram(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = read_corpus(cfg.get("corpus"));
  const auto vocab = vocab_for(cfg, corpus);
  AdaGramConfig ag;
  ag.dim = cfg.get_size("dim");
  ag.max_senses = cfg.get_size("max-senses");
  ag.alpha = cfg.get_double("alpha");
  ag.window = static_cast<int>(cfg.get_int("window"));
  ag.epochs = static_cast<int>(cfg.get_int("epochs"));
  ag.lr = cfg.get_double("lr");
  ag.min_lr = cfg.get_double("min-lr");
  ag.subsample = cfg.get_double("subsample");
  ag.tau0 = cfg.get_double("tau0");
  ag.kappa = cfg.get_double("kappa");
  ag.init_noise = cfg.get_double("init-noise");
  ag.seed = seed_for(cfg, "adagram");
  require(ag.max_senses >= 1 && ag.dim >= 1 && ag.alpha > 0.0, ErrorCode::Usage,
          "max-senses and dim must be >= 1 and alpha > 0");
  require(cfg.get("init-vectors").empty() || cfg.get("init-senses").empty(), ErrorCode::Usage,
          "--init-vectors and --init-senses are mutually exclusive");
  const auto sentences = encode_sentences(corpus, vocab);

  AdaGramResult res;
  if (!cfg.get("init-senses").empty()) {
    Rng rng(seed_for(cfg, "adagram-import"));
    SenseEmbeddings model(vocab, ag.max_senses, ag.dim, ag.alpha);
    model.init_vectors(rng);
    const auto vf = read_vectors(cfg.get("init-senses"));
    require(vf.dim == ag.dim, ErrorCode::Format, "sense vectors have dimension " + std::to_string(vf.dim) +
                                                     ", expected " + std::to_string(ag.dim));
    const auto n = import_sense_vectors(vf, vocab, model);
    out << "imported " << n << " sense vectors\n";
    res = train_adagram(sentences, vocab, ag, std::move(model));
  } else if (!cfg.get("init-vectors").empty()) {
    Rng rng(seed_for(cfg, "adagram-import"));
    const auto base = vectors_table(cfg.get("init-vectors"), vocab, ag.dim, rng);
    res = train_adagram(sentences, vocab, ag, &base);
  } else {
    res = train_adagram(sentences, vocab, ag);
  }
  for (std::size_t e = 0; e < res.epoch_elbo.size(); ++e)
    out << "epoch " << e + 1 << " elbo " << fmt(res.epoch_elbo[e]) << '\n';

  const double threshold = cfg.get_double("prune-threshold");
  if (threshold > 0.0) {
    const auto active = prune_senses(res.model, threshold);
    const auto multi = std::count_if(active.begin() + Vocabulary::kNumReserved, active.end(),
                                     [](std::size_t a) { return a > 1; });
    out << "words with several active senses " << multi << '\n';
  }
  Checkpoint ck;
  res.model.save(ck, vocab);
  ck.meta["kind"] = "adagram";
  ck.meta["run_config"] = cfg.serialize();
  const fs::path output = cfg.get("output");
  save_checkpoint(ck, output);
  save_config(cfg, with_suffix(output, ".ini"));
  if (!cfg.get("export-senses").empty()) write_vectors(cfg.get("export-senses"), export_sense_vectors(res.model, vocab));
}

void cmd_pretrain_attention(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = read_corpus(cfg.get("corpus"));
  const auto vocab = vocab_for(cfg, corpus);
  AttentionPretrainConfig ap;
  ap.dim = cfg.get_size("dim");
  ap.ns = ns_config(cfg);
  ap.epochs = static_cast<int>(cfg.get_int("epochs"));
  ap.lr = cfg.get_double("lr");
  ap.min_lr = cfg.get_double("min-lr");
  ap.subsample = cfg.get_double("subsample");
  ap.freeze_embeddings = cfg.get_bool("freeze-embeddings");
  ap.seed = seed_for(cfg, "attention");
  std::optional<ParamTensor> init;
  if (!cfg.get("init-vectors").empty()) {
    Rng rng(seed_for(cfg, "attention-import"));
    init = vectors_table(cfg.get("init-vectors"), vocab, ap.dim, rng);
  }
  const auto res = pretrain_attention(encode_sentences(corpus, vocab), vocab, ap, init ? &*init : nullptr);
  Checkpoint ck;
  ck.meta["kind"] = "attention";
  ck.meta["vocab"] = vocab.serialize();
  ck.meta["run_config"] = cfg.serialize();
  res.model.block.save(ck, "att.");
  ck.put("attn.", res.model.word_emb);
  ck.put("attn.", res.model.out);
  const fs::path output = cfg.get("output");
  save_checkpoint(ck, output);
  save_config(cfg, with_suffix(output, ".ini"));
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e)
    out << "epoch " << e + 1 << " loss " << fmt(res.epoch_loss[e]) << '\n';
}

// Placeholder sub-models: v* stays zero during pretraining, so only the
// input width matters.
Conditioning placeholder_conditioning(CondMode mode, const Vocabulary& vocab, std::size_t d, Rng& rng) {
  Conditioning c;
  if (mode == CondMode::SeedInput || mode == CondMode::SeedAttention) c.word_emb.emplace("word_emb", vocab.size(), d);
  if (mode == CondMode::SeedAttention) c.attention = AttentionBlock::create(vocab.size(), d, rng);
  if (mode == CondMode::SeedAdaptive) c.senses = SenseEmbeddings(vocab, 1, d, 0.1);
  return c;
}

void cmd_pretrain_lm(const RunConfig& cfg, std::ostream& out) {
  auto corpus = read_corpus(cfg.get("corpus"));
  const auto vocab = vocab_for(cfg, corpus);
  std::vector<Tokens> val;
  if (!cfg.get("val-corpus").empty()) {
    val = read_corpus(cfg.get("val-corpus"));
  } else {
    const double frac = cfg.get_double("val-fraction");
    require(frac >= 0.0 && frac < 1.0, ErrorCode::Usage, "val-fraction must lie in [0, 1)");
    const auto n_val = static_cast<std::size_t>(frac * static_cast<double>(corpus.size()));
    val.assign(corpus.end() - static_cast<std::ptrdiff_t>(n_val), corpus.end());
    corpus.resize(corpus.size() - n_val);
  }
  auto mcfg = model_config(cfg);
  mcfg.cond_dim = cfg.get_size("cond-dim");
  Rng rng(seed_for(cfg, "lm-init"));
  DefinitionModel model(vocab, mcfg, placeholder_conditioning(mcfg.mode, vocab, mcfg.cond_dim, rng), rng);
  if (!cfg.get("init-vectors").empty()) {
    const auto vf = read_vectors(cfg.get("init-vectors"));
    require(vf.dim == mcfg.emb_dim, ErrorCode::Format, "init-vectors dimension does not match emb-dim");
    import_vectors(vf, vocab, model.emb);
  }
  const auto hist = pretrain_unconditional(model, encode_sentences(corpus, vocab), encode_sentences(val, vocab),
                                           train_config(cfg, "pretrain-lm"));
  Checkpoint ck;
  ck.meta["kind"] = "lm";
  ck.meta["vocab"] = vocab.serialize();
  ck.meta["run_config"] = cfg.serialize();
  ck.meta["history"] = history_json(hist);
  ck.meta["loss.unk_counted"] = "true";
  ck.put("def.", model.core_params());
  const fs::path output = cfg.get("output");
  save_checkpoint(ck, output);
  save_config(cfg, with_suffix(output, ".ini"), kUnkNote);
  print_history(out, hist);
}

void cmd_train_def(const RunConfig& cfg, std::ostream& out) {
  auto mcfg = model_config(cfg);
  mcfg.fine_tune_attention = cfg.get_bool("fine-tune-attention");
  mcfg.exclude_headword = cfg.get_bool("exclude-headword");
  const auto train_defs = parse_definitions(cfg.get("train"));
  const auto val_defs = parse_definitions(cfg.get("val"));
  require(!train_defs.empty(), ErrorCode::Usage, "training set is empty");

  std::optional<AttentionCheckpoint> att;
  std::optional<SenseEmbeddings> senses;
  Vocabulary ada_vocab;
  if (!cfg.get("attention").empty()) att = load_attention(cfg.get("attention"));
  if (!cfg.get("adagram").empty()) {
    const auto ck = Checkpoint::load(cfg.get("adagram"));
    require(ck.has_meta("kind") && ck.get_meta("kind") == "adagram", ErrorCode::Format,
            cfg.get("adagram") + " is not an AdaGram checkpoint");
    senses = SenseEmbeddings::load(ck, &ada_vocab);
  }
  // Conditioning checkpoints keep their ids; training-data tokens they lack are
  // appended and get zero conditioning rows.
  const auto min_count = cfg.get_u64("min-count");
  Vocabulary vocab;
  if (!cfg.get("vocab").empty()) vocab = Vocabulary::load(cfg.get("vocab"));
  else if (att) vocab = Vocabulary::extend(att->vocab, entry_streams(train_defs), min_count);
  else if (senses) vocab = Vocabulary::extend(ada_vocab, entry_streams(train_defs), min_count);
  else vocab = Vocabulary::build(entry_streams(train_defs), min_count);
  require(!att || vocab.extends(att->vocab), ErrorCode::Format,
          "the vocabulary does not extend the attention checkpoint's vocabulary");
  require(!senses || vocab.extends(ada_vocab), ErrorCode::Format,
          "the vocabulary does not extend the AdaGram checkpoint's vocabulary");
  if (att) {
    att->word_emb.append_rows(vocab.size() - att->word_emb.rows());
    att->block.context_emb.append_rows(vocab.size() - att->block.context_emb.rows());
  }
  if (senses) senses->extend_vocab(vocab.size());

  Conditioning cond;
  std::optional<VectorsFile> vectors;
  if (!cfg.get("vectors").empty()) vectors = read_vectors(cfg.get("vectors"));
  switch (mcfg.mode) {
    case CondMode::None:
    case CondMode::Seed: break;
    case CondMode::SeedInput:
      if (vectors) {
        cond.word_emb.emplace("word_emb", vocab.size(), vectors->dim);
        import_vectors(*vectors, vocab, *cond.word_emb);
      } else {
        require(att.has_value(), ErrorCode::Usage, "S+I needs --vectors or --attention for its word vectors");
        cond.word_emb = att->word_emb;
      }
      break;
    case CondMode::SeedAttention:
      require(att.has_value(), ErrorCode::Usage, "S+I-Attention needs --attention");
      cond.word_emb = att->word_emb;
      cond.attention = att->block;
      break;
    case CondMode::SeedAdaptive:
      require(senses.has_value(), ErrorCode::Usage, "S+I-Adaptive needs --adagram");
      cond.senses = std::move(senses);
      break;
  }
  std::size_t source_dim = mcfg.emb_dim;
  if (cond.word_emb) source_dim = cond.word_emb->cols();
  if (cond.senses) source_dim = cond.senses->dim();
  const auto requested = cfg.get_size("cond-dim");
  require(requested == 0 || !uses_input(mcfg.mode) || requested == source_dim, ErrorCode::Format,
          "cond-dim " + std::to_string(requested) + " does not match the conditioning vectors (" +
              std::to_string(source_dim) + ")");
  mcfg.cond_dim = requested ? requested : source_dim;

  Rng rng(seed_for(cfg, "def-init"));
  DefinitionModel model(vocab, mcfg, std::move(cond), rng);
  if (vectors && vectors->dim == mcfg.emb_dim) import_vectors(*vectors, vocab, model.emb);
  if (!cfg.get("init-lm").empty()) {
    const auto ck = Checkpoint::load(cfg.get("init-lm"));
    require(ck.has_meta("kind") && ck.get_meta("kind") == "lm", ErrorCode::Format,
            cfg.get("init-lm") + " is not a language-model checkpoint");
    require(Vocabulary::deserialize(ck.get_meta("vocab")) == vocab, ErrorCode::Format,
            "the language model uses a different vocabulary");
    ck.get("def.", model.core_params());
  }
  const auto train = encode_entries(train_defs, vocab);
  const auto val = encode_entries(val_defs, vocab);
  const auto hist = train_definitions(model, train, val, train_config(cfg, "train-def"));

  Checkpoint ck;
  model.save(ck);
  ck.meta["run_config"] = cfg.serialize();
  ck.meta["history"] = history_json(hist);
  ck.meta["loss.unk_counted"] = "true";
  const fs::path output = cfg.get("output");
  save_checkpoint(ck, output);
  save_config(cfg, with_suffix(output, ".ini"), kUnkNote);
  write_text(with_suffix(output, ".history.json"), history_json(hist));
  print_history(out, hist);
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const auto ck = Checkpoint::load(cfg.get("model"));
  const auto model = DefinitionModel::load(ck);
  fs::path data = cfg.get("data");
  if (data.empty()) {
    require(ck.has_meta("run_config"), ErrorCode::Usage, "--data is required for this checkpoint");
    const auto run = RunConfig::parse(ck.get_meta("run_config"));
    data = fs::path(run.get("train")).parent_path() / (cfg.get("split") + ".jsonl");
  }
  const auto entries = parse_definitions(data);
  require(!entries.empty(), ErrorCode::Usage, data.string() + " holds no entries");
  const auto trials = cfg.get_int("trials");
  require(trials >= 1, ErrorCode::Usage, "trials must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (long long t = 0; t < trials; ++t) seeds.push_back(seed_for(cfg, "trial" + std::to_string(t)));
  const auto id = cfg.get("model-id").empty() ? to_string(model.mode()) : cfg.get("model-id");
  const auto rep = evaluate_model(model, entries, seeds, cfg.get_double("temperature"), cfg.get_size("max-length"),
                                  id, cfg.get("split"));
  const auto text = rep.to_json() + "\n";
  if (!cfg.get("output").empty()) write_text(cfg.get("output"), text);
  const auto& format = cfg.get("format");
  if (format == "json") out << text;
  else if (format == "table") out << report_table(std::span(&rep, 1));
  else fail(ErrorCode::Usage, "format must be json or table");
}

void cmd_generate(const RunConfig& cfg, std::ostream& out) {
  const auto model = DefinitionModel::load(Checkpoint::load(cfg.get("model")));
  const auto queries = read_queries(cfg);
  GenerationConfig g;
  g.temperature = cfg.get_double("temperature");
  g.max_length = cfg.get_size("max-length");
  validate(g);
  const auto samples = cfg.get_int("samples");
  require(samples >= 1, ErrorCode::Usage, "samples must be >= 1");
  const auto& format = cfg.get("format");
  require(format == "text" || format == "jsonl", ErrorCode::Usage, "format must be text or jsonl");
  Rng rng(seed_for(cfg, "generate"));
  const auto& vocab = model.vocab();
  for (const auto& q : queries) {
    const auto ctx = vocab.encode(q.context);
    for (long long s = 0; s < samples; ++s) {
      const auto gen = generate(model, vocab.id(q.word), ctx, g, rng);
      const auto text = join_tokens(vocab.decode(gen.tokens));
      if (format == "text") {
        out << text << '\n';
      } else {
        json j;
        j["word"] = q.word;
        j["context"] = q.context_text;
        j["definition"] = text;
        j["logprobs"] = gen.token_logprobs;
        out << j.dump() << '\n';
      }
    }
  }
}

void cmd_disambiguate(const RunConfig& cfg, std::ostream& out) {
  const auto ck = Checkpoint::load(cfg.get("model"));
  const auto queries = read_queries(cfg);
  require(ck.has_meta("kind"), ErrorCode::Format, "checkpoint has no kind");
  const auto& kind = ck.get_meta("kind");
  if (kind == "adagram") {
    Vocabulary vocab;
    const auto model = SenseEmbeddings::load(ck, &vocab);
    for (const auto& q : queries) {
      const auto id = vocab.id(q.word);
      const auto ctx = vocab.encode(q.context);
      const auto post = sense_posterior(id, ctx, model);
      json j;
      j["word"] = q.word;
      j["sense"] = disambiguate(id, ctx, model).sense + 1;
      j["posterior"] = post.probs;
      out << j.dump() << '\n';
    }
    return;
  }
  std::optional<AttentionCheckpoint> att;
  if (kind == "attention") {
    att = load_attention(cfg.get("model"));
  } else if (kind == "defmodel") {
    auto m = DefinitionModel::load(ck);
    require(m.mode() == CondMode::SeedAttention, ErrorCode::Usage,
            "disambiguate needs an AdaGram, attention or S+I-Attention checkpoint");
    att = AttentionCheckpoint{m.vocab(), *m.conditioning().attention, *m.conditioning().word_emb};
  } else {
    fail(ErrorCode::Format, "unsupported checkpoint kind '" + kind + "'");
  }
  out << mask_csv_header(att->block.dim()) << '\n';
  for (const auto& q : queries) {
    const auto mask = compute_mask(att->vocab.encode(q.context), att->block);
    out << mask_csv_row(q.word, q.context, mask) << '\n';
  }
}

void cmd_neighbors(const RunConfig& cfg, std::ostream& out) {
  const auto vf = read_vectors(cfg.get("vectors"));
  for (const auto& [token, cos] : nearest_neighbors(vf, cfg.get("word"), cfg.get_size("n")))
    out << token << '\t' << fmt(cos) << '\n';
}

}  // namespace

const std::vector<SubcommandSpec>& subcommands() {
  static const std::vector<SubcommandSpec> specs = build_specs();
  return specs;
}

const SubcommandSpec& find_subcommand(const std::string& name) {
  for (const auto& s : subcommands())
    if (s.name == name) return s;
  fail(ErrorCode::Usage, "unknown subcommand '" + name + "'");
}

RunConfig resolve_config(const SubcommandSpec& spec, const RunConfig& given) {
  RunConfig cfg;
  for (const auto& o : spec.options)
    if (!o.required) cfg.set(o.key, o.default_value);
  for (const auto& [k, v] : given.values()) {
    if (k == "subcommand") {
      require(v == spec.name, ErrorCode::Usage, "configuration is for '" + v + "', not '" + spec.name + "'");
      continue;
    }
    const bool known = std::any_of(spec.options.begin(), spec.options.end(), [&](const auto& o) { return o.key == k; });
    require(known, ErrorCode::Usage, "unknown setting '" + k + "' for " + spec.name);
    cfg.set(k, v);
  }
  for (const auto& o : spec.options)
    require(!o.required || (cfg.has(o.key) && !cfg.get(o.key).empty()), ErrorCode::Usage,
            spec.name + ": --" + o.key + " is required");
  cfg.set("subcommand", spec.name);
  return cfg;
}

void run_subcommand(const std::string& name, const RunConfig& given, std::ostream& out) {
  const auto& spec = find_subcommand(name);
  const auto cfg = resolve_config(spec, given);
  if (name == "prepare") cmd_prepare(cfg, out);
  else if (name == "synth") cmd_synth(cfg, out);
  else if (name == "train-skipgram") cmd_train_skipgram(cfg, out);
  else if (name == "train-adagram") cmd_train_adagram(cfg, out);
  else if (name == "pretrain-attention") cmd_pretrain_attention(cfg, out);
  else if (name == "pretrain-lm") cmd_pretrain_lm(cfg, out);
  else if (name == "train-def") cmd_train_def(cfg, out);
  else if (name == "eval") cmd_eval(cfg, out);
  else if (name == "generate") cmd_generate(cfg, out);
  else if (name == "disambiguate") cmd_disambiguate(cfg, out);
  else if (name == "neighbors") cmd_neighbors(cfg, out);
  else fail(ErrorCode::Internal, "subcommand '" + name + "' has no handler");
}

}  // namespace defmod
