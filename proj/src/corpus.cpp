#include "defmod/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "defmod/error.hpp"
#include "json.hpp"

namespace defmod {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Missing, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string normalize_headword(std::string_view word) {
  std::string out;
  for (unsigned char c : word) {
    if (is_space(c)) {
      if (!out.empty() && out.back() != '_') out.push_back('_');
    } else {
      out.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<DefinitionEntry> parse_definitions_text(std::string_view text) {
  std::vector<DefinitionEntry> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return is_space(c); })) continue;

    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::Format, where + ": invalid JSON (" + e.what() + ")");
    }
    require(record.is_object(), ErrorCode::Format, where + ": record is not an object");
    auto field = [&](const char* name) -> std::string {
      auto it = record.find(name);
      require(it != record.end(), ErrorCode::Format, where + ": missing field \"" + name + "\"");
      require(it->is_string(), ErrorCode::Format, where + ": field \"" + name + "\" is not a string");
      return it->get<std::string>();
    };
    DefinitionEntry entry;
    entry.headword = normalize_headword(field("word"));
    entry.definition = tokenize(field("definition"));
    entry.context = tokenize(field("example"));
    require(!entry.headword.empty(), ErrorCode::Format, where + ": empty field \"word\"");
    require(!entry.definition.empty(), ErrorCode::Format, where + ": empty field \"definition\"");
    require(!entry.context.empty(), ErrorCode::Format, where + ": empty field \"example\"");
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<DefinitionEntry> parse_definitions(const std::filesystem::path& path) {
  return parse_definitions_text(read_file(path));
}

void write_definitions(const std::filesystem::path& path, std::span<const DefinitionEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Missing, "cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["word"] = e.headword;
    j["definition"] = join_tokens(e.definition);
    j["example"] = join_tokens(e.context);
    out << j.dump() << '\n';
  }
}

std::vector<Tokens> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Missing, "cannot open " + path.string());
  std::vector<Tokens> sentences;
  std::string line;
  while (std::getline(in, line)) {
    Tokens t = tokenize(line);
    if (!t.empty()) sentences.push_back(std::move(t));
  }
  return sentences;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (auto r : kReserved) add(std::string(r), 0);
}

void Vocabulary::add(std::string token, std::uint64_t count) {
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_count,
                             std::optional<std::size_t> max_size) {
  require(min_count >= 1, ErrorCode::Usage, "min_count must be >= 1");
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n < min_count) continue;
    if (std::find(std::begin(kReserved), std::end(kReserved), tok) != std::end(kReserved)) continue;
    kept.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic; stable sort keeps that order among ties.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size && kept.size() > *max_size) kept.resize(*max_size);
  Vocabulary v;
  for (auto& [tok, n] : kept) v.add(std::move(tok), n);
  return v;
}

Vocabulary Vocabulary::build(std::span<const Tokens> streams, std::uint64_t min_count,
                             std::optional<std::size_t> max_size) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : streams) count_tokens(s, counts);
  return build(counts, min_count, max_size);
}

Vocabulary Vocabulary::extend(const Vocabulary& base, std::span<const Tokens> streams, std::uint64_t min_count) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : streams) count_tokens(s, counts);
  std::erase_if(counts, [&](const auto& kv) { return base.find(kv.first).has_value(); });
  Vocabulary v = base;
  const auto extra = build(counts, min_count);
  for (std::size_t i = kNumReserved; i < extra.size(); ++i) v.add(extra.tokens_[i], extra.counts_[i]);
  return v;
}

bool Vocabulary::extends(const Vocabulary& base) const {
  return base.size() <= size() && std::equal(base.tokens_.begin(), base.tokens_.end(), tokens_.begin()) &&
         std::equal(base.counts_.begin(), base.counts_.end(), counts_.begin());
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorCode::Usage,
          "token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::total_count() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

Ids Vocabulary::encode(std::span<const std::string> seq, bool add_bos_eos) const {
  Ids out;
  out.reserve(seq.size() + 2);
  if (add_bos_eos) out.push_back(kBos);
  for (const auto& t : seq) out.push_back(id(t));
  if (add_bos_eos) out.push_back(kEos);
  return out;
}

Tokens Vocabulary::decode(std::span<const TokenId> ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out.push_back('\t');
    out += std::to_string(counts_[i]);
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  Vocabulary v;
  v.tokens_.clear();
  v.counts_.clear();
  v.index_.clear();
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    require(tab != std::string_view::npos && tab > 0, ErrorCode::Format,
            "vocabulary line " + std::to_string(line_no) + ": expected token<TAB>count");
    std::string tok(line.substr(0, tab));
    std::uint64_t n = 0;
    try {
      n = std::stoull(std::string(line.substr(tab + 1)));
    } catch (const std::exception&) {
      fail(ErrorCode::Format, "vocabulary line " + std::to_string(line_no) + ": bad count");
    }
    require(!v.index_.contains(tok), ErrorCode::Format, "vocabulary line " + std::to_string(line_no) + ": duplicate token");
    v.add(std::move(tok), n);
  }
  require(v.size() >= kNumReserved, ErrorCode::Format, "vocabulary is missing reserved tokens");
  for (TokenId i = 0; i < kNumReserved; ++i)
    require(v.tokens_[static_cast<std::size_t>(i)] == kReserved[i], ErrorCode::Format,
            "vocabulary must start with <pad>, <unk>, <bos>, <eos>");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Missing, "cannot write " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

void count_tokens(std::span<const std::string> tokens, std::map<std::string, std::uint64_t>& counts) {
  for (const auto& t : tokens) ++counts[t];
}

std::vector<Tokens> entry_streams(std::span<const DefinitionEntry> entries) {
  std::vector<Tokens> streams;
  streams.reserve(entries.size() * 3);
  for (const auto& e : entries) {
    streams.push_back({e.headword});
    streams.push_back(e.definition);
    streams.push_back(e.context);
  }
  return streams;
}

CorpusStats stats(std::span<const DefinitionEntry> entries) {
  CorpusStats s;
  std::set<std::string_view> words;
  for (const auto& e : entries) {
    words.insert(e.headword);
    s.tokens += e.definition.size();
  }
  s.words = words.size();
  s.entries = entries.size();
  s.avg_length = s.entries ? static_cast<double>(s.tokens) / static_cast<double>(s.entries) : 0.0;
  return s;
}

EncodedEntry encode_entry(const DefinitionEntry& entry, const Vocabulary& vocab) {
  return EncodedEntry{vocab.id(entry.headword), vocab.encode(entry.definition), vocab.encode(entry.context)};
}

std::vector<EncodedEntry> encode_entries(std::span<const DefinitionEntry> entries, const Vocabulary& vocab) {
  std::vector<EncodedEntry> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(encode_entry(e, vocab));
  return out;
}

std::vector<SkipGramPair> window_pairs(std::span<const TokenId> sentence, int window) {
  require(window >= 1, ErrorCode::Usage, "window must be >= 1");
  std::vector<SkipGramPair> pairs;
  const auto n = static_cast<std::ptrdiff_t>(sentence.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (Vocabulary::is_reserved(sentence[i])) continue;
    const auto lo = std::max<std::ptrdiff_t>(0, i - window);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, i + window);
    for (auto j = lo; j <= hi; ++j) {
      if (j == i || Vocabulary::is_reserved(sentence[j])) continue;
      pairs.push_back({sentence[i], sentence[j]});
    }
  }
  return pairs;
}

Ids subsample(std::span<const TokenId> sentence, const Vocabulary& vocab, double threshold, Rng& rng) {
  Ids out;
  out.reserve(sentence.size());
  const double total = static_cast<double>(vocab.total_count());
  for (auto id : sentence) {
    if (Vocabulary::is_reserved(id)) continue;
    if (threshold <= 0.0 || total <= 0.0) {
      out.push_back(id);
      continue;
    }
    const double f = static_cast<double>(vocab.count(id)) / total;
    const double keep = f > 0.0 ? std::min(1.0, std::sqrt(threshold / f)) : 1.0;
    if (keep >= 1.0 || rng.uniform() < keep) out.push_back(id);
  }
  return out;
}

}  // namespace defmod
