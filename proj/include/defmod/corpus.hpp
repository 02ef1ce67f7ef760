#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "defmod/rng.hpp"

namespace defmod {

using TokenId = std::int32_t;
using Tokens = std::vector<std::string>;
using Ids = std::vector<TokenId>;

// One dictionary triplet: headword, its definition, and an example of use.
struct DefinitionEntry {
  std::string headword;
  Tokens definition;
  Tokens context;

  bool operator==(const DefinitionEntry&) const = default;
};

// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
// character as its own token.
Tokens tokenize(std::string_view text);

// Lowercases and joins multiword headwords with underscores.
std::string normalize_headword(std::string_view word);

std::string join_tokens(std::span<const std::string> tokens);

// Reads JSON Lines with string fields word/definition/example. Blank lines
// are skipped; a malformed record throws Error(Format) naming its line.
std::vector<DefinitionEntry> parse_definitions(const std::filesystem::path& path);
std::vector<DefinitionEntry> parse_definitions_text(std::string_view text);
void write_definitions(const std::filesystem::path& path, std::span<const DefinitionEntry> entries);

// Plain-text corpus, one tokenized sentence per non-empty line.
std::vector<Tokens> read_corpus(const std::filesystem::path& path);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kNumReserved = 4;
  static constexpr std::string_view kReserved[kNumReserved] = {"<pad>", "<unk>", "<bos>", "<eos>"};

  // Reserved-only vocabulary.
  Vocabulary();

  // Keeps tokens with count >= min_count, truncated to the max_size most
  // frequent (ties broken lexicographically). Ids are assigned in that order.
  static Vocabulary build(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_count,
                          std::optional<std::size_t> max_size = std::nullopt);
  static Vocabulary build(std::span<const Tokens> streams, std::uint64_t min_count,
                          std::optional<std::size_t> max_size = std::nullopt);

  // `base` followed by the stream tokens it lacks (count >= min_count, ordered
  // as in build). Ids and counts of base tokens are unchanged.
  static Vocabulary extend(const Vocabulary& base, std::span<const Tokens> streams, std::uint64_t min_count);
  // True when this vocabulary starts with exactly the tokens and counts of `base`.
  bool extends(const Vocabulary& base) const;

  static bool is_reserved(TokenId id) { return id >= 0 && id < kNumReserved; }

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // <unk> when absent
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::uint64_t total_count() const;
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  Ids encode(std::span<const std::string> seq, bool add_bos_eos = false) const;
  Tokens decode(std::span<const TokenId> ids) const;

  // "token<TAB>count" per line, ordered by id, reserved tokens first.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && counts_ == other.counts_;
  }

 private:
  void add(std::string token, std::uint64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

void count_tokens(std::span<const std::string> tokens, std::map<std::string, std::uint64_t>& counts);

// Token streams contributed by definition entries: headword, definition and
// example tokens.
std::vector<Tokens> entry_streams(std::span<const DefinitionEntry> entries);

struct CorpusStats {
  std::uint64_t words = 0;    // unique headwords
  std::uint64_t entries = 0;
  std::uint64_t tokens = 0;   // raw definition tokens, no reserved tokens
  double avg_length = 0.0;
};

CorpusStats stats(std::span<const DefinitionEntry> entries);

struct EncodedEntry {
  TokenId headword = Vocabulary::kUnk;
  Ids definition;
  Ids context;
};

EncodedEntry encode_entry(const DefinitionEntry& entry, const Vocabulary& vocab);
std::vector<EncodedEntry> encode_entries(std::span<const DefinitionEntry> entries, const Vocabulary& vocab);

struct SkipGramPair {
  TokenId center;
  TokenId context;
  bool operator==(const SkipGramPair&) const = default;
};

// Every (center, context) pair within `window` positions, ordered by center
// position then context position. Pairs touching a reserved id are skipped.
std::vector<SkipGramPair> window_pairs(std::span<const TokenId> sentence, int window);

// Frequent-word subsampling: a token with relative frequency f is discarded
// with probability 1 - sqrt(threshold / f). Reserved ids are always dropped.
Ids subsample(std::span<const TokenId> sentence, const Vocabulary& vocab, double threshold, Rng& rng);

}  // namespace defmod
