#include "defmod/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "defmod/error.hpp"

namespace defmod {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorCode::Usage, "invalid value '" + text + "' for " + key);
  return out;
}

}  // namespace

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::Usage, "missing setting " + key);
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const { return parse_number<long long>(key, get(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

std::size_t RunConfig::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::Usage, "invalid boolean '" + v + "' for " + key);
}

void RunConfig::merge(const RunConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorCode::Format,
            "config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::Format, "config line " + std::to_string(line_no) + ": empty key");
    cfg.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Missing, "cannot write " + path.string());
  out << serialize();
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Missing, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace defmod
