#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "defmod/config.hpp"

namespace defmod {

struct OptionSpec {
  std::string key;            // flag name without the leading "--"
  std::string default_value;  // empty with `required` set means no default
  std::string help;
  bool required = false;
  bool is_flag = false;  // boolean switch
};

struct SubcommandSpec {
  std::string name;
  std::string help;
  std::vector<OptionSpec> options;
};

const std::vector<SubcommandSpec>& subcommands();
// Throws Error(Usage) for an unknown name.
const SubcommandSpec& find_subcommand(const std::string& name);

// Defaults, overridden by `given`. Unknown keys and missing required keys
// throw Error(Usage). The key "subcommand" is accepted and must match.
RunConfig resolve_config(const SubcommandSpec& spec, const RunConfig& given);

// Runs one pipeline stage on a resolved configuration. Human-readable
// reports go to `out`; artifacts go to the configured paths.
void run_subcommand(const std::string& name, const RunConfig& given, std::ostream& out);

}  // namespace defmod
