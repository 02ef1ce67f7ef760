#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "defmod/defmod.h"

namespace {

struct OptionValue {
  CLI::Option* option = nullptr;
  std::string text;
  bool on = false;
  bool is_flag = false;
};

struct Subcommand {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, OptionValue> values;
};

int fail_with(dm_status status) {
  std::fprintf(stderr, "defmod: %s\n", dm_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Polysemy-aware definition modeling: embeddings, definition models, evaluation."};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", dm_version());

  std::vector<std::unique_ptr<Subcommand>> subs;
  for (int i = 0; i < dm_subcommand_count(); ++i) {
    auto sub = std::make_unique<Subcommand>();
    sub->name = dm_subcommand_name(i);
    sub->app = app.add_subcommand(sub->name, dm_subcommand_help(i));
    sub->app->add_option("--config", sub->config_path, "key = value settings file; explicit flags win")
        ->default_str("none");
    for (int j = 0; j < dm_option_count(sub->name.c_str()); ++j) {
      const char *key = nullptr, *def = nullptr, *help = nullptr;
      int required = 0, is_flag = 0;
      dm_option_info(sub->name.c_str(), j, &key, &def, &help, &required, &is_flag);
      auto& v = sub->values[key];
      v.is_flag = is_flag != 0;
      const std::string name = std::string("--") + key;
      if (v.is_flag) {
        v.option = sub->app->add_flag(name, v.on, help)->default_str(def);
      } else {
        v.option = sub->app->add_option(name, v.text, help);
        if (required) v.option->default_str("required");
        else v.option->default_str(*def ? def : "\"\"");
      }
    }
    subs.push_back(std::move(sub));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(DM_ERR_USAGE);
  }

  for (const auto& sub : subs) {
    if (!sub->app->parsed()) continue;
    dm_config* cfg = nullptr;
    if (dm_status s = dm_config_new(&cfg); s != DM_OK) return fail_with(s);
    std::unique_ptr<dm_config, decltype(&dm_config_free)> guard(cfg, dm_config_free);
    if (!sub->config_path.empty())
      if (dm_status s = dm_config_load(cfg, sub->config_path.c_str()); s != DM_OK) return fail_with(s);
    for (const auto& [key, v] : sub->values) {
      if (v.option->count() == 0) continue;
      const std::string value = v.is_flag ? (v.on ? "true" : "false") : v.text;
      if (dm_status s = dm_config_set(cfg, key.c_str(), value.c_str()); s != DM_OK) return fail_with(s);
    }
    if (dm_status s = dm_run(sub->name.c_str(), cfg, nullptr, nullptr); s != DM_OK) return fail_with(s);
    return 0;
  }
  return static_cast<int>(DM_ERR_USAGE);
}
