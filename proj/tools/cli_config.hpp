#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mingrad/errors.hpp"

namespace mingrad::cli {

// Value of `--config path` or `--config=path` in args, or empty.
inline std::string find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

inline nlohmann::json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot read config file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config file " + path + " must hold a JSON object");
  return j;
}

inline bool flag_given(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

inline std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Command-line arguments for the config keys that are not already given as
// flags. Keys are flag names without the leading dashes; arrays become
// comma-separated lists and booleans become bare flags.
inline std::vector<std::string> config_arguments(const nlohmann::json& cfg, const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    const std::string& key = it.key();
    if (key == "config" || flag_given(args, key)) continue;
    const nlohmann::json& v = it.value();
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back("--" + key);
      continue;
    }
    if (v.is_null()) continue;
    std::string text;
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) text += ',';
        text += scalar_text(v[i]);
      }
    } else if (v.is_object()) {
      throw InvalidArgument("config key '" + key + "' must be a scalar or a list");
    } else {
      text = scalar_text(v);
    }
    out.push_back("--" + key);
    out.push_back(text);
  }
  return out;
}

// Every option of a subcommand with its resolved value as a string; flags
// are booleans.
inline nlohmann::json resolved_config(const CLI::App& sub) {
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      j[name] = opt->count() > 0;
      continue;
    }
    if (opt->count() > 0) {
      const auto& res = opt->results();
      std::string joined;
      for (std::size_t i = 0; i < res.size(); ++i) {
        if (i) joined += ',';
        joined += res[i];
      }
      j[name] = joined;
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

}  // namespace mingrad::cli
