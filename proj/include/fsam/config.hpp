#pragma once

// Flat, typed key-value configuration:
//
//   # comment
//   lr = 5e-4                 real (integers are accepted where reals are)
//   depth = 2                 integer
//   use_frequency = true      bool
//   source_domain = "A"       string, always quoted
//   eval_targets = ["B", "C"] list
//
// Unknown keys and type mismatches are rejected with the offending line.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsam/seg_model.hpp"
#include "fsam/synth.hpp"

namespace fsam {

struct ConfigValue {
  enum class Kind { Bool, Integer, Real, String, List };
  Kind kind = Kind::String;
  bool boolean = false;
  std::int64_t integer = 0;
  double real = 0.0;
  std::string text;
  std::vector<ConfigValue> items;
};

struct ConfigEntry {
  std::string key;
  ConfigValue value;
  int line = 0;
};

std::vector<ConfigEntry> parse_config_text(std::string_view text);
ConfigValue parse_config_value(std::string_view text);
std::string format_config_value(const ConfigValue& value);

struct RunConfig {
  std::string preset = "toy";
  FSAMConfig model;
  std::string data_root;
  std::string source_domain;
  std::string out_dir;
  std::vector<std::string> eval_targets;
  double split_ratio = 0.9;

  void validate() const;
};

/// "toy", "riga-like" or "prostate-like".
RunConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

/// Applies one setting; throws InvalidConfig for unknown keys or bad types.
void apply_setting(RunConfig& config, const std::string& key, const ConfigValue& value);

/// Resolution order: preset (the `preset` key of the file unless
/// `preset_override` is non-empty), then the remaining file entries.
RunConfig resolve_run_config(const std::vector<ConfigEntry>& entries, const std::string& preset_override = {});

/// Every key, one per line, in a stable order; parses back to the same config.
std::string render_config(const RunConfig& config);

SyntheticSpec default_synthetic_spec();
void apply_setting(SyntheticSpec& spec, const std::string& key, const ConfigValue& value);
SyntheticSpec resolve_synthetic_spec(const std::vector<ConfigEntry>& entries);
std::string render_config(const SyntheticSpec& spec);

std::string read_text_file(const std::string& path);

}  // namespace fsam
