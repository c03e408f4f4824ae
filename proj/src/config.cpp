#include "fsam/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace fsam {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view text, const std::string& why) {
  fail(ErrorKind::InvalidConfig, "cannot parse value '" + std::string(text) + "': " + why);
}

// Parses one value starting at text[pos]; advances pos past it.
ConfigValue parse_value_at(std::string_view text, std::size_t& pos);

void skip_space(std::string_view text, std::size_t& pos) {
  while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
}

ConfigValue parse_string_at(std::string_view text, std::size_t& pos) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::String;
  ++pos;  // opening quote
  while (pos < text.size() && text[pos] != '"') {
    if (text[pos] == '\\') {
      ++pos;
      if (pos >= text.size()) break;
    }
    v.text += text[pos++];
  }
  if (pos >= text.size()) bad_value(text, "unterminated string");
  ++pos;
  return v;
}

ConfigValue parse_list_at(std::string_view text, std::size_t& pos) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::List;
  ++pos;  // '['
  skip_space(text, pos);
  if (pos < text.size() && text[pos] == ']') {
    ++pos;
    return v;
  }
  while (true) {
    skip_space(text, pos);
    ConfigValue item = parse_value_at(text, pos);
    if (item.kind == ConfigValue::Kind::List) bad_value(text, "nested lists are not supported");
    v.items.push_back(std::move(item));
    skip_space(text, pos);
    if (pos < text.size() && text[pos] == ',') {
      ++pos;
      continue;
    }
    if (pos < text.size() && text[pos] == ']') {
      ++pos;
      return v;
    }
    bad_value(text, "expected ',' or ']' in list");
  }
}

ConfigValue parse_scalar_at(std::string_view text, std::size_t& pos) {
  const std::size_t start = pos;
  while (pos < text.size() && text[pos] != ',' && text[pos] != ']' && text[pos] != ' ' && text[pos] != '\t') ++pos;
  const std::string_view token = text.substr(start, pos - start);
  ConfigValue v;
  if (token == "true" || token == "false") {
    v.kind = ConfigValue::Kind::Bool;
    v.boolean = token == "true";
    return v;
  }
  if (token.empty()) bad_value(text, "missing value");
  const bool looks_real = token.find_first_of(".eE") != std::string_view::npos || token == "inf" || token == "nan";
  if (!looks_real) {
    auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v.integer);
    if (ec == std::errc{} && end == token.data() + token.size()) {
      v.kind = ConfigValue::Kind::Integer;
      return v;
    }
  }
  auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v.real);
  if (ec != std::errc{} || end != token.data() + token.size() || !std::isfinite(v.real))
    bad_value(text, "strings must be quoted; numbers must be finite");
  v.kind = ConfigValue::Kind::Real;
  return v;
}

ConfigValue parse_value_at(std::string_view text, std::size_t& pos) {
  skip_space(text, pos);
  if (pos >= text.size()) bad_value(text, "missing value");
  if (text[pos] == '"') return parse_string_at(text, pos);
  if (text[pos] == '[') return parse_list_at(text, pos);
  return parse_scalar_at(text, pos);
}

// Drops a trailing comment, ignoring '#' inside quoted strings.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

const char* kind_name(ConfigValue::Kind kind) {
  switch (kind) {
    case ConfigValue::Kind::Bool: return "bool";
    case ConfigValue::Kind::Integer: return "integer";
    case ConfigValue::Kind::Real: return "real";
    case ConfigValue::Kind::String: return "string";
    case ConfigValue::Kind::List: return "list";
  }
  return "?";
}

[[noreturn]] void type_error(const std::string& key, const char* wanted, const ConfigValue& v) {
  fail(ErrorKind::InvalidConfig, "key '" + key + "' expects " + wanted + ", got " + kind_name(v.kind));
}

Index as_count(const std::string& key, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::Integer) type_error(key, "an integer", v);
  return static_cast<Index>(v.integer);
}

std::uint64_t as_seed(const std::string& key, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::Integer || v.integer < 0) type_error(key, "a non-negative integer", v);
  return static_cast<std::uint64_t>(v.integer);
}

double as_real(const std::string& key, const ConfigValue& v) {
  if (v.kind == ConfigValue::Kind::Integer) return static_cast<double>(v.integer);
  if (v.kind != ConfigValue::Kind::Real) type_error(key, "a number", v);
  return v.real;
}

bool as_bool(const std::string& key, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::Bool) type_error(key, "true or false", v);
  return v.boolean;
}

std::string as_string(const std::string& key, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::String) type_error(key, "a quoted string", v);
  return v.text;
}

std::vector<std::string> as_string_list(const std::string& key, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::List) type_error(key, "a list of strings", v);
  std::vector<std::string> out;
  for (const auto& item : v.items) out.push_back(as_string(key, item));
  return out;
}

std::vector<double> as_real_list(const std::string& key, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::List) type_error(key, "a list of numbers", v);
  std::vector<double> out;
  for (const auto& item : v.items) out.push_back(as_real(key, item));
  return out;
}

ConfigValue make_int(std::int64_t i) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::Integer;
  v.integer = i;
  return v;
}

ConfigValue make_real(double r) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::Real;
  v.real = r;
  return v;
}

ConfigValue make_bool(bool b) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::Bool;
  v.boolean = b;
  return v;
}

ConfigValue make_string(std::string s) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::String;
  v.text = std::move(s);
  return v;
}

template <typename T, typename F>
ConfigValue make_list(const std::vector<T>& items, F make) {
  ConfigValue v;
  v.kind = ConfigValue::Kind::List;
  for (const auto& x : items) v.items.push_back(make(x));
  return v;
}

std::string render(const std::vector<std::pair<std::string, ConfigValue>>& entries) {
  std::string out;
  for (const auto& [key, value] : entries) out += key + " = " + format_config_value(value) + "\n";
  return out;
}

}  // namespace

ConfigValue parse_config_value(std::string_view text) {
  text = trim(text);
  std::size_t pos = 0;
  ConfigValue v = parse_value_at(text, pos);
  skip_space(text, pos);
  if (pos != text.size()) bad_value(text, "trailing characters");
  return v;
}

std::vector<ConfigEntry> parse_config_text(std::string_view text) {
  std::vector<ConfigEntry> entries;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    const std::string_view raw = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    ConfigEntry entry;
    entry.key = std::string(trim(line.substr(0, eq)));
    entry.line = line_no;
    if (entry.key.empty()) fail(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": empty key");
    try {
      entry.value = parse_config_value(line.substr(eq + 1));
    } catch (const Error& e) {
      fail(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const auto& prev : entries)
      if (prev.key == entry.key)
        fail(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": duplicate key '" + entry.key + "'");
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::string format_config_value(const ConfigValue& value) {
  switch (value.kind) {
    case ConfigValue::Kind::Bool: return value.boolean ? "true" : "false";
    case ConfigValue::Kind::Integer: return std::to_string(value.integer);
    case ConfigValue::Kind::Real: {
      char buf[64];
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value.real);
      std::string s(buf, end);
      // Keep reals recognizable as reals when read back.
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      return s;
    }
    case ConfigValue::Kind::String: {
      std::string s = "\"";
      for (char c : value.text) {
        if (c == '"' || c == '\\') s += '\\';
        s += c;
      }
      return s + "\"";
    }
    case ConfigValue::Kind::List: {
      std::string s = "[";
      for (std::size_t i = 0; i < value.items.size(); ++i) {
        if (i) s += ", ";
        s += format_config_value(value.items[i]);
      }
      return s + "]";
    }
  }
  return {};
}

void RunConfig::validate() const {
  model.validate();
  require(split_ratio > 0.0 && split_ratio < 1.0, ErrorKind::InvalidConfig, "split_ratio must lie in (0, 1)");
  const auto names = preset_names();
  require(std::find(names.begin(), names.end(), preset) != names.end(), ErrorKind::InvalidConfig,
          "unknown preset '" + preset + "'");
}

std::vector<std::string> preset_names() { return {"toy", "riga-like", "prostate-like"}; }

RunConfig preset_config(std::string_view name) {
  RunConfig config;
  config.preset = std::string(name);
  FSAMConfig& m = config.model;
  if (name == "toy") {
    // Desk-scale defaults (FSAMConfig's own).
  } else if (name == "riga-like") {
    m.vit.image_size = 512;
    m.vit.patch_size = 16;
    m.vit.in_channels = 3;
    m.vit.embed_dim = 768;
    m.vit.depth = 12;
    m.vit.heads = 12;
    m.adapter_mid = 192;
    m.bank_size = 32;
    m.num_classes = 3;
    m.warmup_steps = 25;
  } else if (name == "prostate-like") {
    m.vit.image_size = 384;
    m.vit.patch_size = 16;
    m.vit.in_channels = 1;
    m.vit.embed_dim = 768;
    m.vit.depth = 12;
    m.vit.heads = 12;
    m.adapter_mid = 192;
    m.bank_size = 32;
    m.num_classes = 2;
    m.warmup_steps = 250;
  } else {
    fail(ErrorKind::InvalidConfig, "unknown preset '" + std::string(name) + "' (toy|riga-like|prostate-like)");
  }
  return config;
}

void apply_setting(RunConfig& c, const std::string& key, const ConfigValue& v) {
  FSAMConfig& m = c.model;
  if (key == "preset") c.preset = as_string(key, v);
  else if (key == "seed") m.seed = m.vit.seed = as_seed(key, v);
  else if (key == "image_size") m.vit.image_size = as_count(key, v);
  else if (key == "patch_size") m.vit.patch_size = as_count(key, v);
  else if (key == "in_channels") m.vit.in_channels = as_count(key, v);
  else if (key == "embed_dim") m.vit.embed_dim = as_count(key, v);
  else if (key == "depth") m.vit.depth = as_count(key, v);
  else if (key == "heads") m.vit.heads = as_count(key, v);
  else if (key == "mlp_ratio") m.vit.mlp_ratio = as_real(key, v);
  else if (key == "lora_rank") m.lora_rank = as_count(key, v);
  else if (key == "adapter_mid") m.adapter_mid = as_count(key, v);
  else if (key == "bank_size") m.bank_size = as_count(key, v);
  else if (key == "num_classes") m.num_classes = as_count(key, v);
  else if (key == "lambda") m.lambda = as_real(key, v);
  else if (key == "lr") m.lr = as_real(key, v);
  else if (key == "weight_decay") m.weight_decay = as_real(key, v);
  else if (key == "warmup_steps") m.warmup_steps = as_count(key, v);
  else if (key == "max_epochs") m.max_epochs = as_count(key, v);
  else if (key == "early_stop_epoch") m.early_stop_epoch = as_count(key, v);
  else if (key == "batch_size") m.batch_size = as_count(key, v);
  else if (key == "use_frequency") m.use_frequency = as_bool(key, v);
  else if (key == "data_root") c.data_root = as_string(key, v);
  else if (key == "source_domain") c.source_domain = as_string(key, v);
  else if (key == "out_dir") c.out_dir = as_string(key, v);
  else if (key == "eval_targets") c.eval_targets = as_string_list(key, v);
  else if (key == "split_ratio") c.split_ratio = as_real(key, v);
  else fail(ErrorKind::InvalidConfig, "unknown key '" + key + "'");
}

RunConfig resolve_run_config(const std::vector<ConfigEntry>& entries, const std::string& preset_override) {
  std::string preset = "toy";
  for (const auto& e : entries)
    if (e.key == "preset") preset = as_string(e.key, e.value);
  if (!preset_override.empty()) preset = preset_override;
  RunConfig config = preset_config(preset);
  for (const auto& e : entries) {
    if (e.key == "preset") continue;
    try {
      apply_setting(config, e.key, e.value);
    } catch (const Error& err) {
      fail(err.kind(), "line " + std::to_string(e.line) + ": " + err.what());
    }
  }
  return config;
}

std::string render_config(const RunConfig& c) {
  const FSAMConfig& m = c.model;
  auto i = [](Index x) { return make_int(static_cast<std::int64_t>(x)); };
  return render({
      {"preset", make_string(c.preset)},
      {"seed", make_int(static_cast<std::int64_t>(m.seed))},
      {"image_size", i(m.vit.image_size)},
      {"patch_size", i(m.vit.patch_size)},
      {"in_channels", i(m.vit.in_channels)},
      {"embed_dim", i(m.vit.embed_dim)},
      {"depth", i(m.vit.depth)},
      {"heads", i(m.vit.heads)},
      {"mlp_ratio", make_real(m.vit.mlp_ratio)},
      {"lora_rank", i(m.lora_rank)},
      {"adapter_mid", i(m.adapter_mid)},
      {"bank_size", i(m.bank_size)},
      {"num_classes", i(m.num_classes)},
      {"lambda", make_real(m.lambda)},
      {"lr", make_real(m.lr)},
      {"weight_decay", make_real(m.weight_decay)},
      {"warmup_steps", i(m.warmup_steps)},
      {"max_epochs", i(m.max_epochs)},
      {"early_stop_epoch", i(m.early_stop_epoch)},
      {"batch_size", i(m.batch_size)},
      {"use_frequency", make_bool(m.use_frequency)},
      {"data_root", make_string(c.data_root)},
      {"source_domain", make_string(c.source_domain)},
      {"out_dir", make_string(c.out_dir)},
      {"eval_targets", make_list(c.eval_targets, make_string)},
      {"split_ratio", make_real(c.split_ratio)},
  });
}

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec spec;
  spec.num_domains = 3;
  spec.gains = {1.0, 2.0, 0.5};
  spec.noise = {0.0, 0.01, 0.02};
  return spec;
}

void apply_setting(SyntheticSpec& s, const std::string& key, const ConfigValue& v) {
  if (key == "num_domains") s.num_domains = as_count(key, v);
  else if (key == "samples_per_domain") s.samples_per_domain = as_count(key, v);
  else if (key == "image_size") s.image_size = as_count(key, v);
  else if (key == "shape_family") s.shape_family = parse_shape_family(as_string(key, v));
  else if (key == "gains") s.gains = as_real_list(key, v);
  else if (key == "noise") s.noise = as_real_list(key, v);
  else if (key == "band_fraction") s.band_fraction = as_real(key, v);
  else if (key == "seed") s.seed = as_seed(key, v);
  else fail(ErrorKind::InvalidConfig, "unknown key '" + key + "'");
}

SyntheticSpec resolve_synthetic_spec(const std::vector<ConfigEntry>& entries) {
  SyntheticSpec spec = default_synthetic_spec();
  bool gains_set = false, noise_set = false;
  for (const auto& e : entries) {
    try {
      apply_setting(spec, e.key, e.value);
    } catch (const Error& err) {
      fail(err.kind(), "line " + std::to_string(e.line) + ": " + err.what());
    }
    gains_set |= e.key == "gains";
    noise_set |= e.key == "noise";
  }
  // A bare domain count gets neutral appearance for the unspecified lists.
  if (!gains_set && static_cast<Index>(spec.gains.size()) != spec.num_domains)
    spec.gains.assign(static_cast<std::size_t>(std::max<Index>(spec.num_domains, 0)), 1.0);
  if (!noise_set && static_cast<Index>(spec.noise.size()) != spec.num_domains)
    spec.noise.assign(static_cast<std::size_t>(std::max<Index>(spec.num_domains, 0)), 0.0);
  spec.validate();
  return spec;
}

std::string render_config(const SyntheticSpec& s) {
  auto i = [](Index x) { return make_int(static_cast<std::int64_t>(x)); };
  return render({
      {"num_domains", i(s.num_domains)},
      {"samples_per_domain", i(s.samples_per_domain)},
      {"image_size", i(s.image_size)},
      {"shape_family", make_string(std::string(to_string(s.shape_family)))},
      {"gains", make_list(s.gains, make_real)},
      {"noise", make_list(s.noise, make_real)},
      {"band_fraction", make_real(s.band_fraction)},
      {"seed", make_int(static_cast<std::int64_t>(s.seed))},
  });
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::MissingInput, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fsam
