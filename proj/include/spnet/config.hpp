// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_CONFIG_HPP_
#define SPNET_CONFIG_HPP_

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spnet/network.hpp"
#include "spnet/training.hpp"

namespace spnet {

/// Everything a run needs besides the data: the model and the schedule.
struct RunConfig {
  ModelSpec model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate(model);
  }
};

namespace config_detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || p != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline int to_bits(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (!t.empty() && t[0] == '-') throw ConfigError(key + ": must be in [1, 32], got " + t);
  const auto b = to_uint(key, t);
  if (b < 1 || b > 32) throw ConfigError(key + ": must be in [1, 32], got " + t);
  return static_cast<int>(b);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const auto s = lower(v);
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> to_list(const std::string& key, const std::string& v, const std::string& empty_word) {
  if (lower(v) == empty_word) return {};
  std::vector<std::size_t> out;
  for (const auto& item : split(v, ',')) out.push_back(static_cast<std::size_t>(to_uint(key, item)));
  return out;
}

inline std::string join(const std::vector<std::size_t>& xs, const std::string& empty_word) {
  if (xs.empty()) return empty_word;
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + std::to_string(xs[i]);
  return s;
}

template <typename E>
E to_enum(const std::string& key, const std::string& v, const std::vector<std::pair<std::string, E>>& names) {
  const auto s = lower(v);
  std::string options;
  for (const auto& [name, e] : names) {
    if (name == s) return e;
    options += (options.empty() ? "" : ", ") + name;
  }
  throw ConfigError(key + ": unknown value '" + v + "' (expected one of " + options + ")");
}

template <typename E>
std::string enum_name(E e, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [name, v] : names) {
    if (v == e) return name;
  }
  throw ConfigError("unnamed enum value");
}

// First name per value is canonical; later ones are accepted synonyms.
inline const std::vector<std::pair<std::string, Architecture>> kArchitectures{
    {"plain_cnn", Architecture::PlainCNN}, {"mini_resnet", Architecture::MiniResNet}};
inline const std::vector<std::pair<std::string, QuantizerFamily>> kFamilies{
    {"tanh_relu", QuantizerFamily::TanhWeightsReLUActs},
    {"relu", QuantizerFamily::TanhWeightsReLUActs},
    {"tanh", QuantizerFamily::TanhBased},
    {"log", QuantizerFamily::LogWeightsLogActs},
    {"tanh_log", QuantizerFamily::TanhWeightsLogActs}};
inline const std::vector<std::pair<std::string, OrderingChoice>> kOrderings{
    {"auto", OrderingChoice::Auto},
    {"conv_bn_relu", OrderingChoice::ConvBnRelu},
    {"conv_relu_bn", OrderingChoice::ConvReluBn}};
inline const std::vector<std::pair<std::string, OptimizerKind>> kOptimizers{{"sgd", OptimizerKind::SGD},
                                                                            {"adam", OptimizerKind::Adam}};
inline const std::vector<std::pair<std::string, Distillation>> kDistillation{
    {"off", Distillation::Off}, {"out", Distillation::OutOnly}, {"out_feature", Distillation::OutPlusFeature}};

/// "(1,1,1.0),(1,32,0.5)" -> switch list.
inline std::vector<SwitchConfig> to_switches(const std::string& key, const std::string& v) {
  std::vector<SwitchConfig> out;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < v.size() && std::isspace(static_cast<unsigned char>(v[i]))) ++i;
  };
  skip_ws();
  while (i < v.size()) {
    if (v[i] != '(') throw ConfigError(key + ": expected '(' at column " + std::to_string(i + 1) + " of '" + v + "'");
    const auto close = v.find(')', i);
    if (close == std::string::npos) throw ConfigError(key + ": unterminated switch in '" + v + "'");
    const auto parts = split(std::string_view(v).substr(i + 1, close - i - 1), ',');
    if (parts.size() != 3) {
      throw ConfigError(key + ": each switch is (bits_w,bits_a,width), got '" + v.substr(i, close - i + 1) + "'");
    }
    SwitchConfig s;
    s.bits_w = to_bits("bits_w", parts[0]);
    s.bits_a = to_bits("bits_a", parts[1]);
    try {
      s.width = Width::parse(parts[2]);
    } catch (const ValueError& e) {
      throw ConfigError("width: " + std::string(e.what()));
    }
    out.push_back(s);
    i = close + 1;
    skip_ws();
    if (i < v.size()) {
      if (v[i] != ',') throw ConfigError(key + ": expected ',' between switches in '" + v + "'");
      ++i;
      skip_ws();
      if (i == v.size()) throw ConfigError(key + ": trailing ',' in '" + v + "'");
    }
  }
  if (out.empty()) throw ConfigError(key + ": the switch list must not be empty");
  return out;
}

inline std::string switches_text(const std::vector<SwitchConfig>& sw) {
  std::string s;
  for (std::size_t i = 0; i < sw.size(); ++i) s += (i ? ", " : "") + sw[i].to_string();
  return s;
}

}  // namespace config_detail

/// Parses the line-oriented `key = value` format with [model] and [train]
/// sections. '#' and ';' start comments. A single switch may also be given
/// as bits_w / bits_a / width instead of a switches list. Syntax errors
/// carry the line number; semantic errors name the key.
inline RunConfig parse_config(const std::string& text) {
  using namespace config_detail;
  RunConfig rc;
  ModelSpec& m = rc.model;
  TrainConfig& t = rc.train;
  std::optional<int> bits_w, bits_a;
  std::optional<Width> width;
  bool have_switches = false;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, std::map<std::string, Setter>> keys{
      {"model",
       {
           {"architecture", [&](auto& k, auto& v) { m.architecture = to_enum(k, v, kArchitectures); }},
           {"family", [&](auto& k, auto& v) { m.family = to_enum(k, v, kFamilies); }},
           {"input_channels", [&](auto& k, auto& v) { m.input_channels = to_uint(k, v); }},
           {"num_classes", [&](auto& k, auto& v) { m.num_classes = to_uint(k, v); }},
           {"stem_channels", [&](auto& k, auto& v) { m.stem_channels = to_uint(k, v); }},
           {"channels", [&](auto& k, auto& v) { m.channels = to_list(k, v, "default"); }},
           {"strides", [&](auto& k, auto& v) { m.strides = to_list(k, v, "default"); }},
           {"switches",
            [&](auto& k, auto& v) {
              m.switches = to_switches(k, v);
              have_switches = true;
            }},
           {"bits_w", [&](auto& k, auto& v) { bits_w = to_bits(k, v); }},
           {"bits_a", [&](auto& k, auto& v) { bits_a = to_bits(k, v); }},
           {"width",
            [&](auto& k, auto& v) {
              try {
                width = Width::parse(v);
              } catch (const ValueError& e) {
                throw ConfigError(k + ": " + e.what());
              }
            }},
           {"ordering", [&](auto& k, auto& v) { m.ordering = to_enum(k, v, kOrderings); }},
           {"clip_full_precision", [&](auto& k, auto& v) { m.clip_full_precision = to_bool(k, v); }},
           {"shared_bn", [&](auto& k, auto& v) { m.shared_bn = to_bool(k, v); }},
           {"taps", [&](auto& k, auto& v) { m.taps = to_list(k, v, "all"); }},
       }},
      {"train",
       {
           {"optimizer", [&](auto& k, auto& v) { t.optimizer = to_enum(k, v, kOptimizers); }},
           {"lr", [&](auto& k, auto& v) { t.lr = to_double(k, v); }},
           {"momentum", [&](auto& k, auto& v) { t.momentum = to_double(k, v); }},
           {"weight_decay", [&](auto& k, auto& v) { t.weight_decay = to_double(k, v); }},
           {"beta1", [&](auto& k, auto& v) { t.beta1 = to_double(k, v); }},
           {"beta2", [&](auto& k, auto& v) { t.beta2 = to_double(k, v); }},
           {"adam_eps", [&](auto& k, auto& v) { t.adam_eps = to_double(k, v); }},
           {"milestones", [&](auto& k, auto& v) { t.milestones = to_list(k, v, "none"); }},
           {"lr_decay", [&](auto& k, auto& v) { t.lr_decay = to_double(k, v); }},
           {"epochs", [&](auto& k, auto& v) { t.epochs = to_uint(k, v); }},
           {"batch_size", [&](auto& k, auto& v) { t.batch_size = to_uint(k, v); }},
           {"distillation", [&](auto& k, auto& v) { t.distillation = to_enum(k, v, kDistillation); }},
           {"alpha1", [&](auto& k, auto& v) { t.alpha1 = to_double(k, v); }},
           {"alpha2", [&](auto& k, auto& v) { t.alpha2 = to_double(k, v); }},
           {"seed", [&](auto& k, auto& v) { t.seed = to_uint(k, v); }},
           {"augment", [&](auto& k, auto& v) { t.augment = to_bool(k, v); }},
           {"val_fraction", [&](auto& k, auto& v) { t.val_fraction = to_double(k, v); }},
           {"checkpoint_every", [&](auto& k, auto& v) { t.checkpoint_every = to_uint(k, v); }},
           {"record_time", [&](auto& k, auto& v) { t.record_time = to_bool(k, v); }},
       }},
  };

  std::string section;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string line = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const auto where = "line " + std::to_string(lineno) + ": ";
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header '" + line + "'");
      section = lower(trim(line.substr(1, line.size() - 2)));
      if (!keys.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const auto key = lower(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' appears before any [section]");
    const auto& table = keys.at(section);
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(where + "duplicate key '" + key + "' in [" + section + "]");
    }
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }

  if (bits_w || bits_a || width) {
    if (have_switches) throw ConfigError("switches: give either a switches list or bits_w/bits_a/width, not both");
    m.switches = {SwitchConfig{bits_w.value_or(32), bits_a.value_or(32), width.value_or(Width{})}};
  }
  rc.validate();
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_config(std::string(bytes.begin(), bytes.end()));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Canonical text: every key, fixed order, resolved defaults. Parsing the
/// output and emitting again reproduces it exactly.
inline std::string emit_canonical(const RunConfig& rc) {
  using namespace config_detail;
  const auto& m = rc.model;
  const auto& t = rc.train;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  s += "[model]\n";
  kv("architecture", enum_name(m.architecture, kArchitectures));
  kv("family", enum_name(m.family, kFamilies));
  kv("input_channels", std::to_string(m.input_channels));
  kv("num_classes", std::to_string(m.num_classes));
  kv("stem_channels", std::to_string(m.stem_channels));
  kv("channels", join(m.resolved_channels(), "default"));
  kv("strides", join(m.resolved_strides(), "default"));
  kv("switches", switches_text(m.switches));
  kv("ordering", enum_name(m.ordering, kOrderings));
  kv("clip_full_precision", b(m.clip_full_precision));
  kv("shared_bn", b(m.shared_bn));
  kv("taps", join(m.taps, "all"));
  s += "\n[train]\n";
  kv("optimizer", enum_name(t.optimizer, kOptimizers));
  kv("lr", format_double(t.lr));
  kv("momentum", format_double(t.momentum));
  kv("weight_decay", format_double(t.weight_decay));
  kv("beta1", format_double(t.beta1));
  kv("beta2", format_double(t.beta2));
  kv("adam_eps", format_double(t.adam_eps));
  kv("milestones", join(t.milestones, "none"));
  kv("lr_decay", format_double(t.lr_decay));
  kv("epochs", std::to_string(t.epochs));
  kv("batch_size", std::to_string(t.batch_size));
  kv("distillation", enum_name(t.distillation, kDistillation));
  kv("alpha1", format_double(t.alpha1));
  kv("alpha2", format_double(t.alpha2));
  kv("seed", std::to_string(t.seed));
  kv("augment", b(t.augment));
  kv("val_fraction", format_double(t.val_fraction));
  kv("checkpoint_every", std::to_string(t.checkpoint_every));
  kv("record_time", b(t.record_time));
  return s;
}

}  // namespace spnet

#endif  // SPNET_CONFIG_HPP_
