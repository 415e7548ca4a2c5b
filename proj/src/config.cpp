#include "rotinv/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "rotinv/errors.hpp"

namespace rotinv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw std::invalid_argument(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument(key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw std::invalid_argument(key + ": empty width list");
  return out;
}

std::string widths_text(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::unordered_map<std::string, Setter>& setters() {
  static const std::unordered_map<std::string, Setter> table = {
      {"frame", [](RunConfig& c, auto&, auto& v) { c.model.frame_kind = frames::frame_kind_from_string(v); }},
      {"rpr", [](RunConfig& c, auto&, auto& v) { c.model.rpr = net::rpr_source_from_string(v); }},
      {"fusion", [](RunConfig& c, auto&, auto& v) { c.model.fusion = net::fusion_from_string(v); }},
      {"lambda_orth", [](RunConfig& c, auto& k, auto& v) { c.model.lambda_orth = to_double(k, v); }},
      {"lambda_consist", [](RunConfig& c, auto& k, auto& v) { c.model.lambda_consist = to_double(k, v); }},
      {"orth_variant",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "signed") c.model.orth_variant = frames::OrthogonalityVariant::signed_dot;
         else if (v == "squared") c.model.orth_variant = frames::OrthogonalityVariant::squared;
         else throw std::invalid_argument(k + ": expected signed or squared, got '" + v + "'");
       }},
      {"vn_widths", [](RunConfig& c, auto& k, auto& v) { c.model.vn_widths = to_widths(k, v); }},
      {"inv_widths", [](RunConfig& c, auto& k, auto& v) { c.model.inv_widths = to_widths(k, v); }},
      {"k", [](RunConfig& c, auto& k, auto& v) { c.model.k = to_size(k, v); }},
      {"head_channels", [](RunConfig& c, auto& k, auto& v) { c.model.head_channels = to_size(k, v); }},
      {"fusion_width", [](RunConfig& c, auto& k, auto& v) { c.model.fusion_width = to_size(k, v); }},
      {"classifier_hidden", [](RunConfig& c, auto& k, auto& v) { c.model.classifier_hidden = to_size(k, v); }},
      {"gate_hidden", [](RunConfig& c, auto& k, auto& v) { c.model.gate_hidden = to_size(k, v); }},
      {"classes", [](RunConfig& c, auto& k, auto& v) { c.model.num_classes = to_size(k, v); }},
      {"seed",
       [](RunConfig& c, auto& k, auto& v) {
         c.model.seed = to_u64(k, v);
         c.train.seed = c.model.seed;
       }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = to_size(k, v); }},
      {"batch", [](RunConfig& c, auto& k, auto& v) { c.train.batch = to_size(k, v); }},
      {"lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = to_double(k, v); }},
      {"momentum", [](RunConfig& c, auto& k, auto& v) { c.train.momentum = to_double(k, v); }},
      {"weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = to_double(k, v); }},
      {"grad_clip", [](RunConfig& c, auto& k, auto& v) { c.train.grad_clip = to_double(k, v); }},
      {"repeats", [](RunConfig& c, auto& k, auto& v) { c.train.repeats = to_size(k, v); }},
      {"diagnostics_every", [](RunConfig& c, auto& k, auto& v) { c.train.diagnostics_every = to_size(k, v); }},
      {"points", [](RunConfig& c, auto& k, auto& v) { c.data.points = to_size(k, v); }},
      {"train_per_class", [](RunConfig& c, auto& k, auto& v) { c.data.train_per_class = to_size(k, v); }},
      {"test_per_class", [](RunConfig& c, auto& k, auto& v) { c.data.test_per_class = to_size(k, v); }},
      {"data_seed", [](RunConfig& c, auto& k, auto& v) { c.data.seed = to_u64(k, v); }},
      {"jitter", [](RunConfig& c, auto& k, auto& v) { c.data.jitter = to_bool(k, v); }},
  };
  return table;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  net::ModelConfig p = net::preset(name);
  // A preset fixes the architecture switches; sizes and seed stay as configured.
  cfg.model.name = p.name;
  cfg.model.frame_kind = p.frame_kind;
  cfg.model.rpr = p.rpr;
  cfg.model.fusion = p.fusion;
  cfg.model.lambda_orth = p.lambda_orth;
  cfg.model.lambda_consist = p.lambda_consist;
}

}  // namespace

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    apply_preset(cfg, value);
    return;
  }
  auto it = setters().find(key);
  if (it == setters().end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (key != "preset" && !setters().contains(key))
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" +
                                  key + "'");
    entries.emplace_back(std::move(key), std::move(value));
  }
  for (const auto& [k, v] : entries)
    if (k == "preset") apply_config_key(base, k, v);
  for (const auto& [k, v] : entries)
    if (k != "preset") apply_config_key(base, k, v);
  base.model.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_config_text(const RunConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& d = cfg.data;
  std::ostringstream o;
  o.precision(17);
  // A known preset name survives as a preset line; the explicit keys below
  // override whatever it sets.
  const auto names = net::preset_names();
  if (std::find(names.begin(), names.end(), m.name) != names.end()) o << "preset = " << m.name << '\n';
  else o << "# model " << m.name << '\n';
  o << "frame = " << frames::to_string(m.frame_kind) << '\n'
    << "rpr = " << net::to_string(m.rpr) << '\n'
    << "fusion = " << net::to_string(m.fusion) << '\n'
    << "lambda_orth = " << m.lambda_orth << '\n'
    << "lambda_consist = " << m.lambda_consist << '\n'
    << "orth_variant = "
    << (m.orth_variant == frames::OrthogonalityVariant::squared ? "squared" : "signed") << '\n'
    << "vn_widths = " << widths_text(m.vn_widths) << '\n'
    << "inv_widths = " << widths_text(m.inv_widths) << '\n'
    << "k = " << m.k << '\n'
    << "head_channels = " << m.head_channels << '\n'
    << "fusion_width = " << m.fusion_width << '\n'
    << "classifier_hidden = " << m.classifier_hidden << '\n'
    << "gate_hidden = " << m.gate_hidden << '\n'
    << "classes = " << m.num_classes << '\n'
    << "seed = " << m.seed << '\n'
    << "epochs = " << t.epochs << '\n'
    << "batch = " << t.batch << '\n'
    << "lr = " << t.lr << '\n'
    << "momentum = " << t.momentum << '\n'
    << "weight_decay = " << t.weight_decay << '\n'
    << "grad_clip = " << t.grad_clip << '\n'
    << "repeats = " << t.repeats << '\n'
    << "diagnostics_every = " << t.diagnostics_every << '\n'
    << "points = " << d.points << '\n'
    << "train_per_class = " << d.train_per_class << '\n'
    << "test_per_class = " << d.test_per_class << '\n'
    << "data_seed = " << d.seed << '\n'
    << "jitter = " << (d.jitter ? "true" : "false") << '\n';
  return o.str();
}

RunConfig desk_profile() {
  RunConfig c;
  c.model.vn_widths = {8, 16};
  c.model.inv_widths = {32, 32};
  c.model.k = 10;
  c.model.fusion_width = 32;
  c.model.classifier_hidden = 32;
  c.model.gate_hidden = 16;
  c.train.epochs = 30;
  c.train.batch = 8;
  c.train.lr = 0.05;
  c.train.grad_clip = 5.0;
  c.train.repeats = 3;
  c.train.diagnostics_every = 10;
  c.data.points = 64;
  c.data.train_per_class = 40;
  c.data.test_per_class = 20;
  return c;
}

}  // namespace rotinv
