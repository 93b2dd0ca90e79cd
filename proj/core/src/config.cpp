#include "alff/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "alff/csv.hpp"

namespace alff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  if (!parse_double(value, &v)) bad_value(key, value);
  return v;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& value) {
  Int v{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || end != value.data() + value.size()) bad_value(key, value);
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  bad_value(key, value);
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Int>
Field int_field(Int RunConfig::*member, const char* key) {
  return {[member, key](RunConfig& c, const std::string& v) {
            c.*member = to_int<Int>(key, v);
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double RunConfig::*member, const char* key) {
  return {[member, key](RunConfig& c, const std::string& v) { c.*member = to_double(key, v); },
          [member](const RunConfig& c) { return format_number(c.*member); }};
}

Field string_field(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

Field bool_field(bool RunConfig::*member, const char* key) {
  return {[member, key](RunConfig& c, const std::string& v) { c.*member = to_bool(key, v); },
          [member](const RunConfig& c) { return from_bool(c.*member); }};
}

Field nested_double(double NoiseConfig::*member, const char* key) {
  return {[member, key](RunConfig& c, const std::string& v) { c.noise.*member = to_double(key, v); },
          [member](const RunConfig& c) { return format_number(c.noise.*member); }};
}

Field weight_field(double LossWeights::*member, const char* key) {
  return {[member, key](RunConfig& c, const std::string& v) { c.weights.*member = to_double(key, v); },
          [member](const RunConfig& c) { return format_number(c.weights.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"dataset", string_field(&RunConfig::dataset)},
      {"test_dataset", string_field(&RunConfig::test_dataset)},
      {"image_size", int_field(&RunConfig::image_size, "image_size")},
      {"epochs", int_field(&RunConfig::epochs, "epochs")},
      {"batch_size", int_field(&RunConfig::batch_size, "batch_size")},
      {"lr", double_field(&RunConfig::lr, "lr")},
      {"weight_decay", double_field(&RunConfig::weight_decay, "weight_decay")},
      {"momentum", double_field(&RunConfig::momentum, "momentum")},
      {"warmup_epochs", int_field(&RunConfig::warmup_epochs, "warmup_epochs")},
      {"final_lr_ratio", double_field(&RunConfig::final_lr_ratio, "final_lr_ratio")},
      {"alpha", nested_double(&NoiseConfig::alpha, "alpha")},
      {"mu", nested_double(&NoiseConfig::mu, "mu")},
      {"sigma_n", nested_double(&NoiseConfig::sigma_n, "sigma_n")},
      {"noise_mode",
       {[](RunConfig& c, const std::string& v) { c.noise.mode = parse_noise_mode(v); },
        [](const RunConfig& c) { return to_string(c.noise.mode); }}},
      {"w_box", weight_field(&LossWeights::box, "w_box")},
      {"w_cls", weight_field(&LossWeights::cls, "w_cls")},
      {"w_dfl", weight_field(&LossWeights::dfl, "w_dfl")},
      {"w_aux", weight_field(&LossWeights::aux, "w_aux")},
      {"enable_alff", bool_field(&RunConfig::enable_alff, "enable_alff")},
      {"enable_ncdfl", bool_field(&RunConfig::enable_ncdfl, "enable_ncdfl")},
      {"seed", int_field(&RunConfig::seed, "seed")},
      {"checkpoint", string_field(&RunConfig::checkpoint)},
      {"loss_csv", string_field(&RunConfig::loss_csv)},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& [name, field] : fields()) {
    if (name == key) return field;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (image_size <= 0 || image_size % 32 != 0) fail("image_size must be a positive multiple of 32");
  if (epochs < 0) fail("epochs must be non-negative");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (warmup_epochs < 0) fail("warmup_epochs must be non-negative");
  if (!(final_lr_ratio > 0.0 && final_lr_ratio <= 1.0)) fail("final_lr_ratio must be in (0, 1]");
  noise.validate();
  weights.validate();
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set_config_value(base, key, trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), std::move(base));
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(cfg) + "\n";
  return out;
}

void apply_seed_env(RunConfig& cfg) {
  const char* env = std::getenv("ALFF_SEED");
  if (env == nullptr) return;
  set_config_value(cfg, "seed", env);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& entry : fields()) keys.push_back(entry.first);
  return keys;
}

}  // namespace alff
