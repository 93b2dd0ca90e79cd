#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "alff/losses.hpp"

namespace alff {

/// Everything a training or evaluation run depends on.
struct RunConfig {
  std::string dataset;
  std::string test_dataset;
  int image_size = 160;
  int epochs = 50;
  int batch_size = 16;
  double lr = 1e-2;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int warmup_epochs = 0;
  double final_lr_ratio = 0.01;  // linear decay to lr * ratio over the run
  NoiseConfig noise;
  LossWeights weights;
  bool enable_alff = true;
  bool enable_ncdfl = true;
  std::uint64_t seed = 0;
  std::string checkpoint = "checkpoint.bin";
  std::string loss_csv = "loss.csv";

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Sets one key from its text value. Throws std::invalid_argument on an
/// unknown key or a value that does not parse.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// `key = value` lines; blank lines and `#` comments are ignored. Keys not
/// present keep the values already in `base`.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key, fixed order, one `key = value` per line.
std::string serialize_config(const RunConfig& cfg);

/// Replaces the seed when ALFF_SEED is set; throws when it is not an integer.
void apply_seed_env(RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace alff
