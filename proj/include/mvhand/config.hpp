#pragma once

// Experiment configuration: one flat table of `section.key = value` entries
// covering data generation, model dimensions, fusion and adaptation choices,
// and the optimizer. Files are UTF-8, one entry per line, `#` comments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvhand/reconstructor.hpp"
#include "mvhand/sima.hpp"
#include "mvhand/synthdata.hpp"

namespace mvhand {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TargetViewPolicy { kSampled, kFixed };

struct ExperimentConfig {
  // data
  std::string train_data, val_data, test_data;
  int data_count = 2000;
  std::uint64_t data_seed = 1;
  SynthConfig synth;

  recon::ModelConfig model;

  // adaptation
  bool sima = true;  // distillation terms in stage 2
  double beta = 1.0, gamma = 1.0;
  sima::Variant variant = sima::Variant::kVertexEnhanced;
  bool distill_mse = false;
  bool cache_teacher = false;
  bool init_from_mvr = false;

  // optimizer
  int iterations = 5000;
  int batch = 16;
  double lr = 1e-3;
  double decay_at = 0.7;  // fraction of the run after which lr is scaled
  double decay_factor = 0.1;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 1;
  TargetViewPolicy target_view = TargetViewPolicy::kSampled;

  // cadence and output
  int eval_every = 500;
  int val_samples = 0;  // 0: the whole validation set
  int checkpoint_every = 0;
  std::string out_dir;

  // evaluation
  double occlusion_threshold = 0.3;
  double auc_max = 50.0;
  int auc_steps = 100;
  bool rigid_pa = false;

  /// Applies `key=value`; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void set(const std::string& assignment);
  std::string get(const std::string& key) const;

  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(const std::string& text);
  static std::vector<std::string> keys();

  /// Hash over the keys that determine parameter names and shapes.
  std::string structural_hash() const;
  /// Hash over every key.
  std::string config_hash() const;

  void validate() const;
};

}  // namespace mvhand
