#pragma once

// Two-stage training (multi-view model first, then the single-view model
// with a frozen multi-view teacher), evaluation, checkpoints, ablation
// presets.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvhand/config.hpp"
#include "mvhand/container.hpp"
#include "mvhand/grad_check.hpp"
#include "mvhand/losses.hpp"
#include "mvhand/metrics.hpp"
#include "mvhand/reconstructor.hpp"

namespace mvhand::harness {

using Dataset = std::vector<MultiViewSample>;
using recon::Mvr;
using recon::Svr;
using ParamsF = nn::ParamList<float>;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const HandTemplate& hand_template();

// ---- optimizer --------------------------------------------------------------

/// Adam with bias correction; moments are keyed by parameter name.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}
  /// Consumes Parameter::grad (missing gradients count as zero) and clears it.
  void step(const ParamsF& params, double lr);
  std::int64_t steps() const { return t_; }

  std::map<std::string, Matrix<float>> m, v;

 private:
  friend void restore_adam(const TensorContainer&, Adam&);
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

/// lr for 0-based `iteration`: base rate, scaled once the run passes decay_at.
double learning_rate(const ExperimentConfig& cfg, int iteration);

// ---- schedule ---------------------------------------------------------------

struct BatchItem {
  int sample = 0;
  int view = 0;
};

/// Which samples and target views make up each batch. A pure function of
/// (seed, iteration): every epoch is a fresh permutation of the dataset,
/// and a sampled target view is drawn per (epoch, sample).
class Schedule {
 public:
  Schedule(const Dataset& data, std::uint64_t seed, int batch, TargetViewPolicy policy);
  std::vector<BatchItem> batch(int iteration) const;

 private:
  const std::vector<int>& permutation(std::int64_t epoch) const;
  const Dataset* data_;
  std::uint64_t seed_;
  int batch_;
  TargetViewPolicy policy_;
  mutable std::map<std::int64_t, std::vector<int>> perms_;
};

// ---- checkpoints --------------------------------------------------------------

struct CheckpointInfo {
  std::string model;  // "mvr" or "svr"
  int stage = 1;
  int iteration = 0;
  double best_val_vpe = -1;
  int best_iteration = -1;
  ExperimentConfig config;
};

void save_checkpoint(const std::filesystem::path& dir, const CheckpointInfo& info, const ParamsF& params,
                     const Adam* adam = nullptr);
CheckpointInfo checkpoint_info(const TensorContainer& c);
/// Copies every parameter of `params` from the container; missing names or
/// shape mismatches throw CheckpointError.
void load_parameters(const TensorContainer& c, const ParamsF& params);
void restore_adam(const TensorContainer& c, Adam& adam);
/// Throws CheckpointError when the container's structural hash differs.
void require_structure(const TensorContainer& c, const ExperimentConfig& cfg);

/// Hash of every parameter's name, shape and bytes.
std::string parameter_hash(const ParamsF& params);

// ---- training ---------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path resume_from;  // a checkpoint written by a previous run of the same stage
  int stop_after = -1;                // end early (after this many iterations) and write `last`
  bool verbose = false;
  std::function<void(int iteration, const losses::LossReport&)> on_step;
};

struct TrainSummary {
  int iterations = 0;
  double best_val_vpe = -1;
  int best_iteration = -1;
  std::vector<double> loss;  // batch-mean L_Total per iteration of this run
  double seconds = 0;
};

TrainSummary train_mvr(const ExperimentConfig& cfg, Mvr<float>& model, const Dataset& train, const Dataset* val,
                       const TrainOptions& options = {});

/// `teacher` is required when cfg.sima is on; it is used read-only and any
/// change to its parameters during the run raises TrainingError.
TrainSummary train_svr(const ExperimentConfig& cfg, Svr<float>& model, Mvr<float>* teacher, const Dataset& train,
                       const Dataset* val, const TrainOptions& options = {});

/// Copies the shared trunk weights of a trained multi-view model.
void init_svr_from_mvr(Svr<float>& svr, Mvr<float>& mvr);

// ---- evaluation ---------------------------------------------------------------

metrics::MetricOptions metric_options(const ExperimentConfig& cfg);

/// World-frame predictions (rows p -> R p) for each sample's fixed target
/// view; `limit` > 0 evaluates only the first samples.
metrics::MetricReport evaluate_svr(Svr<float>& model, const Dataset& data, const metrics::MetricOptions& options,
                                   int limit = 0);
metrics::MetricReport evaluate_mvr(Mvr<float>& model, const Dataset& data, const metrics::MetricOptions& options,
                                   int limit = 0);

// ---- ablations ----------------------------------------------------------------

struct AblationRow {
  std::string variant;
  metrics::MetricBlock all, occluded;
  double seconds = 0;
};

std::vector<std::string> ablation_presets();
/// Trains every variant of `preset` on `train` with shared seeds and
/// evaluates on `test`. Presets: fusion-variants (multi-view model, vertex
/// fusion concat / pool / attention), ofe-variants (single-view model,
/// off / concat / attention), distill-stages (single-view model with a
/// shared teacher, the five distillation placements).
std::vector<AblationRow> run_ablation(const std::string& preset, const ExperimentConfig& base, const Dataset& train,
                                      const Dataset& test, bool verbose = false);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// ---- gradient check -------------------------------------------------------------

/// Central-difference check of the full single-view L_Total (reconstruction
/// terms plus both distillation terms against fixed teacher tensors) over
/// every parameter of a float64 model built from `config`, at a point
/// conditioned so that every coordinate is resolvable.
GradCheckResult svr_total_grad_check(const recon::ModelConfig& config, std::uint64_t sample_seed = 17,
                                     double eps = 1e-5);

}  // namespace mvhand::harness
