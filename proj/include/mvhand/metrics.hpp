#pragma once

// Evaluation: Procrustes alignment, position errors, PCK-AUC, F-scores and
// an occlusion-bucketed report.

#include <string>
#include <vector>

#include "json.hpp"
#include "mvhand/common.hpp"

namespace mvhand::metrics {

struct Alignment {
  Matrix<double> aligned;  // scale * R * p + t for every row p
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  bool degenerate = false;  // pred points collinear: rotation about the line is arbitrary
};

/// Closed-form least-squares similarity (or rigid, with_scale = false)
/// transform of pred onto gt via the SVD of the cross-covariance, with the
/// reflection corrected so the rotation is proper.
Alignment procrustes_align(const Matrix<double>& pred, const Matrix<double>& gt, bool with_scale = true);

std::vector<double> point_errors(const Matrix<double>& pred, const Matrix<double>& gt);
/// Mean per-point Euclidean distance.
double position_error(const Matrix<double>& pred, const Matrix<double>& gt);

enum class AucRule {
  kExact,      // integral of the step PCK curve over [0, max]
  kTrapezoid,  // trapezoid rule over the sampled thresholds
};

/// PCK(tau) at `steps` uniform thresholds in [0, max_threshold].
std::vector<std::pair<double, double>> pck_curve(const std::vector<double>& errors, double max_threshold = 50.0,
                                                 int steps = 100);
/// Area under PCK over [0, max_threshold], normalized to [0, 1].
double pck_auc(const std::vector<double>& errors, double max_threshold = 50.0, int steps = 100,
               AucRule rule = AucRule::kExact);

/// Harmonic mean of precision (pred points within `threshold` of some gt
/// point) and recall (the converse); 0 when both are 0.
double f_score(const Matrix<double>& pred, const Matrix<double>& gt, double threshold);

struct MetricOptions {
  double occlusion_threshold = 0.3;  // occluded bucket: fraction >= threshold
  double auc_max = 50.0;
  int auc_steps = 100;
  AucRule auc_rule = AucRule::kExact;
  bool rigid_pa = false;
};

struct MetricBlock {
  int count = 0;
  double jpe = 0, vpe = 0, pa_jpe = 0, pa_vpe = 0;
  double jauc = 0, vauc = 0, pa_jauc = 0, pa_vauc = 0;
  double f5 = 0, f15 = 0, pa_f5 = 0, pa_f15 = 0;

  nlohmann::json to_json() const;
};

struct SampleMetrics {
  double occlusion = 0;
  double jpe = 0, vpe = 0, pa_jpe = 0, pa_vpe = 0;
  double f5 = 0, f15 = 0, pa_f5 = 0, pa_f15 = 0;
  bool degenerate_alignment = false;
  std::vector<double> joint_errors, vertex_errors, pa_joint_errors, pa_vertex_errors;
};

struct MetricReport {
  MetricBlock all, occluded, non_occluded;
  std::vector<SampleMetrics> samples;

  nlohmann::json to_json() const;
  /// One line per sample: index, occlusion and the per-sample errors.
  std::string per_sample_csv() const;
};

/// Collects per-sample predictions (world frame) and builds the report.
class Evaluator {
 public:
  explicit Evaluator(MetricOptions options = {}) : options_(options) {}

  const SampleMetrics& add(const Matrix<double>& pred_vertices, const Matrix<double>& gt_vertices,
                           const Matrix<double>& pred_joints, const Matrix<double>& gt_joints, double occlusion);
  MetricReport finish() const;

 private:
  MetricBlock block(const std::vector<const SampleMetrics*>& members) const;

  MetricOptions options_;
  std::vector<SampleMetrics> samples_;
};

}  // namespace mvhand::metrics
