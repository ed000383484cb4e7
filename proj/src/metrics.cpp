#include "mvhand/metrics.hpp"

#include <Eigen/SVD>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mvhand::metrics {

namespace {

void require_match(const char* what, const Matrix<double>& a, const Matrix<double>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() != 3)
    throw std::invalid_argument(std::string(what) + ": expected two K x 3 point sets of equal size");
}

// Fraction of points in `from` whose nearest neighbour in `to` lies within threshold.
double fraction_within(const Matrix<double>& from, const Matrix<double>& to, double threshold) {
  const double t2 = threshold * threshold;
  int hits = 0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
    if (best <= t2) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(from.rows());
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

Alignment procrustes_align(const Matrix<double>& pred, const Matrix<double>& gt, bool with_scale) {
  require_match("procrustes_align", pred, gt);
  if (pred.rows() < 3) throw std::invalid_argument("procrustes_align: needs at least 3 points");
  const Eigen::RowVector3d mp = pred.colwise().mean(), mg = gt.colwise().mean();
  const Matrix<double> p = pred.rowwise() - mp, q = gt.rowwise() - mg;
  if (q.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("procrustes_align: ground-truth points coincide");

  const Mat3 cov = q.transpose() * p;  // sum_i q_i p_i^T
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;

  Alignment a;
  a.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  const double var_p = p.squaredNorm();
  Eigen::JacobiSVD<Matrix<double>> spread(p);
  const auto sv = spread.singularValues();
  a.degenerate = sv(0) == 0.0 || sv(1) <= 1e-10 * sv(0);
  if (with_scale && var_p > 0) a.scale = svd.singularValues().dot(d.diagonal()) / var_p;
  a.translation = mg.transpose() - a.scale * a.rotation * mp.transpose();
  a.aligned = ((a.scale * p * a.rotation.transpose()).rowwise() + mg);
  return a;
}

std::vector<double> point_errors(const Matrix<double>& pred, const Matrix<double>& gt) {
  require_match("point_errors", pred, gt);
  std::vector<double> e(pred.rows());
  for (Eigen::Index i = 0; i < pred.rows(); ++i) e[i] = (pred.row(i) - gt.row(i)).norm();
  return e;
}

double position_error(const Matrix<double>& pred, const Matrix<double>& gt) { return mean(point_errors(pred, gt)); }

std::vector<std::pair<double, double>> pck_curve(const std::vector<double>& errors, double max_threshold, int steps) {
  if (errors.empty()) throw std::invalid_argument("pck_curve: no errors");
  if (steps < 2 || !(max_threshold > 0)) throw std::invalid_argument("pck_curve: need steps >= 2 and max > 0");
  std::vector<std::pair<double, double>> curve;
  for (int i = 0; i < steps; ++i) {
    const double tau = max_threshold * i / (steps - 1);
    int ok = 0;
    for (double e : errors) ok += e <= tau;
    curve.emplace_back(tau, static_cast<double>(ok) / static_cast<double>(errors.size()));
  }
  return curve;
}

double pck_auc(const std::vector<double>& errors, double max_threshold, int steps, AucRule rule) {
  if (errors.empty()) throw std::invalid_argument("pck_auc: no errors");
  for (double e : errors)
    if (!(e >= 0)) throw std::invalid_argument("pck_auc: errors must be nonnegative");
  if (rule == AucRule::kExact) {
    // Each point contributes the length of [e, max] on which it counts as correct.
    double area = 0;
    for (double e : errors) area += std::max(0.0, max_threshold - e);
    return area / (max_threshold * static_cast<double>(errors.size()));
  }
  const auto curve = pck_curve(errors, max_threshold, steps);
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += 0.5 * (curve[i].second + curve[i - 1].second) * (curve[i].first - curve[i - 1].first);
  return area / max_threshold;
}

double f_score(const Matrix<double>& pred, const Matrix<double>& gt, double threshold) {
  if (pred.rows() == 0 || gt.rows() == 0) throw std::invalid_argument("f_score: empty point set");
  if (!(threshold > 0)) throw std::invalid_argument("f_score: threshold must be positive");
  const double precision = fraction_within(pred, gt, threshold);
  const double recall = fraction_within(gt, pred, threshold);
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

// ---- report -----------------------------------------------------------------

nlohmann::json MetricBlock::to_json() const {
  return {{"count", count}, {"jpe", jpe},       {"vpe", vpe},         {"pa_jpe", pa_jpe},   {"pa_vpe", pa_vpe},
          {"jauc", jauc},   {"vauc", vauc},     {"pa_jauc", pa_jauc}, {"pa_vauc", pa_vauc}, {"f5", f5},
          {"f15", f15},     {"pa_f5", pa_f5},   {"pa_f15", pa_f15}};
}

nlohmann::json MetricReport::to_json() const {
  int degenerate = 0;
  for (const auto& s : samples) degenerate += s.degenerate_alignment;
  return {{"all", all.to_json()},
          {"occluded", occluded.to_json()},
          {"non_occluded", non_occluded.to_json()},
          {"degenerate_alignments", degenerate}};
}

std::string MetricReport::per_sample_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "index,occlusion,jpe,vpe,pa_jpe,pa_vpe,f5,f15,pa_f5,pa_f15\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    os << i << ',' << s.occlusion << ',' << s.jpe << ',' << s.vpe << ',' << s.pa_jpe << ',' << s.pa_vpe << ','
       << s.f5 << ',' << s.f15 << ',' << s.pa_f5 << ',' << s.pa_f15 << '\n';
  }
  return os.str();
}

const SampleMetrics& Evaluator::add(const Matrix<double>& pred_vertices, const Matrix<double>& gt_vertices,
                                    const Matrix<double>& pred_joints, const Matrix<double>& gt_joints,
                                    double occlusion) {
  SampleMetrics s;
  s.occlusion = occlusion;
  s.joint_errors = point_errors(pred_joints, gt_joints);
  s.vertex_errors = point_errors(pred_vertices, gt_vertices);
  const bool scale = !options_.rigid_pa;
  const Alignment aj = procrustes_align(pred_joints, gt_joints, scale);
  const Alignment av = procrustes_align(pred_vertices, gt_vertices, scale);
  s.degenerate_alignment = aj.degenerate || av.degenerate;
  s.pa_joint_errors = point_errors(aj.aligned, gt_joints);
  s.pa_vertex_errors = point_errors(av.aligned, gt_vertices);
  s.jpe = mean(s.joint_errors);
  s.vpe = mean(s.vertex_errors);
  s.pa_jpe = mean(s.pa_joint_errors);
  s.pa_vpe = mean(s.pa_vertex_errors);
  s.f5 = f_score(pred_vertices, gt_vertices, 5.0);
  s.f15 = f_score(pred_vertices, gt_vertices, 15.0);
  s.pa_f5 = f_score(av.aligned, gt_vertices, 5.0);
  s.pa_f15 = f_score(av.aligned, gt_vertices, 15.0);
  samples_.push_back(std::move(s));
  return samples_.back();
}

MetricBlock Evaluator::block(const std::vector<const SampleMetrics*>& members) const {
  MetricBlock b;
  b.count = static_cast<int>(members.size());
  if (members.empty()) return b;
  std::vector<double> je, ve, pje, pve;
  for (const auto* s : members) {
    b.jpe += s->jpe;
    b.vpe += s->vpe;
    b.pa_jpe += s->pa_jpe;
    b.pa_vpe += s->pa_vpe;
    b.f5 += s->f5;
    b.f15 += s->f15;
    b.pa_f5 += s->pa_f5;
    b.pa_f15 += s->pa_f15;
    je.insert(je.end(), s->joint_errors.begin(), s->joint_errors.end());
    ve.insert(ve.end(), s->vertex_errors.begin(), s->vertex_errors.end());
    pje.insert(pje.end(), s->pa_joint_errors.begin(), s->pa_joint_errors.end());
    pve.insert(pve.end(), s->pa_vertex_errors.begin(), s->pa_vertex_errors.end());
  }
  const double n = b.count;
  for (double* v : {&b.jpe, &b.vpe, &b.pa_jpe, &b.pa_vpe, &b.f5, &b.f15, &b.pa_f5, &b.pa_f15}) *v /= n;
  const auto& o = options_;
  b.jauc = pck_auc(je, o.auc_max, o.auc_steps, o.auc_rule);
  b.vauc = pck_auc(ve, o.auc_max, o.auc_steps, o.auc_rule);
  b.pa_jauc = pck_auc(pje, o.auc_max, o.auc_steps, o.auc_rule);
  b.pa_vauc = pck_auc(pve, o.auc_max, o.auc_steps, o.auc_rule);
  return b;
}

MetricReport Evaluator::finish() const {
  std::vector<const SampleMetrics*> all, occ, clear;
  for (const auto& s : samples_) {
    all.push_back(&s);
    (s.occlusion >= options_.occlusion_threshold ? occ : clear).push_back(&s);
  }
  MetricReport r;
  r.all = block(all);
  r.occluded = block(occ);
  r.non_occluded = block(clear);
  r.samples = samples_;
  return r;
}

}  // namespace mvhand::metrics
