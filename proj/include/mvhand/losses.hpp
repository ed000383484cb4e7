#pragma once

// Training losses. Every term is a plain sum over its elements; batch
// reduction (mean over samples) is the caller's job.

#include <vector>

#include "json.hpp"
#include "mvhand/autodiff.hpp"
#include "mvhand/hand_model.hpp"

namespace mvhand::losses {

using ad::Graph;
using ad::Var;

struct LossWeights {
  double beta = 1.0;
  double gamma = 1.0;
};

/// Sum of absolute differences; used for meshes and 3-D / 2-D joints alike.
template <typename T> Var<T> l1(Var<T> pred, Var<T> gt);
template <typename T> Var<T> mesh_l1(Var<T> pred, Var<T> gt) { return l1(pred, gt); }
template <typename T> Var<T> joint3d_l1(Var<T> pred, Var<T> gt) { return l1(pred, gt); }
template <typename T> Var<T> joint2d_l1(Var<T> pred, Var<T> gt) { return l1(pred, gt); }

template <typename T>
struct Rotated {
  Var<T> mesh;
  Var<T> joints;
};

/// Rotates canonical predictions (rows p -> R p) and compares them with the
/// ground truth rotated by gt_rotation. Joints are regressed from the mesh.
template <typename T>
Rotated<T> rotated_losses(Var<T> pred_vertices, Var<T> pred_rotation, const Matrix<double>& joint_regressor,
                          const Matrix<double>& gt_vertices, const Matrix<double>& gt_joints, const Mat3& gt_rotation);

struct NormalOptions {
  bool normalize_edges = true;
};

/// Sum over faces and their three predicted edges of |<e, n_gt>|. Faces
/// whose ground-truth area vanishes are skipped; their count is written to
/// `skipped` when given.
template <typename T>
Var<T> normal_loss(Var<T> pred_vertices, const MatrixXi& faces, const Matrix<double>& gt_vertices,
                   const NormalOptions& options = {}, int* skipped = nullptr);

/// Sum over faces and their three edges of | |e_pred| - |e_gt| |.
template <typename T>
Var<T> edge_length_loss(Var<T> pred_vertices, const MatrixXi& faces, const Matrix<double>& gt_vertices);

/// Frobenius norm of gt * pred^T - I.
template <typename T> Var<T> rotation_loss(Var<T> pred_rotation, const Mat3& gt_rotation);

/// Euclidean norm of the whole difference tensor, or its mean square.
template <typename T> Var<T> feature_distance(Var<T> a, Var<T> b, bool mse = false);

struct LossReport {
  double mesh_c = 0, joint3d_c = 0, mesh_r = 0, joint3d_r = 0, joint2d = 0, normal = 0, edge = 0, rotation = 0;
  double se = 0, oe = 0, recon = 0, total = 0;
  int degenerate_faces = 0;

  /// Recomputes recon and total from the components.
  void finalize(const LossWeights& w);
  LossReport& operator+=(const LossReport& o);
  LossReport& operator*=(double s);
  nlohmann::json to_json() const;
};

/// What one prediction is compared against.
struct ReconTarget {
  Matrix<double> vertices;               // canonical, V x 3
  Matrix<double> joints;                 // canonical, J x 3
  Mat3 rotation = Mat3::Identity();      // orientation of the supervised view
  std::vector<Matrix<double>> joints2d;  // one J x 2 per supervised 2-D prediction
};

template <typename T>
struct ReconPrediction {
  Var<T> vertices;               // canonical, V x 3
  Var<T> rotation;               // 3 x 3
  std::vector<Var<T>> joints2d;  // parallel to ReconTarget::joints2d
};

template <typename T>
struct LossTerms {
  Var<T> mesh_c, joint3d_c, mesh_r, joint3d_r, joint2d, normal, edge, rotation;
  Var<T> recon;
  Var<T> se, oe;  // invalid unless distillation is on
  Var<T> total;
  int degenerate_faces = 0;

  LossReport report(const LossWeights& w) const;
};

/// The eight reconstruction terms and their unweighted sum.
template <typename T>
LossTerms<T> recon_loss(const HandTemplate& tpl, const ReconPrediction<T>& pred, const ReconTarget& gt,
                        const NormalOptions& normal_options = {});

/// total = recon + beta * se + gamma * oe; either distillation term may be
/// invalid (absent), and a zero weight drops the term from the graph.
template <typename T>
void add_distillation(LossTerms<T>& terms, Var<T> se, Var<T> oe, const LossWeights& w);

}  // namespace mvhand::losses
