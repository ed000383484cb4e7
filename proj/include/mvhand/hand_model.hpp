#pragma once

// Procedural low-poly right hand: template mesh, 21-joint skeleton, linear
// blend skinning, joint regressor, spiral neighbourhoods and the
// coarse-to-fine upsampling operator.
//
// Frame: millimetres, wrist at the origin, fingers along +y, palm normal
// along z. Joint order: wrist 0; thumb 1-4; index 5-8; middle 9-12;
// ring 13-16; little 17-20 (base to tip).

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mvhand/common.hpp"

namespace mvhand {

inline constexpr int kNumJoints = 21;

class TemplateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct HandTemplate {
  Matrix<double> vertices_canonical;  // V x 3
  MatrixXi faces;                     // F x 3, outward orientation
  int coarse_vertex_count = 0;
  std::vector<int> coarse_to_fine;    // fine index of each coarse vertex
  MatrixXi coarse_faces;              // triangulation of the coarse vertices
  Matrix<double> upsample_matrix;     // V x Vc, rows sum to 1
  Matrix<double> joint_regressor;     // J x V, rows sum to 1
  std::vector<int> skeleton_parents;  // J, -1 for the wrist
  Matrix<double> rest_joints;         // J x 3
  Matrix<double> skinning_weights;    // V x J, rows sum to 1
  MatrixXi spiral_indices;            // Vc x S on the coarse mesh
  MatrixXi spiral_indices_fine;       // V x S on the fine mesh
  std::vector<double> joint_limits;   // max rotation angle per joint, radians
  std::vector<Vec3> flex_axes;        // preferred bending axis per joint

  int vertex_count() const { return static_cast<int>(vertices_canonical.rows()); }
  int spiral_length() const { return static_cast<int>(spiral_indices.cols()); }
  Matrix<double> coarse_vertices() const;
};

struct HandPose {
  std::vector<Mat3> joint_rotations;  // J local rotations; entry 0 is unused
  double shape_scale = 1.0;

  static HandPose rest();
};

/// Throws TemplateError when coarse_count < 21, fine_count < 2 * coarse_count,
/// spiral_length < 5, spiral_length > coarse_count, or fine_count is too small
/// to hold five fingers and a palm.
HandTemplate build_template(int coarse_count = 49, int fine_count = 194, int spiral_length = 9);

struct Skinned {
  Matrix<double> vertices;  // V x 3
  Matrix<double> joints;    // J x 3
};

/// Global joint rotations A and positions P satisfy A_j = A_p R_j and
/// P_j = P_p + A_p (rest_j - rest_p); each vertex moves as
/// s * sum_j w_j (A_j (v - rest_j) + P_j).
Skinned forward_kinematics(const HandTemplate& tpl, const HandPose& pose);

Matrix<double> regress_joints(const HandTemplate& tpl, const Matrix<double>& vertices);

/// Random pose inside the joint limits; `amount` in [0, 1] scales the
/// range of motion. Scale is drawn from [scale_min, scale_max].
HandPose random_pose(const HandTemplate& tpl, Rng& rng, double amount = 1.0, double scale_min = 0.8,
                     double scale_max = 1.2);

/// Throws std::invalid_argument when a rotation is improper or exceeds its limit.
void validate_pose(const HandTemplate& tpl, const HandPose& pose, double tol = 1e-9);

/// Undirected edges (i < j) of a triangle mesh, sorted.
std::vector<std::pair<int, int>> mesh_edges(const MatrixXi& faces);

/// Spiral ordering of every vertex: the vertex, its one-ring in cyclic
/// order starting at the smallest neighbour index, then further rings in
/// breadth-first order, truncated to `length`.
MatrixXi build_spirals(const MatrixXi& faces, int vertex_count, int length);

void write_obj(const std::filesystem::path& path, const Matrix<double>& vertices, const MatrixXi& faces);

struct ObjMesh {
  Matrix<double> vertices;
  MatrixXi faces;
};
ObjMesh read_obj(const std::filesystem::path& path);

}  // namespace mvhand
