#include <filesystem>
#include <map>
#include <queue>
#include <set>

#include "doctest.h"
#include "mvhand/hand_model.hpp"
#include "test_util.hpp"

using namespace mvhand;

namespace {

const HandTemplate& tpl() {
  static const HandTemplate t = build_template(49, 194, 9);
  return t;
}

// Joint positions from explicit 4x4 transforms multiplied along each
// root-to-joint path.
Matrix<double> chain_oracle(const HandTemplate& t, const HandPose& pose) {
  Matrix<double> out(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j) {
    std::vector<int> path;
    for (int k = j; k >= 0; k = t.skeleton_parents[k]) path.push_back(k);
    Eigen::Matrix4d g = Eigen::Matrix4d::Identity();
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      const int k = *it, p = t.skeleton_parents[k];
      Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
      local.block<3, 3>(0, 0) = pose.joint_rotations[k];
      Vec3 off = t.rest_joints.row(k).transpose();
      if (p >= 0) off -= t.rest_joints.row(p).transpose();
      local.block<3, 1>(0, 3) = off;
      g = g * local;
    }
    out.row(j) = pose.shape_scale * g.block<3, 1>(0, 3).transpose();
  }
  return out;
}

bool connected(const std::vector<std::pair<int, int>>& edges, int n) {
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : edges) adj[a].push_back(b), adj[b].push_back(a);
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int w : adj[u])
      if (!seen[w]) seen[w] = 1, ++count, q.push(w);
  }
  return count == n;
}

}  // namespace

TEST_CASE("build_template: sizes and row sums") {
  const auto& t = tpl();
  CHECK(t.coarse_vertex_count == 49);
  CHECK(t.vertex_count() == 194);
  CHECK(t.skeleton_parents.size() == 21);
  CHECK(t.upsample_matrix.rows() == 194);
  CHECK(t.upsample_matrix.cols() == 49);
  CHECK(t.spiral_indices.rows() == 49);
  CHECK(t.spiral_indices.cols() == 9);
  for (int r = 0; r < t.joint_regressor.rows(); ++r) CHECK(std::abs(t.joint_regressor.row(r).sum() - 1.0) < 1e-12);
  for (int r = 0; r < t.skinning_weights.rows(); ++r) CHECK(std::abs(t.skinning_weights.row(r).sum() - 1.0) < 1e-12);
  for (int r = 0; r < t.upsample_matrix.rows(); ++r) CHECK(std::abs(t.upsample_matrix.row(r).sum() - 1.0) < 1e-12);
  CHECK(t.joint_regressor.minCoeff() >= 0.0);
  CHECK(t.skinning_weights.minCoeff() >= 0.0);
  CHECK(t.upsample_matrix.minCoeff() >= 0.0);
}

TEST_CASE("build_template is deterministic") {
  const HandTemplate a = build_template(49, 194, 9);
  const HandTemplate b = build_template(49, 194, 9);
  CHECK((a.vertices_canonical.array() == b.vertices_canonical.array()).all());
  CHECK((a.faces.array() == b.faces.array()).all());
  CHECK((a.upsample_matrix.array() == b.upsample_matrix.array()).all());
  CHECK((a.joint_regressor.array() == b.joint_regressor.array()).all());
  CHECK((a.skinning_weights.array() == b.skinning_weights.array()).all());
  CHECK((a.spiral_indices.array() == b.spiral_indices.array()).all());
  CHECK((a.rest_joints.array() == b.rest_joints.array()).all());
}

TEST_CASE("build_template rejects impossible parameters") {
  CHECK_THROWS_AS(build_template(10, 15, 9), TemplateError);
  CHECK_THROWS_AS(build_template(21, 41, 9), TemplateError);
  CHECK_THROWS_AS(build_template(21, 60, 4), TemplateError);
  CHECK_THROWS_AS(build_template(21, 42, 9), TemplateError);
  CHECK_NOTHROW(build_template(21, 120, 7));
}

TEST_CASE("mesh is a connected closed manifold and the skeleton is a tree") {
  const auto& t = tpl();
  CHECK(t.faces.minCoeff() >= 0);
  CHECK(t.faces.maxCoeff() < t.vertex_count());
  std::map<std::pair<int, int>, int> directed;
  for (int f = 0; f < t.faces.rows(); ++f)
    for (int e = 0; e < 3; ++e) ++directed[{t.faces(f, e), t.faces(f, (e + 1) % 3)}];
  for (const auto& [e, c] : directed) {
    CHECK(c == 1);
    CHECK(directed.count({e.second, e.first}) == 1);
  }
  const auto edges = mesh_edges(t.faces);
  CHECK(connected(edges, t.vertex_count()));
  std::set<int> used(t.faces.data(), t.faces.data() + t.faces.size());
  CHECK(static_cast<int>(used.size()) == t.vertex_count());
  CHECK(connected(mesh_edges(t.coarse_faces), t.coarse_vertex_count));

  CHECK(t.skeleton_parents[0] == -1);
  for (int j = 1; j < kNumJoints; ++j) {
    CHECK(t.skeleton_parents[j] >= 0);
    CHECK(t.skeleton_parents[j] < j);
  }
}

TEST_CASE("spirals start at their vertex and stay in range") {
  const auto& t = tpl();
  for (const MatrixXi* s : {&t.spiral_indices, &t.spiral_indices_fine}) {
    const int n = static_cast<int>(s->rows());
    CHECK(s->minCoeff() >= 0);
    CHECK(s->maxCoeff() < n);
    for (int v = 0; v < n; ++v) {
      CHECK((*s)(v, 0) == v);
      std::set<int> row;
      for (int k = 0; k < s->cols(); ++k) row.insert((*s)(v, k));
      CHECK(static_cast<int>(row.size()) == s->cols());
    }
  }
  // The first ring follows the face cycle: consecutive entries share an edge.
  const auto edges = mesh_edges(t.coarse_faces);
  std::set<std::pair<int, int>> es(edges.begin(), edges.end());
  auto adjacent = [&](int a, int b) { return es.count({std::min(a, b), std::max(a, b)}) > 0; };
  for (int v = 0; v < t.coarse_vertex_count; ++v) {
    int valence = 0;
    for (auto [a, b] : edges) valence += (a == v || b == v);
    for (int k = 1; k < std::min(valence, 8); ++k) CHECK(adjacent(t.spiral_indices(v, k), t.spiral_indices(v, k + 1)));
  }
}

TEST_CASE("forward kinematics: rest pose and scaling") {
  const auto& t = tpl();
  HandPose rest = HandPose::rest();
  const auto out = forward_kinematics(t, rest);
  CHECK((out.vertices - t.vertices_canonical).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.joints - t.rest_joints).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((regress_joints(t, out.vertices) - out.joints).cwiseAbs().maxCoeff() < 1e-6);

  HandPose two = rest;
  two.shape_scale = 2.0;
  const auto big = forward_kinematics(t, two);
  CHECK((big.vertices.array() == 2.0 * out.vertices.array()).all());
  CHECK((big.joints.array() == 2.0 * out.joints.array()).all());
}

TEST_CASE("forward kinematics matches the matrix-chain oracle") {
  const auto& t = tpl();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    HandPose pose = random_pose(t, rng);
    CHECK_NOTHROW(validate_pose(t, pose));
    const auto out = forward_kinematics(t, pose);
    CHECK((out.joints - chain_oracle(t, pose)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(out.vertices.allFinite());
  }
}

TEST_CASE("scale equivariance with identity rotations") {
  const auto& t = tpl();
  HandPose a = HandPose::rest(), b = HandPose::rest();
  b.shape_scale = 1.17;
  const auto fa = forward_kinematics(t, a), fb = forward_kinematics(t, b);
  CHECK((fb.vertices - 1.17 * fa.vertices).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fb.joints - 1.17 * fa.joints).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random poses respect the joint limits") {
  const auto& t = tpl();
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    HandPose pose = random_pose(t, rng);
    for (int j = 0; j < kNumJoints; ++j) {
      const Mat3& r = pose.joint_rotations[j];
      CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(r.determinant() > 0);
      CHECK(rotation_angle(r) <= t.joint_limits[j] + 1e-9);
    }
    CHECK(pose.shape_scale >= 0.8);
    CHECK(pose.shape_scale <= 1.2);
  }
  HandPose bad = HandPose::rest();
  bad.joint_rotations[6] = axis_angle(Vec3::UnitX(), 2.5);
  CHECK_THROWS_AS(validate_pose(t, bad), std::invalid_argument);
}

TEST_CASE("regress_joints: template consistency, offsets, oracle, rigid commute") {
  const auto& t = tpl();
  CHECK((regress_joints(t, t.vertices_canonical) - t.rest_joints).cwiseAbs().maxCoeff() < 1e-6);

  Matrix<double> shifted = t.vertices_canonical;
  const Eigen::RowVector3d off(3.0, -7.0, 11.0);
  shifted.rowwise() += off;
  Matrix<double> expect = t.rest_joints;
  expect.rowwise() += off;
  CHECK((regress_joints(t, shifted) - expect).cwiseAbs().maxCoeff() < 1e-9);

  const Matrix<double> x = testing::random_matrix(194, 3, 5) * 50.0;
  const Matrix<double> y = regress_joints(t, x);
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int v = 0; v < 194; ++v) acc += t.joint_regressor(j, v) * x(v, c);
      CHECK(std::abs(y(j, c) - acc) < 1e-9);
    }

  Rng rng(8);
  const Mat3 r = random_rotation(rng);
  const Eigen::RowVector3d tr(10, 20, -30);
  Matrix<double> moved = (x * r.transpose()).rowwise() + tr;
  Matrix<double> expect2 = (y * r.transpose()).rowwise() + tr;
  CHECK((regress_joints(t, moved) - expect2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("template geometry is hand-like") {
  const auto& t = tpl();
  CHECK(t.rest_joints.row(0).norm() < 1e-9);
  // Fingertips are above the wrist and the middle finger is the longest.
  for (int tip : {8, 12, 16, 20}) CHECK(t.rest_joints(tip, 1) > 100.0);
  CHECK(t.rest_joints(12, 1) > t.rest_joints(20, 1));
  // Every face has a non-degenerate area.
  for (int f = 0; f < t.faces.rows(); ++f) {
    const Vec3 a = t.vertices_canonical.row(t.faces(f, 0)).transpose();
    const Vec3 b = t.vertices_canonical.row(t.faces(f, 1)).transpose();
    const Vec3 c = t.vertices_canonical.row(t.faces(f, 2)).transpose();
    CHECK((b - a).cross(c - a).norm() > 1e-3);
  }
}

TEST_CASE("OBJ export round-trips") {
  const auto& t = tpl();
  const auto path = std::filesystem::temp_directory_path() / "mvhand_template_test.obj";
  write_obj(path, t.vertices_canonical, t.faces);
  const ObjMesh m = read_obj(path);
  CHECK(m.vertices.rows() == t.vertex_count());
  CHECK(m.faces.rows() == t.faces.rows());
  CHECK((m.faces.array() == t.faces.array()).all());
  CHECK((m.vertices - t.vertices_canonical).cwiseAbs().maxCoeff() < 1e-5);
  std::filesystem::remove(path);
}
