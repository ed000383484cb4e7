#include <cmath>

#include "doctest.h"
#include "mvhand/grad_check.hpp"
#include "mvhand/losses.hpp"
#include "test_util.hpp"

using namespace mvhand;
using namespace mvhand::losses;
using ad::Graph;
using ad::Var;
using Md = Matrix<double>;

namespace {

const HandTemplate& tpl() {
  static const HandTemplate t = build_template();
  return t;
}

double scalar(Var<double> v) { return v.value()(0, 0); }

Md equilateral() {
  Md v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2, 0;
  return v;
}

MatrixXi one_face() {
  MatrixXi f(1, 3);
  f << 0, 1, 2;
  return f;
}

}  // namespace

TEST_CASE("l1 losses: zero, closed form and loop oracle") {
  Graph<double> g;
  Md gt = testing::random_matrix(194, 3, 1);
  CHECK(scalar(mesh_l1(g.constant(gt), g.constant(gt))) == 0.0);

  Md off = gt;
  off.row(17) += Eigen::RowVector3d(1, 2, 3);
  CHECK(std::abs(scalar(mesh_l1(g.constant(off), g.constant(gt))) - 6.0) < 1e-12);

  Md j = testing::random_matrix(21, 2, 2), j2 = j;
  j2(4, 0) += 0.1;
  j2(4, 1) -= 0.2;
  CHECK(std::abs(scalar(joint2d_l1(g.constant(j2), g.constant(j))) - 0.3) < 1e-12);

  Md a = testing::random_matrix(21, 3, 3), b = testing::random_matrix(21, 3, 4);
  double acc = 0;
  for (int r = 0; r < 21; ++r)
    for (int c = 0; c < 3; ++c) acc += std::abs(a(r, c) - b(r, c));
  CHECK(std::abs(scalar(joint3d_l1(g.constant(a), g.constant(b))) - acc) < 1e-12);
  CHECK_THROWS_AS(mesh_l1(g.constant(a), g.constant(Md(b.topRows(20)))), std::invalid_argument);
}

TEST_CASE("rotated losses match a rotate-then-compare oracle") {
  Rng rng(5);
  const Mat3 gt_r = random_rotation(rng);
  const Md gt_v = tpl().vertices_canonical;
  const Md gt_j = tpl().joint_regressor * gt_v;
  Graph<double> g;

  auto zero = rotated_losses(g.constant(gt_v), g.constant(Md(gt_r)), tpl().joint_regressor, gt_v, gt_j, gt_r);
  CHECK(scalar(zero.mesh) < 1e-9);
  CHECK(scalar(zero.joints) < 1e-9);

  auto ident = rotated_losses(g.constant(gt_v), g.constant(Md(Mat3::Identity())), tpl().joint_regressor, gt_v, gt_j,
                              Mat3::Identity());
  CHECK(scalar(ident.mesh) == 0.0);

  const Md pred = gt_v + 3.0 * testing::random_matrix(gt_v.rows(), 3, 6);
  const Mat3 pr = random_rotation(rng);
  auto r = rotated_losses(g.constant(pred), g.constant(Md(pr)), tpl().joint_regressor, gt_v, gt_j, gt_r);
  double mesh = 0, joints = 0;
  for (int i = 0; i < pred.rows(); ++i)
    mesh += (pr * pred.row(i).transpose() - gt_r * gt_v.row(i).transpose()).cwiseAbs().sum();
  const Md pj = tpl().joint_regressor * pred;
  for (int i = 0; i < kNumJoints; ++i)
    joints += (pr * pj.row(i).transpose() - gt_r * gt_j.row(i).transpose()).cwiseAbs().sum();
  CHECK(std::abs(scalar(r.mesh) - mesh) < 1e-9 * mesh);
  CHECK(std::abs(scalar(r.joints) - joints) < 1e-9 * joints);

  // Same rotation on both sides: L1 is not rotation invariant, so the
  // rotated term differs from the canonical one in general.
  auto same = rotated_losses(g.constant(pred), g.constant(Md(gt_r)), tpl().joint_regressor, gt_v, gt_j, gt_r);
  double expect = 0;
  for (int i = 0; i < pred.rows(); ++i) expect += (gt_r * (pred - gt_v).row(i).transpose()).cwiseAbs().sum();
  CHECK(std::abs(scalar(same.mesh) - expect) < 1e-9 * expect);
}

TEST_CASE("normal loss") {
  Graph<double> g;
  const Md v = tpl().vertices_canonical;
  int skipped = -1;
  CHECK(scalar(normal_loss(g.constant(v), tpl().faces, v, {}, &skipped)) < 1e-9);
  CHECK(skipped == 0);

  // An equilateral triangle rotated within its own plane stays orthogonal to the normal.
  const Md tri = equilateral();
  const Md spun = (tri * axis_angle(Vec3::UnitZ(), 0.7).transpose()).rowwise() + Eigen::RowVector3d(3, -1, 0);
  CHECK(scalar(normal_loss(g.constant(spun), one_face(), tri)) < 1e-12);

  // Tilting the apex out of plane about edge 0-1 by theta: edges 1-2 and
  // 2-0 pick up sin(theta) along the normal once normalized.
  for (double theta : {0.1, 0.5, 1.2}) {
    Md tilt = tri;
    const double h = std::sqrt(3.0) / 2;
    tilt.row(2) << 0.5, h * std::cos(theta), h * std::sin(theta);
    const double edge = std::sqrt(0.25 + h * h);
    const double expect = 2 * h * std::sin(theta) / edge;
    CHECK(std::abs(scalar(normal_loss(g.constant(tilt), one_face(), tri)) - expect) < 1e-9);
    // Explicit dot-product oracle with the unnormalized variant.
    const Vec3 n = Vec3::UnitZ();
    double raw = 0;
    for (int k = 0; k < 3; ++k) raw += std::abs((tilt.row((k + 1) % 3) - tilt.row(k)).dot(n.transpose()));
    CHECK(std::abs(scalar(normal_loss(g.constant(tilt), one_face(), tri, {false})) - raw) < 1e-12);
  }

  Md flat = tri;
  flat.row(2) = flat.row(1);
  MatrixXi two(2, 3);
  two << 0, 1, 2, 0, 2, 1;
  skipped = -1;
  CHECK(scalar(normal_loss(g.constant(tri), two, flat, {}, &skipped)) == 0.0);
  CHECK(skipped == 2);
}

TEST_CASE("edge length loss") {
  Graph<double> g;
  const Md tri = equilateral();
  CHECK(std::abs(scalar(edge_length_loss(g.constant(Md(2.0 * tri)), one_face(), tri)) - 3.0) < 1e-12);

  const Md gt = tpl().vertices_canonical;
  CHECK(scalar(edge_length_loss(g.constant(gt), tpl().faces, gt)) == 0.0);
  const Md pred = gt + testing::random_matrix(gt.rows(), 3, 9);
  double acc = 0;
  for (int f = 0; f < tpl().faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = tpl().faces(f, k), b = tpl().faces(f, (k + 1) % 3);
      acc += std::abs((pred.row(b) - pred.row(a)).norm() - (gt.row(b) - gt.row(a)).norm());
    }
  const double base = scalar(edge_length_loss(g.constant(pred), tpl().faces, gt));
  CHECK(std::abs(base - acc) < 1e-10);

  Rng rng(3);
  const Mat3 q1 = random_rotation(rng), q2 = random_rotation(rng);
  const Md pred_m = (pred * q1.transpose()).rowwise() + Eigen::RowVector3d(4, 5, 6);
  const Md gt_m = (gt * q2.transpose()).rowwise() + Eigen::RowVector3d(-1, 0, 2);
  CHECK(std::abs(scalar(edge_length_loss(g.constant(pred_m), tpl().faces, gt)) - base) < 1e-9);
  CHECK(std::abs(scalar(edge_length_loss(g.constant(pred), tpl().faces, gt_m)) - base) < 1e-9);
}

TEST_CASE("rotation loss") {
  Graph<double> g;
  Rng rng(8);
  const Mat3 gt = random_rotation(rng);
  CHECK(scalar(rotation_loss(g.constant(Md(gt)), gt)) < 1e-12);
  const Mat3 flip = gt * axis_angle(Vec3::UnitZ(), M_PI);
  CHECK(std::abs(scalar(rotation_loss(g.constant(Md(flip)), gt)) - 2 * std::sqrt(2.0)) < 1e-12);

  for (int i = 0; i < 20; ++i) {
    const Mat3 a = random_rotation(rng), b = random_rotation(rng), q = random_rotation(rng);
    const double theta = rotation_angle(b * a.transpose());
    const double l = scalar(rotation_loss(g.constant(Md(a)), b));
    CHECK(std::abs(l - 2 * std::sqrt(2.0) * std::abs(std::sin(theta / 2))) < 1e-9);
    CHECK(std::abs(scalar(rotation_loss(g.constant(Md(q * a)), q * b)) - l) < 1e-9);
  }
}

TEST_CASE("feature distance is a norm of the difference") {
  Graph<double> g;
  const Md a = testing::random_matrix(4, 6, 1);
  CHECK(scalar(feature_distance(g.constant(a), g.constant(a))) == 0.0);
  CHECK(std::abs(scalar(feature_distance(g.constant(Md(Md::Ones(2, 3))), g.constant(Md(Md::Zero(2, 3))))) -
                 std::sqrt(6.0)) < 1e-12);
  const Md b = testing::random_matrix(4, 6, 2), c = testing::random_matrix(4, 6, 3);
  double sq = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) sq += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  const double ab = scalar(feature_distance(g.constant(a), g.constant(b)));
  CHECK(std::abs(ab - std::sqrt(sq)) < 1e-12);
  CHECK(ab == scalar(feature_distance(g.constant(b), g.constant(a))));
  CHECK(ab <= scalar(feature_distance(g.constant(a), g.constant(c))) +
                  scalar(feature_distance(g.constant(c), g.constant(b))) + 1e-12);
  CHECK(std::abs(scalar(feature_distance(g.constant(a), g.constant(b), true)) - sq / 24) < 1e-12);
}

TEST_CASE("recon and total sums") {
  const Md gt_v = tpl().vertices_canonical;
  ReconTarget target{gt_v, tpl().joint_regressor * gt_v, Mat3::Identity(), {Md::Constant(21, 2, 0.5)}};

  {
    Graph<double> g;
    ReconPrediction<double> p{g.constant(gt_v), g.constant(Md(Mat3::Identity())), {g.constant(target.joints2d[0])}};
    auto t = recon_loss(tpl(), p, target);
    const auto r = t.report({0.5, 2.0});
    CHECK(r.recon < 1e-9);
    CHECK(r.total == r.recon);
  }

  Graph<double> g;
  Rng rng(2);
  ReconPrediction<double> p{g.constant(Md(gt_v + testing::random_matrix(gt_v.rows(), 3, 4))),
                            g.constant(Md(random_rotation(rng))),
                            {g.constant(Md(testing::random_matrix(21, 2, 5)))}};
  auto t = recon_loss(tpl(), p, target);
  Var<double> se = g.constant(Md::Constant(1, 1, 1.25)), oe = g.constant(Md::Constant(1, 1, 0.75));
  const LossWeights w{0.5, 2.0};
  add_distillation(t, se, oe, w);
  const auto r = t.report(w);
  for (double c : {r.mesh_c, r.joint3d_c, r.mesh_r, r.joint3d_r, r.joint2d, r.normal, r.edge, r.rotation})
    CHECK(c > 0.0);
  const double recon = r.mesh_c + r.joint3d_c + r.mesh_r + r.joint3d_r + r.joint2d + r.normal + r.edge + r.rotation;
  CHECK(std::abs(r.recon - recon) <= 1e-6 * recon);
  CHECK(std::abs(scalar(t.recon) - recon) <= 1e-6 * recon);
  CHECK(std::abs(scalar(t.total) - (recon + 0.5 * 1.25 + 2.0 * 0.75)) <= 1e-6 * recon);
  CHECK(std::abs(r.total - scalar(t.total)) <= 1e-6 * recon);

  LossTerms<double> t0 = t;
  add_distillation(t0, se, oe, {0.0, 0.0});
  CHECK(t0.total.id == t0.recon.id);
}

TEST_CASE("every loss passes a finite-difference check") {
  const double eps = 1e-5, tol = 1e-5;
  const Md gt_v = tpl().vertices_canonical;
  const Md gt_j = tpl().joint_regressor * gt_v;
  Rng rng(12);
  const Mat3 gt_r = random_rotation(rng);
  const Md pred_v = gt_v + 2.0 * testing::random_matrix(gt_v.rows(), 3, 21);
  // Predictions near the ground truth keep the summed losses small enough
  // for central differences to resolve every coordinate.
  const Md pred_r = Md(gt_r) + 0.1 * testing::random_matrix(3, 3, 22);

  using Fn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;
  auto check = [&](const std::string& name, const Fn& fn, const std::vector<Md>& inputs) {
    const double err = grad_check(fn, inputs, eps);
    INFO(name << " error " << err);
    CHECK(err < tol);
  };
  check("mesh_l1", [&](Graph<double>& g, const auto& x) { return mesh_l1(x[0], g.constant(gt_v)); }, {pred_v});
  check("joint2d_l1",
        [&](Graph<double>& g, const auto& x) { return joint2d_l1(x[0], g.constant(Md(Md::Constant(21, 2, 0.5)))); },
        {testing::random_matrix(21, 2, 3)});
  check("rotated",
        [&](Graph<double>&, const auto& x) {
          auto r = rotated_losses(x[0], x[1], tpl().joint_regressor, gt_v, gt_j, gt_r);
          return ad::add(r.mesh, r.joints);
        },
        {pred_v, pred_r});
  check("normal", [&](Graph<double>&, const auto& x) { return normal_loss(x[0], tpl().faces, gt_v); }, {pred_v});
  // The unnormalized term is piecewise linear; over the whole mesh some
  // vertices get an exactly cancelling gradient that differences cannot
  // resolve against a loss in the thousands, so check a patch.
  const MatrixXi patch = tpl().faces.topRows(40);
  check("normal_raw", [&](Graph<double>&, const auto& x) { return normal_loss(x[0], patch, gt_v, {false}); },
        {pred_v});
  check("edge", [&](Graph<double>&, const auto& x) { return edge_length_loss(x[0], tpl().faces, gt_v); }, {pred_v});
  check("rotation", [&](Graph<double>&, const auto& x) { return rotation_loss(x[0], gt_r); }, {pred_r});
  check("feature", [&](Graph<double>&, const auto& x) { return feature_distance(x[0], x[1]); },
        {testing::random_matrix(5, 4, 1), testing::random_matrix(5, 4, 2)});
  check("feature_mse", [&](Graph<double>&, const auto& x) { return feature_distance(x[0], x[1], true); },
        {testing::random_matrix(5, 4, 1), testing::random_matrix(5, 4, 2)});
  check("total",
        [&](Graph<double>&, const auto& x) {
          ReconTarget target{gt_v, gt_j, gt_r, {Md::Constant(21, 2, 0.5)}};
          ReconPrediction<double> p{x[0], x[1], {x[2]}};
          auto t = recon_loss(tpl(), p, target);
          add_distillation(t, feature_distance(x[3], x[4]), feature_distance(x[4], x[3], true), {0.5, 2.0});
          return t.total;
        },
        {pred_v, pred_r, testing::random_matrix(21, 2, 7), testing::random_matrix(3, 4, 8),
         testing::random_matrix(3, 4, 9)});
}
