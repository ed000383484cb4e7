#include "mvhand/grad_check.hpp"
#include "mvhand/harness.hpp"
#include "mvhand/synthdata.hpp"

namespace mvhand::harness {

namespace {

Matrix<double> uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed * 7919 + 17);
  Matrix<double> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(rng, -1.0, 1.0);
  return m;
}

}  // namespace

GradCheckResult svr_total_grad_check(const recon::ModelConfig& config, std::uint64_t sample_seed, double eps) {
  using Md = Matrix<double>;
  const auto& tpl = hand_template();
  Svr<double> svr(config, tpl);
  auto params = svr.parameters();

  SynthConfig sc;
  sc.views = 1;
  sc.image_size = config.image_size;
  const auto sample = generate_sample(tpl, sample_seed, sc);
  losses::ReconTarget gt;
  gt.vertices = sample.gt_vertices_canonical.cast<double>();
  gt.joints = sample.gt_joints3d_canonical.cast<double>();
  gt.joints2d = {sample.gt_joints2d[0].cast<double>()};

  // The check point is chosen so that central differences can resolve every
  // coordinate: weights well away from their initial values, a head large
  // enough that upstream gradients stand clear of the roundoff of a loss in
  // the thousands, and a prediction whose vertex residuals (canonical and
  // rotated) all stay at least 0.3 mm away from the kinks of the L1 terms.
  for (auto* p : params) p->value += 0.5 * uniform_matrix(p->value.rows(), p->value.cols(), fnv1a(p->name) % 1000);
  svr.trunk().decoder.head.weight.value *= 10.0;
  svr.trunk().lift.mix.value = uniform_matrix(tpl.coarse_vertex_count, kNumJoints, 93);
  svr.trunk().decoder.offset.value.setZero();
  ad::Graph<double> g0;
  const auto ref = svr.forward(g0, sample.images[0]);
  const Md head_only = ref.output.vertices.value();
  const Mat3 pred_r = ref.output.rotation.value();
  gt.rotation = pred_r * axis_angle(Vec3(1, 2, 3), 0.01);
  Rng rng(1);
  const int nv = tpl.vertex_count();
  Md residual(nv, 3);
  for (int v = 0; v < nv; ++v) {
    for (;;) {
      for (int c = 0; c < 3; ++c) residual(v, c) = (uniform01(rng) < 0.5 ? -1 : 1) * uniform(rng, 0.3, 1.0);
      const Md rotated = (gt.vertices.row(v) + residual.row(v)) * pred_r.transpose() -
                         gt.vertices.row(v) * gt.rotation.transpose();
      if (rotated.cwiseAbs().minCoeff() >= 0.3) break;
    }
  }
  svr.trunk().decoder.offset.value = gt.vertices + residual - head_only;

  // Teacher features stand in as fixed random tensors of the right shapes.
  const Md t_fv = uniform_matrix(ref.features.f_v.rows(), ref.features.f_v.cols(), 90);
  const Md t_fo = uniform_matrix(ref.features.f_o_hat.rows(), ref.features.f_o_hat.cols(), 91);

  auto build = [&](ad::Graph<double>& g) {
    const auto r = svr.forward(g, sample.images[0], {true, {true}});
    losses::ReconPrediction<double> pred{r.output.vertices, r.output.rotation, {r.output.joints2d}};
    auto terms = losses::recon_loss(tpl, pred, gt);
    FeatureBundle<double> teacher = r.features;
    teacher.f_v = g.constant(t_fv);
    teacher.f_o_hat = g.constant(t_fo);
    const auto d = sima::distill(sima::select_distill_targets(sima::Variant::kVertexEnhanced), r.features, teacher);
    losses::add_distillation(terms, d.se, d.oe, {1.0, 1.0});
    return terms.total;
  };
  return grad_check(build, params, eps);
}

}  // namespace mvhand::harness
