#include <cmath>

#include "doctest.h"
#include "mvhand/grad_check.hpp"
#include "mvhand/sima.hpp"
#include "test_util.hpp"

using namespace mvhand;
using namespace mvhand::sima;
using Md = Matrix<double>;
using Gd = ad::Graph<double>;

namespace {

void randomize(Ofe<double>& m, std::uint64_t seed, double amplitude = 0.5) {
  nn::ParamList<double> p;
  m.collect(p);
  for (auto* q : p) q->value = amplitude * testing::random_matrix(q->value.rows(), q->value.cols(), seed++);
}

Md linear(const Md& x, const nn::Linear<double>& l) {
  Md y = x * l.weight.value;
  if (l.has_bias) y.rowwise() += l.bias.value.row(0);
  return y;
}

// Row-wise softmax(q k^T / sqrt(d)) written out with loops.
Md attention_loop(const Md& q, const Md& k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Md w(q.rows(), k.rows());
  for (int i = 0; i < q.rows(); ++i) {
    double top = -1e300;
    for (int j = 0; j < k.rows(); ++j) {
      double s = 0;
      for (int c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      w(i, j) = s * scale;
      top = std::max(top, w(i, j));
    }
    double z = 0;
    for (int j = 0; j < k.rows(); ++j) z += (w(i, j) = std::exp(w(i, j) - top));
    for (int j = 0; j < k.rows(); ++j) w(i, j) /= z;
  }
  return w;
}

Md weighted(const Md& w, const Md& v) {
  Md out = Md::Zero(w.rows(), v.cols());
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j)
      for (int c = 0; c < v.cols(); ++c) out(i, c) += w(i, j) * v(j, c);
  return out;
}

void check_rows_sum_to_one(const Md& w) {
  for (int i = 0; i < w.rows(); ++i) CHECK(std::abs(w.row(i).sum() - 1.0) < 1e-12);
  CHECK(w.minCoeff() >= 0.0);
}

}  // namespace

TEST_CASE("OFE attention: single orientation token saturates the cross-attention") {
  Ofe<double> ofe("ofe", OfeMode::kAttention, 5, 3, 1, 4, 6, 2);
  randomize(ofe, 10);
  Gd g;
  OfeTrace<double> t;
  ofe(g, g.constant(testing::random_matrix(5, 3, 1)), g.constant(testing::random_matrix(1, 4, 2)), true, &t);
  CHECK(t.w_cross.value().rows() == 5);
  CHECK(t.w_cross.value().cols() == 1);
  CHECK((t.w_cross.value().array() == 1.0).all());
  for (int r = 0; r < 5; ++r) CHECK(t.cross.value().row(r) == t.h_o.value().row(0));
}

TEST_CASE("OFE attention: matches a three-stage loop oracle") {
  const int J = 4, To = 6, Cj = 3, Co = 5, d = 7;
  for (bool residual : {true, false}) {
    Ofe<double> ofe("ofe", OfeMode::kAttention, J, Cj, To, Co, d, 3, residual);
    randomize(ofe, 20);
    const Md fj = testing::random_matrix(J, Cj, 4), fo = testing::random_matrix(To, Co, 5);
    Gd g;
    OfeTrace<double> t;
    const Md got = ofe(g, g.constant(fj), g.constant(fo), true, &t).value();

    const Md aj = linear(fj, ofe.proj_j), ao = linear(fo, ofe.proj_o);
    const Md wj = attention_loop(aj, aj), wo = attention_loop(ao, ao);
    const Md hj = weighted(wj, aj), ho = weighted(wo, ao);
    const Md wc = attention_loop(hj, ho);
    const Md cross = weighted(wc, ho);
    Md cells = Md::Zero(To, d);
    for (int o = 0; o < To; ++o)
      for (int c = 0; c < d; ++c) {
        double s = ofe.token_mix.bias.value(0, o);
        for (int j = 0; j < J; ++j) s += cross(j, c) * ofe.token_mix.weight.value(j, o);
        cells(o, c) = s;
      }
    Md want = linear(cells, ofe.out);
    if (residual) want += fo;

    check_rows_sum_to_one(t.w_j.value());
    check_rows_sum_to_one(t.w_o.value());
    check_rows_sum_to_one(t.w_cross.value());
    CHECK((t.w_cross.value() - wc).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((t.cross.value() - cross).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(got.rows() == To);
    CHECK(got.cols() == Co);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("OFE: residual initialization returns f_o, off mode is the identity") {
  const Md fj = testing::random_matrix(4, 3, 6), fo = testing::random_matrix(6, 5, 7);
  Gd g;
  Ofe<double> att("ofe", OfeMode::kAttention, 4, 3, 6, 5, 8, 1);
  CHECK(att(g, g.constant(fj), g.constant(fo)).value() == fo);
  Ofe<double> off("ofe", OfeMode::kOff, 4, 3, 6, 5, 8, 1);
  CHECK(off(g, g.constant(fj), g.constant(fo)).value() == fo);
  nn::ParamList<double> p;
  off.collect(p);
  CHECK(p.empty());
}

TEST_CASE("OFE concat: identity merge at init, summary oracle after randomization") {
  const int J = 4, Cj = 3, To = 6, Co = 5, d = 2;
  const Md fj = testing::random_matrix(J, Cj, 8), fo = testing::random_matrix(To, Co, 9);
  Ofe<double> ofe("ofe", OfeMode::kConcat, J, Cj, To, Co, d, 1);
  Gd g;
  CHECK(ofe(g, g.constant(fj), g.constant(fo)).value() == fo);
  randomize(ofe, 30);
  Md flat(1, J * Cj);
  for (int j = 0; j < J; ++j)
    for (int c = 0; c < Cj; ++c) flat(0, c * J + j) = fj(j, c);  // column-major, as the summary sees it
  const Md s = linear(flat, ofe.summary);
  Md joined(To, Co + d);
  for (int r = 0; r < To; ++r) joined.row(r) << fo.row(r), s.row(0);
  Gd g2;
  CHECK((ofe(g2, g2.constant(fj), g2.constant(fo)).value() - linear(joined, ofe.merge)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("OFE: token count zero is an error") {
  CHECK_THROWS_AS(Ofe<double>("ofe", OfeMode::kAttention, 4, 3, 0, 5, 8, 1), SimaError);
  CHECK_THROWS_AS(Ofe<double>("ofe", OfeMode::kAttention, 0, 3, 6, 5, 8, 1), SimaError);
  Ofe<double> ofe("ofe", OfeMode::kAttention, 4, 3, 6, 5, 8, 1);
  Gd g;
  CHECK_THROWS_AS(ofe(g, g.constant(Md(0, 3)), g.constant(testing::random_matrix(6, 5, 1))), SimaError);
  CHECK_THROWS_AS(ofe(g, g.constant(testing::random_matrix(4, 3, 1)), g.constant(Md(0, 5))), SimaError);
  CHECK_THROWS_AS(parse_ofe_mode("pool"), SimaError);
  CHECK(parse_ofe_mode(ofe_mode_name(OfeMode::kConcat)) == OfeMode::kConcat);
}

TEST_CASE("OFE gradient check") {
  for (OfeMode mode : {OfeMode::kAttention, OfeMode::kConcat}) {
    Ofe<double> ofe("ofe", mode, 4, 3, 6, 5, 7, 1);
    randomize(ofe, 40);
    ad::Parameter<double> fj("fj", testing::random_matrix(4, 3, 11)), fo("fo", testing::random_matrix(6, 5, 12));
    nn::ParamList<double> params{&fj, &fo};
    ofe.collect(params);
    const Md w = testing::random_matrix(6, 5, 13);
    const auto res = grad_check(
        [&](Gd& g) {
          auto out = ofe(g, g.parameter(fj), g.parameter(fo));
          return ad::sum(ad::mul(out, g.constant(w)));
        },
        params, 1e-5);
    INFO(ofe_mode_name(mode) << " worst " << res.worst);
    CHECK(res.max_relative_error < 1e-4);
  }
}

TEST_CASE("enhancement losses: closed forms and loop oracle") {
  Gd g;
  const Md a = testing::random_matrix(3, 4, 1), b = testing::random_matrix(3, 4, 2);
  for (auto loss : {&shape_enhance_loss<double>, &orientation_enhance_loss<double>}) {
    CHECK(loss(g.constant(a), g.constant(a), false).value()(0, 0) == 0.0);
    const Md zero = Md::Zero(2, 3), ones = Md::Ones(2, 3);
    CHECK(std::abs(loss(g.constant(ones), g.constant(zero), false).value()(0, 0) - std::sqrt(6.0)) < 1e-15);
    double ss = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) ss += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
    CHECK(std::abs(loss(g.constant(a), g.constant(b), false).value()(0, 0) - std::sqrt(ss)) < 1e-12);
    CHECK(std::abs(loss(g.constant(a), g.constant(b), true).value()(0, 0) - ss / 12) < 1e-12);
    CHECK_THROWS(loss(g.constant(a), g.constant(Md::Zero(4, 3)), false));
  }
}

TEST_CASE("enhancement losses: symmetric and satisfy the triangle inequality") {
  Gd g;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto x = g.constant(testing::random_matrix(5, 3, 3 * s)), y = g.constant(testing::random_matrix(5, 3, 3 * s + 1)),
               z = g.constant(testing::random_matrix(5, 3, 3 * s + 2));
    const double xy = shape_enhance_loss(x, y).value()(0, 0), yx = shape_enhance_loss(y, x).value()(0, 0);
    const double xz = orientation_enhance_loss(x, z).value()(0, 0), zy = orientation_enhance_loss(z, y).value()(0, 0);
    CHECK(xy == doctest::Approx(yx).epsilon(1e-15));
    CHECK(xy >= 0.0);
    CHECK(xy <= xz + zy + 1e-12);
  }
}

TEST_CASE("distillation variants") {
  CHECK(parse_variant("v") == Variant::kVertexEnhanced);
  CHECK(parse_variant("i") == Variant::kDecoderLast);
  CHECK(parse_variant("vertex-joint") == Variant::kVertexJoint);
  CHECK_THROWS_AS(parse_variant("vi"), SimaError);
  for (Variant v : {Variant::kDecoderLast, Variant::kVertex, Variant::kVertexJoint, Variant::kVertexOrient,
                    Variant::kVertexEnhanced})
    CHECK(parse_variant(variant_name(v)) == v);

  const auto v5 = select_distill_targets(Variant::kVertexEnhanced);
  CHECK(v5.shape == ShapeTarget::kVertex);
  CHECK(v5.orient == OrientTarget::kOrientEnhanced);
  const auto v1 = select_distill_targets(Variant::kDecoderLast);
  CHECK(v1.shape == ShapeTarget::kDecoderLast);
  CHECK(v1.orient == OrientTarget::kNone);

  // Each feature pair differs by a distinct constant, so the chosen pair can
  // be read off the loss value: ||c * ones(r x c)|| = c * sqrt(r c).
  Gd g;
  auto bundle = [&](double shift) {
    FeatureBundle<double> b;
    b.f_v = g.constant(Md::Constant(2, 3, 1.0 * shift));
    b.f_v_last = g.constant(Md::Constant(2, 3, 2.0 * shift));
    b.f_j = g.constant(Md::Constant(2, 3, 3.0 * shift));
    b.f_o = g.constant(Md::Constant(2, 3, 4.0 * shift));
    b.f_o_hat = g.constant(Md::Constant(2, 3, 5.0 * shift));
    return b;
  };
  const auto s = bundle(1.0), t = bundle(0.0);
  const double unit = std::sqrt(6.0);
  auto value = [](ad::Var<double> v) { return v.value()(0, 0); };
  auto d = distill(v5, s, t);
  CHECK(value(d.se) == doctest::Approx(1 * unit));
  CHECK(value(d.oe) == doctest::Approx(5 * unit));
  d = distill(v1, s, t);
  CHECK(value(d.se) == doctest::Approx(2 * unit));
  CHECK_FALSE(d.oe.valid());
  d = distill(select_distill_targets(Variant::kVertexJoint), s, t);
  CHECK(value(d.oe) == doctest::Approx(3 * unit));
  d = distill(select_distill_targets(Variant::kVertexOrient), s, t);
  CHECK(value(d.oe) == doctest::Approx(4 * unit));
  d = distill(select_distill_targets(Variant::kVertex), s, t);
  CHECK(value(d.se) == doctest::Approx(1 * unit));
  CHECK_FALSE(d.oe.valid());
}
