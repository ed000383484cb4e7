#include "mvhand/sima.hpp"

#include "mvhand/losses.hpp"

namespace mvhand::sima {

OfeMode parse_ofe_mode(const std::string& name) {
  if (name == "off") return OfeMode::kOff;
  if (name == "concat") return OfeMode::kConcat;
  if (name == "attention") return OfeMode::kAttention;
  throw SimaError("unknown OFE mode '" + name + "'");
}

std::string ofe_mode_name(OfeMode m) {
  switch (m) {
    case OfeMode::kOff: return "off";
    case OfeMode::kConcat: return "concat";
    case OfeMode::kAttention: return "attention";
  }
  return "?";
}

template <typename T>
Ofe<T>::Ofe(const std::string& name, OfeMode mode_, int joints_, int joint_channels_, int tokens_,
            int orient_channels_, int width_, std::uint64_t seed, bool residual_)
    : mode(mode_),
      joints(joints_),
      joint_channels(joint_channels_),
      tokens(tokens_),
      orient_channels(orient_channels_),
      width(width_),
      residual(residual_) {
  if (joints <= 0 || tokens <= 0) throw SimaError("OFE needs at least one joint token and one orientation token");
  if (mode == OfeMode::kAttention) {
    proj_j = nn::Linear<T>(name + ".proj_j", joint_channels, width, seed);
    proj_o = nn::Linear<T>(name + ".proj_o", orient_channels, width, seed);
    token_mix = nn::Linear<T>(name + ".token_mix", joints, tokens, seed);
    out = nn::Linear<T>(name + ".out", width, orient_channels, seed);
    if (residual) out.set_zero();
  } else if (mode == OfeMode::kConcat) {
    summary = nn::Linear<T>(name + ".summary", joints * joint_channels, width, seed);
    merge = nn::Linear<T>(name + ".merge", orient_channels + width, orient_channels, seed);
    merge.set_identity();
  }
}

template <typename T>
Var<T> Ofe<T>::operator()(Graph<T>& g, Var<T> f_j, Var<T> f_o, bool trainable, OfeTrace<T>* trace) {
  if (f_o.rows() == 0 || f_j.rows() == 0) throw SimaError("OFE: empty token set");
  if (mode == OfeMode::kOff) return f_o;
  if (mode == OfeMode::kConcat) {
    Var<T> s = summary(g, ad::reshape(f_j, 1, f_j.rows() * f_j.cols()), trainable);
    Var<T> spread = ad::matmul(g.constant(Matrix<T>::Ones(f_o.rows(), 1)), s);
    std::vector<Var<T>> parts{f_o, spread};
    return merge(g, ad::concat_cols<T>(parts), trainable);
  }

  OfeTrace<T> t;
  t.a_j = proj_j(g, f_j, trainable);
  t.a_o = proj_o(g, f_o, trainable);
  t.w_j = ad::attention_weights(t.a_j, t.a_j);
  t.h_j = ad::matmul(t.w_j, t.a_j);
  t.w_o = ad::attention_weights(t.a_o, t.a_o);
  t.h_o = ad::matmul(t.w_o, t.a_o);
  t.w_cross = ad::attention_weights(t.h_j, t.h_o);
  t.cross = ad::matmul(t.w_cross, t.h_o);  // J x d
  // J joint rows -> T_o cell rows, then back to the orientation width.
  Var<T> cells = ad::transpose(token_mix(g, ad::transpose(t.cross), trainable));
  Var<T> delta = out(g, cells, trainable);
  if (trace) *trace = t;
  return residual ? ad::add(f_o, delta) : delta;
}

template <typename T>
void Ofe<T>::collect(ParamList<T>& p) {
  if (mode == OfeMode::kAttention) {
    proj_j.collect(p);
    proj_o.collect(p);
    token_mix.collect(p);
    out.collect(p);
  } else if (mode == OfeMode::kConcat) {
    summary.collect(p);
    merge.collect(p);
  }
}

Variant parse_variant(const std::string& name) {
  if (name == "i" || name == "decoder-last") return Variant::kDecoderLast;
  if (name == "ii" || name == "vertex") return Variant::kVertex;
  if (name == "iii" || name == "vertex-joint") return Variant::kVertexJoint;
  if (name == "iv" || name == "vertex-orient") return Variant::kVertexOrient;
  if (name == "v" || name == "vertex-enhanced") return Variant::kVertexEnhanced;
  throw SimaError("unknown distillation variant '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDecoderLast: return "decoder-last";
    case Variant::kVertex: return "vertex";
    case Variant::kVertexJoint: return "vertex-joint";
    case Variant::kVertexOrient: return "vertex-orient";
    case Variant::kVertexEnhanced: return "vertex-enhanced";
  }
  return "?";
}

DistillPlan select_distill_targets(Variant v) {
  switch (v) {
    case Variant::kDecoderLast: return {ShapeTarget::kDecoderLast, OrientTarget::kNone};
    case Variant::kVertex: return {ShapeTarget::kVertex, OrientTarget::kNone};
    case Variant::kVertexJoint: return {ShapeTarget::kVertex, OrientTarget::kJoint};
    case Variant::kVertexOrient: return {ShapeTarget::kVertex, OrientTarget::kOrientRaw};
    case Variant::kVertexEnhanced: return {ShapeTarget::kVertex, OrientTarget::kOrientEnhanced};
  }
  throw SimaError("unknown distillation variant");
}

template <typename T>
Var<T> shape_enhance_loss(Var<T> student, Var<T> teacher, bool mse) {
  return losses::feature_distance(student, teacher, mse);
}

template <typename T>
Var<T> orientation_enhance_loss(Var<T> student, Var<T> teacher, bool mse) {
  return losses::feature_distance(student, teacher, mse);
}

template <typename T>
DistillTerms<T> distill(const DistillPlan& plan, const FeatureBundle<T>& student, const FeatureBundle<T>& teacher,
                        bool mse) {
  DistillTerms<T> d;
  if (plan.shape == ShapeTarget::kVertex)
    d.se = shape_enhance_loss(student.f_v, teacher.f_v, mse);
  else
    d.se = shape_enhance_loss(student.f_v_last, teacher.f_v_last, mse);
  switch (plan.orient) {
    case OrientTarget::kNone: break;
    case OrientTarget::kJoint: d.oe = orientation_enhance_loss(student.f_j, teacher.f_j, mse); break;
    case OrientTarget::kOrientRaw: d.oe = orientation_enhance_loss(student.f_o, teacher.f_o, mse); break;
    case OrientTarget::kOrientEnhanced:
      d.oe = orientation_enhance_loss(student.f_o_hat, teacher.f_o_hat, mse);
      break;
  }
  return d;
}

template struct Ofe<float>;
template struct Ofe<double>;
template Var<float> shape_enhance_loss(Var<float>, Var<float>, bool);
template Var<double> shape_enhance_loss(Var<double>, Var<double>, bool);
template Var<float> orientation_enhance_loss(Var<float>, Var<float>, bool);
template Var<double> orientation_enhance_loss(Var<double>, Var<double>, bool);
template DistillTerms<float> distill(const DistillPlan&, const FeatureBundle<float>&, const FeatureBundle<float>&,
                                     bool);
template DistillTerms<double> distill(const DistillPlan&, const FeatureBundle<double>&,
                                      const FeatureBundle<double>&, bool);

}  // namespace mvhand::sima
