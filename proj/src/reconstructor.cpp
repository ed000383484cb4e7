#include "mvhand/reconstructor.hpp"

#include <cmath>

namespace mvhand::recon {

void ModelConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0 || ((image_size / 16) & (image_size / 16 - 1)) != 0)
    throw ReconError("image_size must be 16 times a power of two, got " + std::to_string(image_size));
  if (encoder.size() != 3) throw ReconError("encoder needs three widths");
  if (decoder.empty()) throw ReconError("decoder needs at least one stage");
  for (int w : encoder)
    if (w <= 0) throw ReconError("encoder widths must be positive");
  for (int w : decoder)
    if (w <= 0) throw ReconError("decoder widths must be positive");
  if (in_channels <= 0 || c_i <= 0 || c_j <= 0 || c_v <= 0 || c_o <= 0 || ofe_width <= 0 || regressor_hidden <= 0)
    throw ReconError("feature widths must be positive");
  if (views < 1) throw ReconError("views must be at least 1");
}

// ---- encoder ----------------------------------------------------------------

template <typename T>
HourglassEncoder<T>::HourglassEncoder(const ModelConfig& cfg) : size(cfg.image_size) {
  const auto s = cfg.seed;
  c1 = nn::Conv2d<T>("encoder.c1", cfg.in_channels, cfg.encoder[0], 3, 1, s);
  c2 = nn::Conv2d<T>("encoder.c2", cfg.encoder[0], cfg.encoder[1], 3, 2, s);
  c3 = nn::Conv2d<T>("encoder.c3", cfg.encoder[1], cfg.encoder[2], 3, 2, s);
  bottleneck = nn::Conv2d<T>("encoder.bottleneck", cfg.encoder[2], cfg.encoder[2], 3, 2, s);
  merge = nn::Conv2d<T>("encoder.merge", cfg.encoder[2], cfg.c_i, 3, 1, s);
}

template <typename T>
Var<T> HourglassEncoder<T>::operator()(Graph<T>& g, Var<T> image, bool trainable) {
  if (image.rows() != c1.in_channels() || image.cols() != static_cast<Eigen::Index>(size) * size)
    throw ReconError("encoder: expected a " + std::to_string(c1.in_channels()) + " x " + std::to_string(size * size) +
                     " image, got " + std::to_string(image.rows()) + " x " + std::to_string(image.cols()));
  const int h = size;
  Var<T> x = ad::elu(c1(g, image, h, h, trainable));
  x = ad::elu(c2(g, x, h, h, trainable));
  Var<T> skip = ad::elu(c3(g, x, h / 2, h / 2, trainable));
  Var<T> low = ad::elu(bottleneck(g, skip, h / 4, h / 4, trainable));
  Var<T> up = ad::add(ad::upsample2x(low, h / 8, h / 8), skip);
  return ad::elu(merge(g, up, h / 4, h / 4, trainable));
}

template <typename T>
void HourglassEncoder<T>::collect(ParamList<T>& p) {
  for (auto* c : {&c1, &c2, &c3, &bottleneck, &merge}) c->collect(p);
}

// ---- shape branch -----------------------------------------------------------

template <typename T>
Var<T> soft_argmax(Graph<T>& g, Var<T> heatmaps, int height, int width) {
  Matrix<T> centres(static_cast<Eigen::Index>(height) * width, 2);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      centres(y * width + x, 0) = (static_cast<T>(x) + T(0.5)) / static_cast<T>(width);
      centres(y * width + x, 1) = (static_cast<T>(y) + T(0.5)) / static_cast<T>(height);
    }
  return ad::matmul(heatmaps, g.constant(std::move(centres)));
}

template <typename T>
ShapeEncoder<T>::ShapeEncoder(const ModelConfig& cfg, int joints) : size(cfg.feature_size()) {
  // No bias: a per-joint offset cancels in the spatial softmax.
  heat = nn::Conv2d<T>("shape.heat", cfg.c_i, joints, 1, 1, cfg.seed, false);
  feat = nn::Conv2d<T>("shape.feat", cfg.c_i, cfg.c_j, 1, 1, cfg.seed);
}

template <typename T>
ShapeEncoderOut<T> ShapeEncoder<T>::operator()(Graph<T>& g, Var<T> f_i, bool trainable) {
  ShapeEncoderOut<T> o;
  o.heatmaps = ad::softmax_rows(heat(g, f_i, size, size, trainable));
  o.joints2d = soft_argmax(g, o.heatmaps, size, size);
  o.f_j = ad::matmul_nt(o.heatmaps, feat(g, f_i, size, size, trainable));
  return o;
}

template <typename T>
void ShapeEncoder<T>::collect(ParamList<T>& p) {
  heat.collect(p);
  feat.collect(p);
}

template <typename T>
Lifter<T>::Lifter(const ModelConfig& cfg, const HandTemplate& tpl)
    : linear("lift.linear", cfg.c_j + 2, cfg.c_v, cfg.seed) {
  const Matrix<double> coarse = tpl.coarse_vertices();
  const Matrix<double>& joints = tpl.rest_joints;
  Matrix<T> logits(coarse.rows(), joints.rows());
  for (Eigen::Index v = 0; v < coarse.rows(); ++v)
    for (Eigen::Index j = 0; j < joints.rows(); ++j)
      logits(v, j) = static_cast<T>(-(coarse.row(v) - joints.row(j)).norm() / cfg.lift_sigma);
  mix = ad::Parameter<T>("lift.mix", std::move(logits));
}

template <typename T>
Var<T> Lifter<T>::operator()(Graph<T>& g, Var<T> f_j, Var<T> joints2d, bool trainable) {
  std::vector<Var<T>> parts{f_j, joints2d};
  Var<T> per_joint = linear(g, ad::concat_cols<T>(parts), trainable);
  return ad::matmul(ad::softmax_rows(nn::use(g, mix, trainable)), per_joint);
}

template <typename T>
void Lifter<T>::collect(ParamList<T>& p) {
  linear.collect(p);
  p.push_back(&mix);
}

template <typename T>
SpiralDecoder<T>::SpiralDecoder(const ModelConfig& cfg, const HandTemplate& t) : tpl(&t) {
  int cin = cfg.c_v;
  for (std::size_t k = 0; k < cfg.decoder.size(); ++k) {
    const int length = static_cast<int>(k == 0 ? t.spiral_indices.cols() : t.spiral_indices_fine.cols());
    blocks.emplace_back("decoder." + std::to_string(k), cin, cfg.decoder[k], length, cfg.seed);
    cin = cfg.decoder[k];
  }
  head = nn::Linear<T>("decoder.head", cin, 3, cfg.seed);
  offset = ad::Parameter<T>("decoder.offset", t.vertices_canonical.template cast<T>());
}

template <typename T>
DecoderOut<T> SpiralDecoder<T>::operator()(Graph<T>& g, Var<T> f_v, bool trainable) {
  Var<T> x = ad::elu(blocks[0](g, f_v, tpl->spiral_indices, trainable));
  x = ad::matmul(g.constant(tpl->upsample_matrix.template cast<T>()), x);
  for (std::size_t k = 1; k < blocks.size(); ++k) x = ad::elu(blocks[k](g, x, tpl->spiral_indices_fine, trainable));
  DecoderOut<T> o;
  o.f_v_last = x;
  o.vertices = ad::add(head(g, x, trainable), nn::use(g, offset, trainable));
  o.vertices_coarse = ad::gather_rows(o.vertices, tpl->coarse_to_fine);
  return o;
}

template <typename T>
void SpiralDecoder<T>::collect(ParamList<T>& p) {
  for (auto& b : blocks) b.collect(p);
  head.collect(p);
  p.push_back(&offset);
}

template <typename T>
void SpiralDecoder<T>::zero_head() {
  head.set_zero();
  offset.value.setZero();
}

// ---- orientation branch -----------------------------------------------------

template <typename T>
OrientationEncoder<T>::OrientationEncoder(const ModelConfig& cfg) : size(cfg.feature_size()) {
  int cin = cfg.c_i;
  int s = size;
  if (s == ModelConfig::kOrientGrid) {
    convs.emplace_back("orient.0", cin, cfg.c_o, 3, 1, cfg.seed);
    return;
  }
  for (int k = 0; s > ModelConfig::kOrientGrid; ++k, s /= 2) {
    convs.emplace_back("orient." + std::to_string(k), cin, cfg.c_o, 3, 2, cfg.seed);
    cin = cfg.c_o;
  }
}

template <typename T>
Var<T> OrientationEncoder<T>::operator()(Graph<T>& g, Var<T> f_i, bool trainable) {
  int s = size;
  Var<T> x = f_i;
  for (auto& c : convs) {
    x = ad::elu(c(g, x, s, s, trainable));
    s = c.geometry(s, s).out_height();
  }
  return ad::transpose(x);
}

template <typename T>
void OrientationEncoder<T>::collect(ParamList<T>& p) {
  for (auto& c : convs) c.collect(p);
}

template <typename T>
Var<T> rotation_from_6d(Graph<T>& g, Var<T> six, const RotationOptions& options) {
  if (six.rows() != 1 || six.cols() != 6) throw ReconError("rotation_from_6d expects a 1x6 row");
  Var<T> a1 = ad::slice(six, 0, 1, 0, 3);
  Var<T> a2 = ad::slice(six, 0, 1, 3, 3);

  const Eigen::Matrix<double, 1, 3> v1 = a1.value().template cast<double>();
  const Eigen::Matrix<double, 1, 3> v2 = a2.value().template cast<double>();
  const double n1 = v1.norm(), n2 = v2.norm();
  const bool degenerate = !(n1 >= options.tolerance) || !(v1.cross(v2).norm() > options.tolerance * n1 * n2);
  if (degenerate) {
    if (options.strict) throw ReconError("rotation_from_6d: zero or collinear 6-vector");
    Matrix<T> e1 = Matrix<T>::Zero(1, 3), e2 = Matrix<T>::Zero(1, 3);
    e1(0, 0) = static_cast<T>(options.jitter);
    e2(0, 1) = static_cast<T>(options.jitter);
    a1 = ad::add(a1, g.constant(e1));
    a2 = ad::add(a2, g.constant(e2));
  }

  Var<T> one = g.constant(Matrix<T>::Ones(1, 1));
  Var<T> b1 = ad::mul_scalar(a1, ad::div(one, ad::norm(a1)));
  Var<T> u2 = ad::sub(a2, ad::mul_scalar(b1, ad::sum(ad::mul(b1, a2))));
  Var<T> b2 = ad::mul_scalar(u2, ad::div(one, ad::norm(u2)));
  Var<T> b3 = ad::cross3(b1, b2);
  std::vector<Var<T>> rows{b1, b2, b3};
  return ad::transpose(ad::concat_rows<T>(rows));
}

template <typename T>
RotationRegressor<T>::RotationRegressor(const ModelConfig& cfg)
    : mlp("regressor", {ModelConfig::orient_tokens() * cfg.c_o, cfg.regressor_hidden, 6}, cfg.seed) {
  auto& b = mlp.layers.back().bias.value;
  b.setZero();
  b(0, 0) = T(1);
  b(0, 4) = T(1);
}

template <typename T>
Var<T> RotationRegressor<T>::six(Graph<T>& g, Var<T> f_o_hat, bool trainable) {
  return mlp(g, ad::reshape(f_o_hat, 1, f_o_hat.rows() * f_o_hat.cols()), trainable);
}

template <typename T>
Var<T> RotationRegressor<T>::operator()(Graph<T>& g, Var<T> f_o_hat, const RotationOptions& options,
                                        bool trainable) {
  return rotation_from_6d(g, six(g, f_o_hat, trainable), options);
}

template <typename T>
void RotationRegressor<T>::collect(ParamList<T>& p) {
  mlp.collect(p);
}

// ---- trunk and models -------------------------------------------------------

template <typename T>
Trunk<T>::Trunk(const ModelConfig& cfg, const HandTemplate& tpl)
    : encoder(cfg),
      shape(cfg, static_cast<int>(tpl.joint_regressor.rows())),
      lift(cfg, tpl),
      decoder(cfg, tpl),
      orient(cfg),
      ofe("ofe", cfg.ofe, static_cast<int>(tpl.joint_regressor.rows()), cfg.c_j, ModelConfig::orient_tokens(),
          cfg.c_o, cfg.ofe_width, cfg.seed, cfg.ofe_residual),
      regressor(cfg) {}

template <typename T>
ViewFeatures<T> Trunk<T>::view(Graph<T>& g, Var<T> image, bool trainable) {
  ViewFeatures<T> v;
  v.f_i = encoder(g, image, trainable);
  auto s = shape(g, v.f_i, trainable);
  v.heatmaps = s.heatmaps;
  v.joints2d = s.joints2d;
  v.f_j = s.f_j;
  v.f_v = lift(g, v.f_j, v.joints2d, trainable);
  return v;
}

template <typename T>
void Trunk<T>::collect(ParamList<T>& p) {
  encoder.collect(p);
  shape.collect(p);
  lift.collect(p);
  decoder.collect(p);
  orient.collect(p);
  ofe.collect(p);
  regressor.collect(p);
}

template <typename T>
Svr<T>::Svr(const ModelConfig& cfg, const HandTemplate& tpl) : cfg_(cfg), tpl_(&tpl) {
  cfg_.validate();
  trunk_ = Trunk<T>(cfg_, tpl);
}

template <typename T>
SvrResult<T> Svr<T>::forward(Graph<T>& g, const Matrix<float>& image, const ForwardOptions& options) {
  const bool tr = options.trainable;
  auto v = trunk_.view(g, nn::input(g, image), tr);
  SvrResult<T> r;
  auto& f = r.features;
  f.f_i = v.f_i;
  f.heatmaps = v.heatmaps;
  f.f_j = v.f_j;
  f.f_v = v.f_v;
  f.f_o = trunk_.orient(g, v.f_i, tr);
  f.f_o_hat = trunk_.ofe(g, v.f_j, f.f_o, tr);
  auto dec = trunk_.decoder(g, v.f_v, tr);
  f.f_v_last = dec.f_v_last;
  r.output.vertices = dec.vertices;
  r.output.vertices_coarse = dec.vertices_coarse;
  r.output.joints2d = v.joints2d;
  r.output.rotation = trunk_.regressor(g, f.f_o_hat, options.rotation, tr);
  return r;
}

template <typename T>
ParamList<T> Svr<T>::parameters() {
  ParamList<T> p;
  trunk_.collect(p);
  return p;
}

template <typename T>
Mvr<T>::Mvr(const ModelConfig& cfg, const HandTemplate& tpl) : cfg_(cfg), tpl_(&tpl) {
  cfg_.validate();
  trunk_ = Trunk<T>(cfg_, tpl);
  iff = fusion::ImageFusion<T>("fusion.image", cfg_.image_fusion, cfg_.views, cfg_.c_i, cfg_.seed);
  jff = fusion::JointFusion<T>("fusion.joint", cfg_.joint_fusion, cfg_.views, cfg_.c_j, cfg_.seed);
  vff = fusion::VertexFusion<T>("fusion.vertex", cfg_.vertex_fusion, cfg_.views, cfg_.c_v, cfg_.seed,
                                cfg_.vff_projections);
}

template <typename T>
MvrResult<T> Mvr<T>::forward(Graph<T>& g, const std::vector<Matrix<float>>& images, int target_view,
                             const ForwardOptions& options) {
  const int n = static_cast<int>(images.size());
  if (n == 0) throw ReconError("mvr: no views");
  if (target_view < 0 || target_view >= n) throw ReconError("mvr: target view out of range");
  const bool tr = options.trainable;

  MvrResult<T> r;
  r.order.push_back(target_view);
  for (int i = 0; i < n; ++i)
    if (i != target_view) r.order.push_back(i);

  std::vector<Var<T>> f_i, f_j, f_v;
  for (int idx : r.order) {
    auto v = trunk_.view(g, nn::input(g, images[idx]), tr);
    FeatureBundle<T> b;
    b.f_i = v.f_i;
    b.heatmaps = v.heatmaps;
    b.f_j = v.f_j;
    b.f_v = v.f_v;
    r.views.push_back(b);
    r.joints2d.push_back(v.joints2d);
    f_i.push_back(v.f_i);
    f_j.push_back(v.f_j);
    f_v.push_back(v.f_v);
  }

  const int fs = cfg_.feature_size();
  auto& f = r.fused;
  f.f_i = iff(g, f_i, fs, fs, tr);
  f.heatmaps = r.views[0].heatmaps;
  f.f_j = jff(g, f_j, tr);
  auto vf = vff(g, f_v, tr);
  f.f_v = vf.fused;
  r.vertex_weights = vf.weights;
  f.f_o = trunk_.orient(g, f.f_i, tr);
  f.f_o_hat = trunk_.ofe(g, f.f_j, f.f_o, tr);
  auto dec = trunk_.decoder(g, f.f_v, tr);
  f.f_v_last = dec.f_v_last;

  r.output.vertices = dec.vertices;
  r.output.vertices_coarse = dec.vertices_coarse;
  r.output.joints2d = r.joints2d[0];
  r.output.rotation = trunk_.regressor(g, f.f_o_hat, options.rotation, tr);
  return r;
}

template <typename T>
ParamList<T> Mvr<T>::trunk_parameters() {
  ParamList<T> p;
  trunk_.collect(p);
  return p;
}

template <typename T>
ParamList<T> Mvr<T>::parameters() {
  ParamList<T> p = trunk_parameters();
  iff.collect(p);
  jff.collect(p);
  vff.collect(p);
  return p;
}

#define MVHAND_INSTANTIATE_RECON(T)                                             \
  template struct HourglassEncoder<T>;                                          \
  template struct ShapeEncoder<T>;                                              \
  template struct Lifter<T>;                                                    \
  template struct SpiralDecoder<T>;                                             \
  template struct OrientationEncoder<T>;                                        \
  template struct RotationRegressor<T>;                                         \
  template struct Trunk<T>;                                                     \
  template class Svr<T>;                                                        \
  template class Mvr<T>;                                                        \
  template Var<T> soft_argmax(Graph<T>&, Var<T>, int, int);                     \
  template Var<T> rotation_from_6d(Graph<T>&, Var<T>, const RotationOptions&);

MVHAND_INSTANTIATE_RECON(float)
MVHAND_INSTANTIATE_RECON(double)

}  // namespace mvhand::recon
