#pragma once

// Dual-branch hand reconstructor. One trunk (hourglass encoder, shape branch,
// orientation branch) serves the single-view model directly and the
// multi-view model once per view, with fusion between the per-view passes.

#include <string>
#include <vector>

#include "mvhand/features.hpp"
#include "mvhand/fusion.hpp"
#include "mvhand/hand_model.hpp"
#include "mvhand/nn.hpp"
#include "mvhand/sima.hpp"

namespace mvhand::recon {

using ad::Graph;
using ad::Var;
using nn::ParamList;

class ReconError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int image_size = 64;
  int in_channels = 2;
  std::vector<int> encoder{32, 48, 64};  // widths at H, H/2, H/4 (the bottleneck reuses the last)
  int c_i = 64, c_j = 64, c_v = 128, c_o = 128;
  std::vector<int> decoder{128, 64, 32};  // first stage on the coarse mesh, the rest on the fine one
  int ofe_width = 64;
  int regressor_hidden = 128;
  double lift_sigma = 20.0;  // mm; initial mixing logits are -distance / sigma
  sima::OfeMode ofe = sima::OfeMode::kAttention;
  bool ofe_residual = true;
  fusion::Mode image_fusion = fusion::Mode::kConcat;
  fusion::Mode joint_fusion = fusion::Mode::kStats;
  fusion::Mode vertex_fusion = fusion::Mode::kAttention;
  bool vff_projections = false;
  int views = 4;
  std::uint64_t seed = 1;

  int feature_size() const { return image_size / 4; }
  static constexpr int kOrientGrid = 4;
  static constexpr int orient_tokens() { return kOrientGrid * kOrientGrid; }
  /// Throws ReconError for sizes the trunk cannot handle.
  void validate() const;
};

// ---- trunk components -------------------------------------------------------

/// Down-up convolutional hourglass with one skip connection:
/// H -> H/2 -> H/4 (skip) -> H/8 -> up to H/4, + skip, -> C_i.
template <typename T>
struct HourglassEncoder {
  nn::Conv2d<T> c1, c2, c3, bottleneck, merge;
  int size = 0;

  HourglassEncoder() = default;
  HourglassEncoder(const ModelConfig& cfg);
  /// image: C_in x (H*W). Returns C_i x (H/4 * W/4).
  Var<T> operator()(Graph<T>& g, Var<T> image, bool trainable = true);
  void collect(ParamList<T>& p);
};

/// joints2d = softmax(logits) . pixel centres, on an h x w grid;
/// logits: J x (h*w). Coordinates are (x, y) normalized to [0, 1].
template <typename T>
Var<T> soft_argmax(Graph<T>& g, Var<T> heatmaps, int height, int width);

template <typename T>
struct ShapeEncoderOut {
  Var<T> heatmaps;  // J x P, rows sum to 1
  Var<T> joints2d;  // J x 2
  Var<T> f_j;       // J x C_j
};

/// J heatmaps from a 1x1 conv, soft-argmax joints, and per-joint features
/// pooled from a 1x1-projected map with the heatmap weights.
template <typename T>
struct ShapeEncoder {
  nn::Conv2d<T> heat, feat;
  int size = 0;

  ShapeEncoder() = default;
  ShapeEncoder(const ModelConfig& cfg, int joints);
  ShapeEncoderOut<T> operator()(Graph<T>& g, Var<T> f_i, bool trainable = true);
  void collect(ParamList<T>& p);
};

/// f_v = softmax_rows(mix) * Linear([f_j | joints2d]); mix is Vc x J.
template <typename T>
struct Lifter {
  nn::Linear<T> linear;
  ad::Parameter<T> mix;

  Lifter() = default;
  Lifter(const ModelConfig& cfg, const HandTemplate& tpl);
  Var<T> operator()(Graph<T>& g, Var<T> f_j, Var<T> joints2d, bool trainable = true);
  void collect(ParamList<T>& p);
};

template <typename T>
struct DecoderOut {
  Var<T> vertices;         // V x 3
  Var<T> vertices_coarse;  // Vc x 3, the fine prediction at the coarse vertices
  Var<T> f_v_last;         // V x decoder.back()
};

/// Spiral blocks on the coarse mesh, upsampling, spiral blocks on the fine
/// mesh, then a linear head plus a per-vertex offset (the template shape at
/// initialization).
template <typename T>
struct SpiralDecoder {
  std::vector<nn::SpiralConv<T>> blocks;
  nn::Linear<T> head;
  ad::Parameter<T> offset;
  const HandTemplate* tpl = nullptr;

  SpiralDecoder() = default;
  SpiralDecoder(const ModelConfig& cfg, const HandTemplate& tpl);
  DecoderOut<T> operator()(Graph<T>& g, Var<T> f_v, bool trainable = true);
  void collect(ParamList<T>& p);
  void zero_head();
};

/// Stride-2 convolutions from the H/4 feature grid down to 4 x 4. Returns
/// one row per grid cell: T_o x C_o.
template <typename T>
struct OrientationEncoder {
  std::vector<nn::Conv2d<T>> convs;
  int size = 0;

  OrientationEncoder() = default;
  OrientationEncoder(const ModelConfig& cfg);
  Var<T> operator()(Graph<T>& g, Var<T> f_i, bool trainable = true);
  void collect(ParamList<T>& p);
};

struct RotationOptions {
  bool strict = false;     // throw on a degenerate 6-vector instead of jittering
  double tolerance = 1e-8;
  double jitter = 1e-6;
};

/// Gram-Schmidt on the two 3-vectors of a 1x6 row; the result has columns
/// b1, b2, b1 x b2.
template <typename T>
Var<T> rotation_from_6d(Graph<T>& g, Var<T> six, const RotationOptions& options = {});

/// MLP from the flattened orientation tokens to a 6-vector whose last bias
/// starts at (1,0,0, 0,1,0), followed by rotation_from_6d.
template <typename T>
struct RotationRegressor {
  nn::Mlp<T> mlp;

  RotationRegressor() = default;
  RotationRegressor(const ModelConfig& cfg);
  Var<T> six(Graph<T>& g, Var<T> f_o_hat, bool trainable = true);
  Var<T> operator()(Graph<T>& g, Var<T> f_o_hat, const RotationOptions& options, bool trainable = true);
  void collect(ParamList<T>& p);
};

struct ForwardOptions {
  bool trainable = true;
  RotationOptions rotation;
};

template <typename T>
struct ViewFeatures {
  Var<T> f_i, heatmaps, joints2d, f_j, f_v;
};

/// Everything shared by the single-view model and each view of the
/// multi-view model. Parameter names carry no model prefix, so two models
/// built from the same config hold identical trunk weights.
template <typename T>
struct Trunk {
  HourglassEncoder<T> encoder;
  ShapeEncoder<T> shape;
  Lifter<T> lift;
  SpiralDecoder<T> decoder;
  OrientationEncoder<T> orient;
  sima::Ofe<T> ofe;
  RotationRegressor<T> regressor;

  Trunk() = default;
  Trunk(const ModelConfig& cfg, const HandTemplate& tpl);
  ViewFeatures<T> view(Graph<T>& g, Var<T> image, bool trainable);
  void collect(ParamList<T>& p);
};

template <typename T>
struct SvrResult {
  FeatureBundle<T> features;
  ReconOutput<T> output;
};

template <typename T>
struct MvrResult {
  std::vector<FeatureBundle<T>> views;  // in input order after moving the target first
  FeatureBundle<T> fused;
  ReconOutput<T> output;                // joints2d of the target view
  std::vector<Var<T>> joints2d;         // every view, same order as `views`
  std::vector<int> order;               // original index of each entry of `views`
  Var<T> vertex_weights;                // Vc x N (attention fusion only)
};

template <typename T>
class Svr {
 public:
  Svr(const ModelConfig& cfg, const HandTemplate& tpl);
  SvrResult<T> forward(Graph<T>& g, const Matrix<float>& image, const ForwardOptions& options = {});
  ParamList<T> parameters();
  const ModelConfig& config() const { return cfg_; }
  Trunk<T>& trunk() { return trunk_; }

 private:
  ModelConfig cfg_;
  const HandTemplate* tpl_;
  Trunk<T> trunk_;
};

template <typename T>
class Mvr {
 public:
  Mvr(const ModelConfig& cfg, const HandTemplate& tpl);
  /// images: one per view. The target view drives the orientation and is
  /// moved to the front before fusion.
  MvrResult<T> forward(Graph<T>& g, const std::vector<Matrix<float>>& images, int target_view,
                       const ForwardOptions& options = {});
  ParamList<T> parameters();
  ParamList<T> trunk_parameters();
  const ModelConfig& config() const { return cfg_; }
  Trunk<T>& trunk() { return trunk_; }
  fusion::ImageFusion<T> iff;
  fusion::JointFusion<T> jff;
  fusion::VertexFusion<T> vff;

 private:
  ModelConfig cfg_;
  const HandTemplate* tpl_;
  Trunk<T> trunk_;
};

}  // namespace mvhand::recon
