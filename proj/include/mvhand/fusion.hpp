#pragma once

// Multi-view feature fusion at the image, joint and vertex level, plus the
// concatenation / pooling variants used in ablations. View 0 is always the
// target view.

#include <string>
#include <vector>

#include "mvhand/nn.hpp"

namespace mvhand::fusion {

using ad::Graph;
using ad::Var;
using nn::ParamList;

enum class Mode { kOff, kConcat, kPool, kStats, kAttention };

Mode parse_mode(const std::string& name);
std::string mode_name(Mode m);

class FusionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Image level: per pixel, concatenate the N views' channels and map back
/// to C with g(x) = L x + M(x), L initialized to select the target view and
/// the last layer of the MLP M initialized to zero. kOff returns the target
/// view's feature.
template <typename T>
struct ImageFusion {
  Mode mode = Mode::kConcat;
  int views = 1;
  int channels = 0;
  nn::Conv2d<T> select;  // 1x1, (N*C) -> C
  nn::Conv2d<T> hidden;  // 1x1, (N*C) -> C
  nn::Conv2d<T> out;     // 1x1, C -> C, zero-initialized

  ImageFusion() = default;
  ImageFusion(const std::string& name, Mode mode, int views, int channels, std::uint64_t seed);
  /// f_i of every view: C x (H*W) each.
  Var<T> operator()(Graph<T>& g, const std::vector<Var<T>>& f_i, int height, int width, bool trainable = true);
  void collect(ParamList<T>& out_params);
  void set_identity();
};

inline constexpr double kStdEps = 1e-12;

/// Elementwise max, mean and population standard deviation
/// sqrt(var + kStdEps) across views.
template <typename T>
struct ViewStats {
  Var<T> max, avg, std;
};
template <typename T>
ViewStats<T> view_stats(const std::vector<Var<T>>& views);

/// Joint level. kStats: f = Avg + M([Max, Avg, Std]) per joint with the last
/// layer of M zero-initialized. kConcat: f = L [f_1 ... f_N] with L
/// initialized to select the target view. kOff: the target view.
template <typename T>
struct JointFusion {
  Mode mode = Mode::kStats;
  int views = 1;
  int channels = 0;
  nn::Linear<T> hidden;  // 3C -> C   (stats)
  nn::Linear<T> out;     // C -> C    (stats), zero-initialized
  nn::Linear<T> concat;  // N*C -> C  (concat)

  JointFusion() = default;
  JointFusion(const std::string& name, Mode mode, int views, int channels, std::uint64_t seed);
  Var<T> operator()(Graph<T>& g, const std::vector<Var<T>>& f_j, bool trainable = true);
  void collect(ParamList<T>& out_params);
  void set_identity();
};

template <typename T>
struct VertexFusionResult {
  Var<T> fused;    // Vc x C
  Var<T> weights;  // Vc x N, rows on the simplex (attention only)
};

/// Vertex level. kAttention: for every coarse vertex the N view features
/// attend to each other (softmax over views of scaled dot products), a
/// residual plus a linear head gives one logit per view, and the fused
/// feature is the softmax-over-views weighted sum of the original view
/// features. kPool: elementwise max over views. kConcat: linear map of the
/// channel-concatenated views. kOff: the target view.
template <typename T>
struct VertexFusion {
  Mode mode = Mode::kAttention;
  int views = 1;
  int channels = 0;
  bool projections = false;  // learned Q/K/V maps before the view attention
  nn::Linear<T> logit;       // C -> 1, no bias: a shared offset cancels in the softmax
  nn::Linear<T> query, key, value;  // key/value without bias (it would cancel in the softmaxes)
  nn::Linear<T> concat;      // N*C -> C

  VertexFusion() = default;
  VertexFusion(const std::string& name, Mode mode, int views, int channels, std::uint64_t seed,
               bool projections = false);
  VertexFusionResult<T> operator()(Graph<T>& g, const std::vector<Var<T>>& f_v, bool trainable = true);
  void collect(ParamList<T>& out_params);
  void set_identity();
};

}  // namespace mvhand::fusion
