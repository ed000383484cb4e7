#pragma once

// Parameterized building blocks on top of the autodiff graph.
//
// Initialization: weights are drawn from U(-sqrt(3/fan_in), sqrt(3/fan_in))
// (unit-variance-preserving fan-in scheme), biases start at zero. Each
// parameter's stream is seeded from (model seed, parameter name), so the
// values do not depend on construction order.

#include <memory>
#include <string>
#include <vector>

#include "mvhand/autodiff.hpp"

namespace mvhand::nn {

using ad::Graph;
using ad::Parameter;
using ad::Var;

/// Ordered list of parameter handles; the order is the checkpoint order.
template <typename T>
using ParamList = std::vector<Parameter<T>*>;

/// Deterministic fan-in uniform initialization of one parameter.
template <typename T>
void init_fan_in(Parameter<T>& p, int fan_in, std::uint64_t seed);

/// Fetches p either as a trainable node or as a frozen constant.
template <typename T>
inline Var<T> use(Graph<T>& g, Parameter<T>& p, bool trainable) {
  return trainable ? g.parameter(p) : g.frozen(p);
}

/// y = x W + b with x: R x in, W: in x out, b: 1 x out.
template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::uint64_t seed, bool with_bias = true);

  Var<T> operator()(Graph<T>& g, Var<T> x, bool trainable = true);
  void collect(ParamList<T>& out);
  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }
  /// weight = [I; 0] (in >= out) and bias = 0.
  void set_identity();
  void set_zero();
};

/// Stack of Linear layers with ELU between them (none after the last).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<int>& widths, std::uint64_t seed);

  Var<T> operator()(Graph<T>& g, Var<T> x, bool trainable = true);
  void collect(ParamList<T>& out);
};

/// 2-D convolution on C x (H*W) feature maps.
template <typename T>
struct Conv2d {
  Parameter<T> weight;  // Cout x (Cin*k*k)
  Parameter<T> bias;    // Cout x 1
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool has_bias = true;

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int kernel, int stride, std::uint64_t seed,
         bool with_bias = true);

  Var<T> operator()(Graph<T>& g, Var<T> x, int height, int width, bool trainable = true);
  ad::ConvGeometry geometry(int height, int width) const { return {height, width, kernel, stride, pad}; }
  void collect(ParamList<T>& out);
  int in_channels() const { return static_cast<int>(weight.value.cols()) / (kernel * kernel); }
  int out_channels() const { return static_cast<int>(weight.value.rows()); }
};

/// Spiral convolution: gather the S spiral neighbours of every vertex,
/// concatenate their features and apply one shared linear map.
template <typename T>
struct SpiralConv {
  Linear<T> linear;  // (S*Cin) x Cout
  int spiral_length = 1;

  SpiralConv() = default;
  SpiralConv(const std::string& name, int cin, int cout, int spiral_length, std::uint64_t seed);

  Var<T> operator()(Graph<T>& g, Var<T> x, const MatrixXi& spiral, bool trainable = true);
  void collect(ParamList<T>& out) { linear.collect(out); }
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int width);

  Var<T> operator()(Graph<T>& g, Var<T> x, bool trainable = true);
  void collect(ParamList<T>& out);
};

/// Copies values between two parameter lists of identical structure
/// (possibly of different scalar type).
template <typename Src, typename Dst>
void copy_values(const ParamList<Src>& src, const ParamList<Dst>& dst);

template <typename T>
std::size_t parameter_count(const ParamList<T>& params);

template <typename T>
void zero_grads(const ParamList<T>& params);

/// Graph input from a fixed matrix, cast to T.
template <typename T, typename Derived>
Var<T> input(Graph<T>& g, const Eigen::MatrixBase<Derived>& m) {
  return g.constant(m.template cast<T>());
}

}  // namespace mvhand::nn
