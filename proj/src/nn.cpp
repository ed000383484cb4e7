#include "mvhand/nn.hpp"

#include <stdexcept>

namespace mvhand::nn {

template <typename T>
void init_fan_in(Parameter<T>& p, int fan_in, std::uint64_t seed) {
  Rng rng(fnv1a(p.name, seed ^ 0x9e3779b97f4a7c15ULL));
  const double bound = std::sqrt(3.0 / std::max(fan_in, 1));
  // Column-major fill keeps the stream order independent of T.
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = static_cast<T>(uniform(rng, -bound, bound));
  p.zero_grad();
}

// ---- Linear -----------------------------------------------------------------

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out, std::uint64_t seed, bool with_bias)
    : weight(name + ".weight", Matrix<T>::Zero(in, out)),
      bias(name + ".bias", Matrix<T>::Zero(1, out)),
      has_bias(with_bias) {
  init_fan_in(weight, in, seed);
}

template <typename T>
Var<T> Linear<T>::operator()(Graph<T>& g, Var<T> x, bool trainable) {
  Var<T> y = ad::matmul(x, use(g, weight, trainable));
  if (has_bias) y = ad::add_row(y, use(g, bias, trainable));
  return y;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

template <typename T>
void Linear<T>::set_identity() {
  weight.value.setZero();
  const auto n = std::min(weight.value.rows(), weight.value.cols());
  for (Eigen::Index i = 0; i < n; ++i) weight.value(i, i) = T(1);
  bias.value.setZero();
}

template <typename T>
void Linear<T>::set_zero() {
  weight.value.setZero();
  bias.value.setZero();
}

// ---- Mlp --------------------------------------------------------------------

template <typename T>
Mlp<T>::Mlp(const std::string& name, const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1], seed);
}

template <typename T>
Var<T> Mlp<T>::operator()(Graph<T>& g, Var<T> x, bool trainable) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](g, x, trainable);
    if (i + 1 < layers.size()) x = ad::elu(x);
  }
  return x;
}

template <typename T>
void Mlp<T>::collect(ParamList<T>& out) {
  for (auto& l : layers) l.collect(out);
}

// ---- Conv2d -----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int cin, int cout, int kernel_, int stride_, std::uint64_t seed,
                  bool with_bias)
    : weight(name + ".weight", Matrix<T>::Zero(cout, cin * kernel_ * kernel_)),
      bias(name + ".bias", Matrix<T>::Zero(cout, 1)),
      kernel(kernel_),
      stride(stride_),
      pad(kernel_ / 2),
      has_bias(with_bias) {
  init_fan_in(weight, cin * kernel_ * kernel_, seed);
}

template <typename T>
Var<T> Conv2d<T>::operator()(Graph<T>& g, Var<T> x, int height, int width, bool trainable) {
  Var<T> w = use(g, weight, trainable);
  if (!has_bias) return ad::conv2d<T>(x, w, nullptr, geometry(height, width));
  Var<T> b = use(g, bias, trainable);
  return ad::conv2d(x, w, &b, geometry(height, width));
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

// ---- SpiralConv -------------------------------------------------------------

template <typename T>
SpiralConv<T>::SpiralConv(const std::string& name, int cin, int cout, int spiral_length_, std::uint64_t seed)
    : linear(name, cin * spiral_length_, cout, seed), spiral_length(spiral_length_) {}

template <typename T>
Var<T> SpiralConv<T>::operator()(Graph<T>& g, Var<T> x, const MatrixXi& spiral, bool trainable) {
  if (spiral.cols() != spiral_length)
    throw std::invalid_argument("SpiralConv: spiral length does not match the layer");
  return linear(g, ad::spiral_gather(x, spiral), trainable);
}

// ---- LayerNorm --------------------------------------------------------------

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int width)
    : gamma(name + ".gamma", Matrix<T>::Ones(1, width)), beta(name + ".beta", Matrix<T>::Zero(1, width)) {}

template <typename T>
Var<T> LayerNorm<T>::operator()(Graph<T>& g, Var<T> x, bool trainable) {
  return ad::layer_norm_rows(x, use(g, gamma, trainable), use(g, beta, trainable));
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---- helpers ----------------------------------------------------------------

template <typename Src, typename Dst>
void copy_values(const ParamList<Src>& src, const ParamList<Dst>& dst) {
  if (src.size() != dst.size()) throw std::invalid_argument("copy_values: parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->value.rows() != dst[i]->value.rows() || src[i]->value.cols() != dst[i]->value.cols())
      throw std::invalid_argument("copy_values: shape mismatch at " + src[i]->name);
    dst[i]->value = src[i]->value.template cast<Dst>();
  }
}

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

#define MVHAND_INSTANTIATE_NN(T)                                       \
  template void init_fan_in(Parameter<T>&, int, std::uint64_t);        \
  template struct Linear<T>;                                            \
  template struct Mlp<T>;                                               \
  template struct Conv2d<T>;                                            \
  template struct SpiralConv<T>;                                        \
  template struct LayerNorm<T>;                                         \
  template std::size_t parameter_count(const ParamList<T>&);            \
  template void zero_grads(const ParamList<T>&);

MVHAND_INSTANTIATE_NN(float)
MVHAND_INSTANTIATE_NN(double)

template void copy_values(const ParamList<float>&, const ParamList<float>&);
template void copy_values(const ParamList<float>&, const ParamList<double>&);
template void copy_values(const ParamList<double>&, const ParamList<float>&);
template void copy_values(const ParamList<double>&, const ParamList<double>&);

}  // namespace mvhand::nn
