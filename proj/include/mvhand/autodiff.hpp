#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Graph records every operation of one forward pass (a tape). Values are
// 2-D matrices; vectors are 1xN rows unless stated otherwise. Feature maps
// are stored as C x (H*W) with pixel index y*W + x. All operations are free
// functions taking and returning Var handles that point into the graph.

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvhand/common.hpp"

namespace mvhand::ad {

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Matrix<T>& value() const { return graph->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// A named trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<T>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Matrix<T>& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Matrix<T> v);
  /// A leaf whose gradient is kept and can be read after backward().
  Var<T> leaf(Matrix<T> v);
  /// Trainable parameter; repeated calls return the same node.
  Var<T> parameter(Parameter<T>& p);
  /// Parameter used as a constant: no gradient ever reaches it.
  Var<T> frozen(const Parameter<T>& p);

  const Matrix<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() output w.r.t. v (zeros if unreached).
  Matrix<T> grad(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates backwards.
  void backward(Var<T> out);
  /// Adds scale * dL/dp into Parameter::grad for every parameter node.
  void accumulate_parameter_grads(T scale = T(1));

  // Building blocks for operations.
  Var<T> emit(Matrix<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> emit(Matrix<T> value, std::span<const Var<T>> inputs, BackwardFn fn);
  bool needs(Var<T> v) const { return nodes_[v.id].requires_grad; }
  template <typename Expr>
  void accumulate(Var<T> v, const Expr& g) {
    auto& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  /// Mutable gradient buffer, zero-initialized on first access.
  Matrix<T>& grad_buffer(Var<T> v);

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
  std::vector<std::pair<Parameter<T>*, int>> params_;
};

// ---- elementwise and linear-algebra operations ---------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
/// Elementwise product.
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// Elementwise quotient.
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
/// a (RxC) + row (1xC) broadcast down the rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// a (RxC) + col (Rx1) broadcast across the columns.
template <typename T> Var<T> add_col(Var<T> a, Var<T> col);
/// Row i of a scaled by col(i).
template <typename T> Var<T> mul_col(Var<T> a, Var<T> col);
/// a scaled by the 1x1 value s.
template <typename T> Var<T> mul_scalar(Var<T> a, Var<T> s);
template <typename T> Var<T> elu(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> sqrt(Var<T> a);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// Rx1 column of row sums.
template <typename T> Var<T> row_sum(Var<T> a);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Eigen::Index rows, Eigen::Index cols);
template <typename T> Var<T> slice(Var<T> a, Eigen::Index r0, Eigen::Index nr, Eigen::Index c0,
                                   Eigen::Index nc);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> gather_rows(Var<T> a, std::vector<int> index);
/// Elementwise maximum over equally shaped inputs.
template <typename T> Var<T> max_elementwise(std::span<const Var<T>> parts);
template <typename T> Var<T> softmax_rows(Var<T> a);
/// Frobenius norm as a 1x1 value; the gradient at zero is taken as zero.
template <typename T> Var<T> norm(Var<T> a);
/// Rx1 Euclidean norms of the rows.
template <typename T> Var<T> row_norm(Var<T> a);
/// Cross product of two 1x3 rows.
template <typename T> Var<T> cross3(Var<T> a, Var<T> b);
/// Per-row normalization to zero mean / unit variance, then affine.
template <typename T> Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// ---- structured operations -----------------------------------------------

struct ConvGeometry {
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// x: Cin x (H*W), weight: Cout x (Cin*k*k), bias: Cout x 1 (optional).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const Var<T>* bias, const ConvGeometry& geo);
/// Nearest-neighbour 2x upsampling of a C x (H*W) feature map.
template <typename T> Var<T> upsample2x(Var<T> x, int height, int width);
/// Gathers the spiral neighbourhood of every vertex:
/// out.row(v) = [x.row(idx(v,0)), ..., x.row(idx(v,S-1))].
template <typename T> Var<T> spiral_gather(Var<T> x, const MatrixXi& spiral);

/// softmax(q k^T / sqrt(d)) as a Tq x Tk matrix.
template <typename T> Var<T> attention_weights(Var<T> q, Var<T> k);
/// softmax(q k^T / sqrt(d)) v.
template <typename T> Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v);

template <typename T> inline Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> inline Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> inline Var<T> operator*(Var<T> a, T s) { return scale(a, s); }

}  // namespace mvhand::ad
