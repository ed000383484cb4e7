#include "mvhand/autodiff.hpp"

#include <stdexcept>

namespace mvhand::ad {

namespace {

[[noreturn]] void shape_error(const char* op, Eigen::Index r1, Eigen::Index c1, Eigen::Index r2,
                              Eigen::Index c2) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(r1) + "x" +
                              std::to_string(c1) + " vs " + std::to_string(r2) + "x" +
                              std::to_string(c2));
}

template <typename T>
void require_same(const char* op, Var<T> a, Var<T> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a.rows(), a.cols(), b.rows(), b.cols());
}

}  // namespace

// ---- Graph ----------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::constant(Matrix<T> v) {
  nodes_.push_back(Node{std::move(v), {}, {}, false});
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::leaf(Matrix<T> v) {
  nodes_.push_back(Node{std::move(v), {}, {}, true});
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>{this, it->second};
  Var<T> v = leaf(p.value);
  param_nodes_[&p] = v.id;
  params_.emplace_back(&p, v.id);
  return v;
}

template <typename T>
Var<T> Graph<T>::frozen(const Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>{this, it->second};
  Var<T> v = constant(p.value);
  param_nodes_[&p] = v.id;
  return v;
}

template <typename T>
Matrix<T> Graph<T>::grad(Var<T> v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
Matrix<T>& Graph<T>::grad_buffer(Var<T> v) {
  auto& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
Var<T> Graph<T>::emit(Matrix<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  return emit(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
}

template <typename T>
Var<T> Graph<T>::emit(Matrix<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  bool req = false;
  for (const auto& in : inputs) req = req || nodes_[in.id].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, req ? std::move(fn) : BackwardFn{}, req});
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void Graph<T>::backward(Var<T> out) {
  if (nodes_[out.id].value.size() != 1) throw std::invalid_argument("backward: output must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[out.id].grad = Matrix<T>::Ones(1, 1);
  for (int i = out.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

template <typename T>
void Graph<T>::accumulate_parameter_grads(T scale_by) {
  for (auto& [p, id] : params_) {
    const auto& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    if (p->grad.size() == 0) p->grad = Matrix<T>::Zero(p->value.rows(), p->value.cols());
    p->grad += scale_by * g;
  }
}

// ---- elementwise / linear algebra -------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> y = a.value() * b.value();
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go * g.value(b).transpose());
    if (g.needs(b)) g.accumulate(b, g.value(a).transpose() * go);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> y = a.value() * b.value().transpose();
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go * g.value(b));
    if (g.needs(b)) g.accumulate(b, go.transpose() * g.value(a));
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same("add", a, b);
  Matrix<T> y = a.value() + b.value();
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go);
    if (g.needs(b)) g.accumulate(b, go);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same("sub", a, b);
  Matrix<T> y = a.value() - b.value();
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go);
    if (g.needs(b)) g.accumulate(b, -go);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same("mul", a, b);
  Matrix<T> y = a.value().cwiseProduct(b.value());
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go.cwiseProduct(g.value(b)));
    if (g.needs(b)) g.accumulate(b, go.cwiseProduct(g.value(a)));
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same("div", a, b);
  Matrix<T> y = a.value().cwiseQuotient(b.value());
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    const auto& bv = g.value(b);
    if (g.needs(a)) g.accumulate(a, go.cwiseQuotient(bv));
    if (g.needs(b))
      g.accumulate(b, -go.cwiseProduct(g.value(a)).cwiseQuotient(bv.cwiseProduct(bv)));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> y = a.value() * s;
  return a.graph->emit(std::move(y), {a}, [a, s](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, go * s);
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Matrix<T> y = a.value().array() + s;
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) { g.accumulate(a, go); });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.rows(), a.cols(), row.rows(), row.cols());
  Matrix<T> y = a.value().rowwise() + row.value().row(0);
  return a.graph->emit(std::move(y), {a, row}, [a, row](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go);
    if (g.needs(row)) g.accumulate(row, go.colwise().sum());
  });
}

template <typename T>
Var<T> add_col(Var<T> a, Var<T> col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("add_col", a.rows(), a.cols(), col.rows(), col.cols());
  Matrix<T> y = a.value().colwise() + col.value().col(0);
  return a.graph->emit(std::move(y), {a, col}, [a, col](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go);
    if (g.needs(col)) g.accumulate(col, go.rowwise().sum());
  });
}

template <typename T>
Var<T> mul_col(Var<T> a, Var<T> col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("mul_col", a.rows(), a.cols(), col.rows(), col.cols());
  Matrix<T> y = col.value().col(0).asDiagonal() * a.value();
  return a.graph->emit(std::move(y), {a, col}, [a, col](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, g.value(col).col(0).asDiagonal() * go);
    if (g.needs(col)) g.accumulate(col, go.cwiseProduct(g.value(a)).rowwise().sum());
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, Var<T> s) {
  if (s.value().size() != 1) shape_error("mul_scalar", a.rows(), a.cols(), s.rows(), s.cols());
  Matrix<T> y = a.value() * s.value()(0, 0);
  return a.graph->emit(std::move(y), {a, s}, [a, s](Graph<T>& g, const Matrix<T>& go) {
    if (g.needs(a)) g.accumulate(a, go * g.value(s)(0, 0));
    if (g.needs(s)) g.accumulate(s, Matrix<T>::Constant(1, 1, go.cwiseProduct(g.value(a)).sum()));
  });
}

template <typename T>
Var<T> elu(Var<T> a) {
  // exp(x) - 1 rather than expm1: Eigen vectorizes exp, and the absolute error
  // near zero is one ulp of 1.
  const auto& x = a.value().array();
  Matrix<T> y = (x > T(0)).select(x, x.exp() - T(1)).matrix();
  Graph<T>* gr = a.graph;
  const int id = static_cast<int>(gr->size());
  return gr->emit(std::move(y), {a}, [a, id](Graph<T>& g, const Matrix<T>& go) {
    const auto& x = g.value(a);
    const auto& yv = g.value(Var<T>{&g, id});
    Matrix<T> d = (x.array() > T(0)).select(Matrix<T>::Ones(x.rows(), x.cols()), yv.array() + T(1));
    g.accumulate(a, go.cwiseProduct(d));
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Matrix<T> y = a.value().cwiseMax(T(0));
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, (g.value(a).array() > T(0)).select(go, Matrix<T>::Zero(go.rows(), go.cols())));
  });
}

template <typename T>
Var<T> exp(Var<T> a) {
  Matrix<T> y = a.value().array().exp();
  Graph<T>* gr = a.graph;
  const int id = static_cast<int>(gr->size());
  return gr->emit(std::move(y), {a}, [a, id](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, go.cwiseProduct(g.value(Var<T>{&g, id})));
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  Matrix<T> y = a.value().cwiseAbs();
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    const auto& x = g.value(a);
    g.accumulate(a, go.cwiseProduct(x.unaryExpr([](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); })));
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  Matrix<T> y = a.value().cwiseAbs2();
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, T(2) * go.cwiseProduct(g.value(a)));
  });
}

template <typename T>
Var<T> sqrt(Var<T> a) {
  Matrix<T> y = a.value().cwiseSqrt();
  Graph<T>* gr = a.graph;
  const int id = static_cast<int>(gr->size());
  return gr->emit(std::move(y), {a}, [a, id](Graph<T>& g, const Matrix<T>& go) {
    const auto& yv = g.value(Var<T>{&g, id});
    g.accumulate(a, go.cwiseQuotient(T(2) * yv));
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Matrix<T> y = Matrix<T>::Constant(1, 1, a.value().sum());
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, Matrix<T>::Constant(g.value(a).rows(), g.value(a).cols(), go(0, 0)));
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> row_sum(Var<T> a) {
  Matrix<T> y = a.value().rowwise().sum();
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, go.col(0).replicate(1, g.value(a).cols()));
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Matrix<T> y = a.value().transpose();
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    g.accumulate(a, go.transpose());
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) shape_error("reshape", a.rows(), a.cols(), rows, cols);
  Matrix<T> y = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return a.graph->emit(std::move(y), {a}, [a](Graph<T>& g, const Matrix<T>& go) {
    const auto& x = g.value(a);
    g.accumulate(a, Eigen::Map<const Matrix<T>>(go.data(), x.rows(), x.cols()));
  });
}

template <typename T>
Var<T> slice(Var<T> a, Eigen::Index r0, Eigen::Index nr, Eigen::Index c0, Eigen::Index nc) {
  if (r0 < 0 || c0 < 0 || r0 + nr > a.rows() || c0 + nc > a.cols())
    shape_error("slice", a.rows(), a.cols(), r0 + nr, c0 + nc);
  Matrix<T> y = a.value().block(r0, c0, nr, nc);
  return a.graph->emit(std::move(y), {a}, [a, r0, nr, c0, nc](Graph<T>& g, const Matrix<T>& go) {
    g.grad_buffer(a).block(r0, c0, nr, nc) += go;
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", rows, 0, p.rows(), p.cols());
    cols += p.cols();
  }
  Matrix<T> y(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(y), std::span<const Var<T>>(ins), [ins](Graph<T>& g, const Matrix<T>& go) {
    Eigen::Index c2 = 0;
    for (const auto& p : ins) {
      const auto n = g.value(p).cols();
      if (g.needs(p)) g.accumulate(p, go.middleCols(c2, n));
      c2 += n;
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", 0, cols, p.rows(), p.cols());
    rows += p.rows();
  }
  Matrix<T> y(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(y), std::span<const Var<T>>(ins), [ins](Graph<T>& g, const Matrix<T>& go) {
    Eigen::Index r2 = 0;
    for (const auto& p : ins) {
      const auto n = g.value(p).rows();
      if (g.needs(p)) g.accumulate(p, go.middleRows(r2, n));
      r2 += n;
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<int> index) {
  const auto& x = a.value();
  Matrix<T> y(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw std::out_of_range("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
  }
  return a.graph->emit(std::move(y), {a}, [a, index = std::move(index)](Graph<T>& g, const Matrix<T>& go) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += go.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var<T> max_elementwise(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("max_elementwise: no inputs");
  for (const auto& p : parts) require_same("max_elementwise", parts[0], p);
  const auto rows = parts[0].rows(), cols = parts[0].cols();
  Matrix<T> y = parts[0].value();
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> arg = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows, cols);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        if (v(i, j) > y(i, j)) {
          y(i, j) = v(i, j);
          arg(i, j) = static_cast<int>(k);
        }
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(y), std::span<const Var<T>>(ins),
                              [ins, arg = std::move(arg)](Graph<T>& g, const Matrix<T>& go) {
                                for (std::size_t k = 0; k < ins.size(); ++k) {
                                  if (!g.needs(ins[k])) continue;
                                  Matrix<T> part = (arg.array() == static_cast<int>(k))
                                                       .select(go, Matrix<T>::Zero(go.rows(), go.cols()));
                                  g.accumulate(ins[k], part);
                                }
                              });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  const auto& x = a.value();
  Matrix<T> y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  y = y.array().colwise() / y.rowwise().sum().array();
  Graph<T>* gr = a.graph;
  const int id = static_cast<int>(gr->size());
  return gr->emit(std::move(y), {a}, [a, id](Graph<T>& g, const Matrix<T>& go) {
    const auto& yv = g.value(Var<T>{&g, id});
    Vector<T> dot = go.cwiseProduct(yv).rowwise().sum();
    g.accumulate(a, yv.cwiseProduct(go.colwise() - dot));
  });
}

template <typename T>
Var<T> norm(Var<T> a) {
  const T n = a.value().norm();
  return a.graph->emit(Matrix<T>::Constant(1, 1, n), {a}, [a, n](Graph<T>& g, const Matrix<T>& go) {
    if (n > T(0)) g.accumulate(a, g.value(a) * (go(0, 0) / n));
  });
}

template <typename T>
Var<T> row_norm(Var<T> a) {
  Vector<T> n = a.value().rowwise().norm();
  Matrix<T> y = n;
  return a.graph->emit(std::move(y), {a}, [a, n](Graph<T>& g, const Matrix<T>& go) {
    const auto& x = g.value(a);
    Matrix<T> d(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      d.row(i) = n(i) > T(0) ? (x.row(i) * (go(i, 0) / n(i))).eval() : Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(x.cols()).eval();
    g.accumulate(a, d);
  });
}

template <typename T>
Var<T> cross3(Var<T> a, Var<T> b) {
  if (a.value().size() != 3 || b.value().size() != 3) shape_error("cross3", a.rows(), a.cols(), b.rows(), b.cols());
  using V3 = Eigen::Matrix<T, 3, 1>;
  const V3 av = Eigen::Map<const V3>(a.value().data());
  const V3 bv = Eigen::Map<const V3>(b.value().data());
  Matrix<T> y = av.cross(bv).transpose();
  return a.graph->emit(std::move(y), {a, b}, [a, b](Graph<T>& g, const Matrix<T>& go) {
    const V3 av2 = Eigen::Map<const V3>(g.value(a).data());
    const V3 bv2 = Eigen::Map<const V3>(g.value(b).data());
    const V3 gv = Eigen::Map<const V3>(go.data());
    if (g.needs(a)) g.accumulate(a, Matrix<T>(bv2.cross(gv).transpose()).reshaped(g.value(a).rows(), g.value(a).cols()));
    if (g.needs(b)) g.accumulate(b, Matrix<T>(gv.cross(av2).transpose()).reshaped(g.value(b).rows(), g.value(b).cols()));
  });
}

template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& xv = x.value();
  const auto C = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != C || beta.rows() != 1 || beta.cols() != C)
    shape_error("layer_norm_rows", xv.rows(), C, gamma.rows(), gamma.cols());
  Vector<T> mu = xv.rowwise().mean();
  Matrix<T> centered = xv.colwise() - mu;
  Vector<T> inv_std = ((centered.cwiseAbs2().rowwise().sum() / static_cast<T>(C)).array() + eps).rsqrt();
  Matrix<T> xhat = inv_std.asDiagonal() * centered;
  Matrix<T> y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix().rowwise() + beta.value().row(0);
  return x.graph->emit(std::move(y), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std, C](Graph<T>& g, const Matrix<T>& go) {
                         if (g.needs(gamma)) g.accumulate(gamma, go.cwiseProduct(xhat).colwise().sum());
                         if (g.needs(beta)) g.accumulate(beta, go.colwise().sum());
                         if (g.needs(x)) {
                           Matrix<T> dxhat = go.array().rowwise() * g.value(gamma).row(0).array();
                           Vector<T> m1 = dxhat.rowwise().mean();
                           Vector<T> m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / static_cast<T>(C);
                           Matrix<T> dx = dxhat.colwise() - m1;
                           dx -= m2.asDiagonal() * xhat;
                           g.accumulate(x, inv_std.asDiagonal() * dx);
                         }
                       });
}

// ---- structured -------------------------------------------------------------

namespace {

template <typename T>
Matrix<T> im2col(const Matrix<T>& x, const ConvGeometry& geo) {
  const int cin = static_cast<int>(x.rows());
  const int k = geo.kernel, ho = geo.out_height(), wo = geo.out_width();
  Matrix<T> cols = Matrix<T>::Zero(cin * k * k, ho * wo);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const int col = oy * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * geo.stride - geo.pad + ky;
        if (iy < 0 || iy >= geo.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * geo.stride - geo.pad + kx;
          if (ix < 0 || ix >= geo.width) continue;
          const int pix = iy * geo.width + ix;
          for (int c = 0; c < cin; ++c) cols((c * k + ky) * k + kx, col) = x(c, pix);
        }
      }
    }
  return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, int cin, const ConvGeometry& geo) {
  const int k = geo.kernel, ho = geo.out_height(), wo = geo.out_width();
  Matrix<T> x = Matrix<T>::Zero(cin, geo.height * geo.width);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const int col = oy * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * geo.stride - geo.pad + ky;
        if (iy < 0 || iy >= geo.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * geo.stride - geo.pad + kx;
          if (ix < 0 || ix >= geo.width) continue;
          const int pix = iy * geo.width + ix;
          for (int c = 0; c < cin; ++c) x(c, pix) += cols((c * k + ky) * k + kx, col);
        }
      }
    }
  return x;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const Var<T>* bias, const ConvGeometry& geo) {
  const auto& xv = x.value();
  const int cin = static_cast<int>(xv.rows());
  if (xv.cols() != geo.height * geo.width)
    shape_error("conv2d(input)", xv.rows(), xv.cols(), cin, geo.height * geo.width);
  if (weight.cols() != cin * geo.kernel * geo.kernel)
    shape_error("conv2d(weight)", weight.rows(), weight.cols(), weight.rows(), cin * geo.kernel * geo.kernel);
  const bool pointwise = geo.kernel == 1 && geo.stride == 1 && geo.pad == 0;
  Matrix<T> cols = pointwise ? Matrix<T>() : im2col(xv, geo);
  Matrix<T> y = weight.value() * (pointwise ? xv : cols);
  if (bias) {
    if (bias->rows() != weight.rows() || bias->cols() != 1)
      shape_error("conv2d(bias)", bias->rows(), bias->cols(), weight.rows(), 1);
    y.colwise() += bias->value().col(0);
  }
  Var<T> b = bias ? *bias : Var<T>{};
  std::vector<Var<T>> ins{x, weight};
  if (bias) ins.push_back(*bias);
  return x.graph->emit(std::move(y), std::span<const Var<T>>(ins),
                       [x, weight, b, geo, cin, pointwise, cols = std::move(cols)](Graph<T>& g, const Matrix<T>& go) {
                         if (g.needs(weight))
                           g.accumulate(weight, go * (pointwise ? g.value(x) : cols).transpose());
                         if (b.valid() && g.needs(b)) g.accumulate(b, go.rowwise().sum());
                         if (g.needs(x)) {
                           Matrix<T> dcols = g.value(weight).transpose() * go;
                           if (pointwise) {
                             g.accumulate(x, dcols);
                           } else {
                             g.accumulate(x, col2im(dcols, cin, geo));
                           }
                         }
                       });
}

template <typename T>
Var<T> upsample2x(Var<T> x, int height, int width) {
  const auto& xv = x.value();
  if (xv.cols() != height * width) shape_error("upsample2x", xv.rows(), xv.cols(), xv.rows(), height * width);
  const int w2 = 2 * width;
  Matrix<T> y(xv.rows(), 4 * height * width);
  for (int yy = 0; yy < 2 * height; ++yy)
    for (int xx = 0; xx < w2; ++xx) y.col(yy * w2 + xx) = xv.col((yy / 2) * width + xx / 2);
  return x.graph->emit(std::move(y), {x}, [x, height, width](Graph<T>& g, const Matrix<T>& go) {
    const int w2b = 2 * width;
    auto& gx = g.grad_buffer(x);
    for (int yy = 0; yy < 2 * height; ++yy)
      for (int xx = 0; xx < w2b; ++xx) gx.col((yy / 2) * width + xx / 2) += go.col(yy * w2b + xx);
  });
}

template <typename T>
Var<T> spiral_gather(Var<T> x, const MatrixXi& spiral) {
  const auto& xv = x.value();
  const Eigen::Index n = spiral.rows(), s = spiral.cols(), c = xv.cols();
  if (spiral.size() > 0 && (spiral.minCoeff() < 0 || spiral.maxCoeff() >= xv.rows()))
    throw std::out_of_range("spiral_gather: spiral index out of range");
  Matrix<T> y(n, s * c);
  for (Eigen::Index v = 0; v < n; ++v)
    for (Eigen::Index k = 0; k < s; ++k) y.block(v, k * c, 1, c) = xv.row(spiral(v, k));
  return x.graph->emit(std::move(y), {x}, [x, spiral](Graph<T>& g, const Matrix<T>& go) {
    auto& gx = g.grad_buffer(x);
    const Eigen::Index c2 = gx.cols();
    for (Eigen::Index v = 0; v < spiral.rows(); ++v)
      for (Eigen::Index k = 0; k < spiral.cols(); ++k) gx.row(spiral(v, k)) += go.block(v, k * c2, 1, c2);
  });
}

template <typename T>
Var<T> attention_weights(Var<T> q, Var<T> k) {
  if (q.cols() < 1) throw std::invalid_argument("attention: feature width must be >= 1");
  return softmax_rows(scale(matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(q.cols()))));
}

template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v) {
  if (k.rows() != v.rows()) shape_error("scaled_dot_attention", k.rows(), k.cols(), v.rows(), v.cols());
  return matmul(attention_weights(q, k), v);
}

// ---- explicit instantiation -----------------------------------------------

#define MVHAND_INSTANTIATE_AD(T)                                                                        \
  template class Graph<T>;                                                                            \
  template Var<T> matmul(Var<T>, Var<T>);                                                             \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                                \
  template Var<T> div(Var<T>, Var<T>);                                                                \
  template Var<T> scale(Var<T>, T);                                                                   \
  template Var<T> add_scalar(Var<T>, T);                                                              \
  template Var<T> add_row(Var<T>, Var<T>);                                                            \
  template Var<T> add_col(Var<T>, Var<T>);                                                            \
  template Var<T> mul_col(Var<T>, Var<T>);                                                            \
  template Var<T> mul_scalar(Var<T>, Var<T>);                                                         \
  template Var<T> elu(Var<T>);                                                                        \
  template Var<T> relu(Var<T>);                                                                       \
  template Var<T> exp(Var<T>);                                                                        \
  template Var<T> abs(Var<T>);                                                                        \
  template Var<T> square(Var<T>);                                                                     \
  template Var<T> sqrt(Var<T>);                                                                       \
  template Var<T> sum(Var<T>);                                                                        \
  template Var<T> mean(Var<T>);                                                                       \
  template Var<T> row_sum(Var<T>);                                                                    \
  template Var<T> transpose(Var<T>);                                                                  \
  template Var<T> reshape(Var<T>, Eigen::Index, Eigen::Index);                                        \
  template Var<T> slice(Var<T>, Eigen::Index, Eigen::Index, Eigen::Index, Eigen::Index);              \
  template Var<T> concat_cols(std::span<const Var<T>>);                                               \
  template Var<T> concat_rows(std::span<const Var<T>>);                                               \
  template Var<T> gather_rows(Var<T>, std::vector<int>);                                              \
  template Var<T> max_elementwise(std::span<const Var<T>>);                                           \
  template Var<T> softmax_rows(Var<T>);                                                               \
  template Var<T> norm(Var<T>);                                                                       \
  template Var<T> row_norm(Var<T>);                                                                   \
  template Var<T> cross3(Var<T>, Var<T>);                                                             \
  template Var<T> layer_norm_rows(Var<T>, Var<T>, Var<T>, T);                                         \
  template Var<T> conv2d(Var<T>, Var<T>, const Var<T>*, const ConvGeometry&);                        \
  template Var<T> upsample2x(Var<T>, int, int);                                                       \
  template Var<T> spiral_gather(Var<T>, const MatrixXi&);                                             \
  template Var<T> attention_weights(Var<T>, Var<T>);                                                  \
  template Var<T> scaled_dot_attention(Var<T>, Var<T>, Var<T>);

MVHAND_INSTANTIATE_AD(float)
MVHAND_INSTANTIATE_AD(double)

}  // namespace mvhand::ad
