#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <functional>
#include <string>
#include <vector>

#include "mvhand/nn.hpp"

namespace mvhand {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "<parameter>[index]" of the worst coordinate
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// `build` must construct a scalar output, fetching every tensor in
/// `params` through Graph::parameter. Each coordinate's analytic gradient
/// is compared with (f(x+eps) - f(x-eps)) / (2 eps); the relative error
/// uses the denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const std::function<ad::Var<double>(ad::Graph<double>&)>& build,
                                  const nn::ParamList<double>& params, double eps) {
  std::vector<Matrix<double>> analytic;
  {
    ad::Graph<double> g;
    std::vector<ad::Var<double>> nodes;
    for (auto* p : params) nodes.push_back(g.parameter(*p));
    auto out = build(g);
    g.backward(out);
    for (auto& n : nodes) analytic.push_back(g.grad(n));
  }
  auto evaluate = [&]() {
    ad::Graph<double> g;
    for (auto* p : params) g.parameter(*p);
    return build(g).value()(0, 0);
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double fp = evaluate();
      value.data()[i] = saved - eps;
      const double fm = evaluate();
      value.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = params[k]->name + "[" + std::to_string(i) + "]";
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

/// Gradient check of a scalar function of plain input tensors.
inline double grad_check(
    const std::function<ad::Var<double>(ad::Graph<double>&, const std::vector<ad::Var<double>>&)>& fn,
    const std::vector<Matrix<double>>& inputs, double eps) {
  std::vector<ad::Parameter<double>> storage;
  storage.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) storage.emplace_back("input" + std::to_string(i), inputs[i]);
  nn::ParamList<double> params;
  for (auto& p : storage) params.push_back(&p);
  return grad_check(
             [&](ad::Graph<double>& g) {
               std::vector<ad::Var<double>> vars;
               for (auto* p : params) vars.push_back(g.parameter(*p));
               return fn(g, vars);
             },
             params, eps)
      .max_relative_error;
}

}  // namespace mvhand
