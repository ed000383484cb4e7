#pragma once

#include "mvhand/common.hpp"

namespace mvhand::testing {

/// Entries drawn from U(-1, 1) with a fixed seed.
inline Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed * 7919 + 17);
  Matrix<double> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(rng, -1.0, 1.0);
  return m;
}

}  // namespace mvhand::testing
