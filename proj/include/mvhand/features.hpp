#pragma once

// Intermediate features and outputs of one reconstructor pass.

#include "mvhand/autodiff.hpp"

namespace mvhand {

template <typename T>
struct FeatureBundle {
  ad::Var<T> f_i;       // C_i x (H'*W') image feature
  ad::Var<T> heatmaps;  // J x (H'*W'), rows sum to 1
  ad::Var<T> f_j;       // J x C_j
  ad::Var<T> f_v;       // Vc x C_v
  ad::Var<T> f_o;       // T_o x C_o: one row per orientation-grid cell
  ad::Var<T> f_o_hat;   // T_o x C_o: what the rotation regressor reads
  ad::Var<T> f_v_last;  // V x C_last: last decoder layer before the head
};

template <typename T>
struct ReconOutput {
  ad::Var<T> vertices;         // V x 3, canonical, mm
  ad::Var<T> vertices_coarse;  // Vc x 3
  ad::Var<T> joints2d;         // J x 2 in [0, 1]
  ad::Var<T> rotation;         // 3 x 3
};

}  // namespace mvhand
