#pragma once

// Single-to-multi-view adaptation: the orientation feature enhancement
// block and the feature-distillation terms.

#include <string>

#include "mvhand/features.hpp"
#include "mvhand/nn.hpp"

namespace mvhand::sima {

using ad::Graph;
using ad::Var;
using nn::ParamList;

class SimaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OfeMode { kOff, kConcat, kAttention };
OfeMode parse_ofe_mode(const std::string& name);
std::string ofe_mode_name(OfeMode m);

/// Intermediate values of the attention path, exposed for inspection.
template <typename T>
struct OfeTrace {
  Var<T> a_j, a_o;                 // inputs projected to the common width
  Var<T> w_j, w_o, w_cross;        // attention matrices (rows sum to 1)
  Var<T> h_j, h_o, cross;          // self-attended joints / cells, cross-attended joints
};

/// Enriches the orientation tokens f_o (T_o x C_o) with the joint features
/// f_j (J x C_j). Attention mode: project both to width d, self-attend each,
/// cross-attend with the joints as queries and the cells as keys/values,
/// mix the J result rows into T_o rows and project back to C_o. With the
/// residual on, f_o is added and the output projection starts at zero.
/// Concat mode: append a linear summary of f_j to every cell and map back
/// to C_o. Off: f_o unchanged.
template <typename T>
struct Ofe {
  OfeMode mode = OfeMode::kAttention;
  int joints = 0, joint_channels = 0, tokens = 0, orient_channels = 0, width = 0;
  bool residual = true;
  nn::Linear<T> proj_j, proj_o, token_mix, out;  // attention
  nn::Linear<T> summary, merge;                  // concat

  Ofe() = default;
  Ofe(const std::string& name, OfeMode mode, int joints, int joint_channels, int tokens, int orient_channels,
      int width, std::uint64_t seed, bool residual = true);

  Var<T> operator()(Graph<T>& g, Var<T> f_j, Var<T> f_o, bool trainable = true, OfeTrace<T>* trace = nullptr);
  void collect(ParamList<T>& out_params);
};

/// Where the distillation terms attach, numbered i to v.
enum class Variant {
  kDecoderLast,     // (i)   last decoder vertex feature only
  kVertex,          // (ii)  f_v only
  kVertexJoint,     // (iii) f_v and f_j
  kVertexOrient,    // (iv)  f_v and the raw orientation feature
  kVertexEnhanced,  // (v)   f_v and the enhanced orientation feature
};

/// Accepts "i".."v" or the long names below.
Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

enum class ShapeTarget { kDecoderLast, kVertex };
enum class OrientTarget { kNone, kJoint, kOrientRaw, kOrientEnhanced };

struct DistillPlan {
  ShapeTarget shape = ShapeTarget::kVertex;
  OrientTarget orient = OrientTarget::kOrientEnhanced;
};

DistillPlan select_distill_targets(Variant v);

/// Whole-tensor Euclidean norm of the difference (or the mean square).
template <typename T>
Var<T> shape_enhance_loss(Var<T> student, Var<T> teacher, bool mse = false);
template <typename T>
Var<T> orientation_enhance_loss(Var<T> student, Var<T> teacher, bool mse = false);

template <typename T>
struct DistillTerms {
  Var<T> se;  // weighted by beta
  Var<T> oe;  // weighted by gamma; invalid when the plan has no orientation term
};

/// The teacher features must live in the student's graph as constants.
template <typename T>
DistillTerms<T> distill(const DistillPlan& plan, const FeatureBundle<T>& student, const FeatureBundle<T>& teacher,
                        bool mse = false);

}  // namespace mvhand::sima
