#include "mvhand/fusion.hpp"

#include <cmath>

namespace mvhand::fusion {

Mode parse_mode(const std::string& name) {
  if (name == "off") return Mode::kOff;
  if (name == "concat") return Mode::kConcat;
  if (name == "pool") return Mode::kPool;
  if (name == "stats") return Mode::kStats;
  if (name == "attention") return Mode::kAttention;
  throw FusionError("unknown fusion mode '" + name + "'");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kOff: return "off";
    case Mode::kConcat: return "concat";
    case Mode::kPool: return "pool";
    case Mode::kStats: return "stats";
    case Mode::kAttention: return "attention";
  }
  return "?";
}

namespace {

// Picks the target view's block out of a channel concatenation.
template <typename T>
void select_first_block(Matrix<T>& w, int channels) {
  w.setZero();
  for (int c = 0; c < channels; ++c) w(c, c) = T(1);
}

template <typename T>
Var<T> sum_all(const std::vector<Var<T>>& xs) {
  Var<T> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ad::add(acc, xs[i]);
  return acc;
}

void require_views(const char* what, std::size_t got, int expected) {
  if (got == 0) throw FusionError(std::string(what) + ": no views");
  if (expected > 0 && static_cast<int>(got) != expected)
    throw FusionError(std::string(what) + ": built for " + std::to_string(expected) + " views, got " +
                      std::to_string(got));
}

}  // namespace

// ---- image level ------------------------------------------------------------

template <typename T>
ImageFusion<T>::ImageFusion(const std::string& name, Mode mode_, int views_, int channels_, std::uint64_t seed)
    : mode(mode_), views(views_), channels(channels_) {
  if (mode != Mode::kOff && mode != Mode::kConcat) throw FusionError("image fusion supports off or concat");
  if (mode == Mode::kConcat) {
    select = nn::Conv2d<T>(name + ".select", views * channels, channels, 1, 1, seed);
    hidden = nn::Conv2d<T>(name + ".hidden", views * channels, channels, 1, 1, seed);
    out = nn::Conv2d<T>(name + ".out", channels, channels, 1, 1, seed);
    set_identity();
  }
}

template <typename T>
void ImageFusion<T>::set_identity() {
  if (mode != Mode::kConcat) return;
  select_first_block(select.weight.value, channels);
  select.bias.value.setZero();
  out.weight.value.setZero();
  out.bias.value.setZero();
}

template <typename T>
Var<T> ImageFusion<T>::operator()(Graph<T>& g, const std::vector<Var<T>>& f_i, int height, int width, bool trainable) {
  require_views("image fusion", f_i.size(), mode == Mode::kConcat ? views : 0);
  if (mode == Mode::kOff) return f_i[0];
  Var<T> x = f_i.size() == 1 ? f_i[0] : ad::concat_rows<T>(f_i);
  Var<T> residual = out(g, ad::elu(hidden(g, x, height, width, trainable)), height, width, trainable);
  return ad::add(select(g, x, height, width, trainable), residual);
}

template <typename T>
void ImageFusion<T>::collect(ParamList<T>& p) {
  if (mode != Mode::kConcat) return;
  select.collect(p);
  hidden.collect(p);
  out.collect(p);
}

// ---- joint level ------------------------------------------------------------

template <typename T>
ViewStats<T> view_stats(const std::vector<Var<T>>& views) {
  require_views("view_stats", views.size(), 0);
  const T inv_n = T(1) / static_cast<T>(views.size());
  ViewStats<T> s;
  s.max = views.size() == 1 ? views[0] : ad::max_elementwise<T>(views);
  s.avg = ad::scale(sum_all(views), inv_n);
  std::vector<Var<T>> dev;
  for (const auto& v : views) dev.push_back(ad::square(ad::sub(v, s.avg)));
  s.std = ad::sqrt(ad::add_scalar(ad::scale(sum_all(dev), inv_n), static_cast<T>(kStdEps)));
  return s;
}

template <typename T>
JointFusion<T>::JointFusion(const std::string& name, Mode mode_, int views_, int channels_, std::uint64_t seed)
    : mode(mode_), views(views_), channels(channels_) {
  if (mode == Mode::kStats) {
    hidden = nn::Linear<T>(name + ".hidden", 3 * channels, channels, seed);
    out = nn::Linear<T>(name + ".out", channels, channels, seed);
  } else if (mode == Mode::kConcat) {
    concat = nn::Linear<T>(name + ".concat", views * channels, channels, seed);
  } else if (mode != Mode::kOff) {
    throw FusionError("joint fusion supports off, concat or stats");
  }
  set_identity();
}

template <typename T>
void JointFusion<T>::set_identity() {
  if (mode == Mode::kStats) out.set_zero();
  if (mode == Mode::kConcat) concat.set_identity();
}

template <typename T>
Var<T> JointFusion<T>::operator()(Graph<T>& g, const std::vector<Var<T>>& f_j, bool trainable) {
  require_views("joint fusion", f_j.size(), mode == Mode::kConcat ? views : 0);
  switch (mode) {
    case Mode::kStats: {
      const auto s = view_stats(f_j);
      std::vector<Var<T>> parts{s.max, s.avg, s.std};
      Var<T> x = ad::concat_cols<T>(parts);
      return ad::add(s.avg, out(g, ad::elu(hidden(g, x, trainable)), trainable));
    }
    case Mode::kConcat:
      return concat(g, f_j.size() == 1 ? f_j[0] : ad::concat_cols<T>(f_j), trainable);
    default:
      return f_j[0];
  }
}

template <typename T>
void JointFusion<T>::collect(ParamList<T>& p) {
  if (mode == Mode::kStats) {
    hidden.collect(p);
    out.collect(p);
  } else if (mode == Mode::kConcat) {
    concat.collect(p);
  }
}

// ---- vertex level -----------------------------------------------------------

template <typename T>
VertexFusion<T>::VertexFusion(const std::string& name, Mode mode_, int views_, int channels_, std::uint64_t seed,
                              bool projections_)
    : mode(mode_), views(views_), channels(channels_), projections(projections_) {
  if (mode == Mode::kAttention) {
    logit = nn::Linear<T>(name + ".logit", channels, 1, seed, false);
    if (projections) {
      query = nn::Linear<T>(name + ".query", channels, channels, seed);
      key = nn::Linear<T>(name + ".key", channels, channels, seed, false);
      value = nn::Linear<T>(name + ".value", channels, channels, seed, false);
    }
  } else if (mode == Mode::kConcat) {
    concat = nn::Linear<T>(name + ".concat", views * channels, channels, seed);
    concat.set_identity();
  } else if (mode != Mode::kPool && mode != Mode::kOff) {
    throw FusionError("vertex fusion supports off, concat, pool or attention");
  }
}

template <typename T>
void VertexFusion<T>::set_identity() {
  if (mode == Mode::kConcat) concat.set_identity();
  if (mode == Mode::kAttention && projections) {
    query.set_identity();
    key.set_identity();
    value.set_identity();
  }
}

template <typename T>
VertexFusionResult<T> VertexFusion<T>::operator()(Graph<T>& g, const std::vector<Var<T>>& f_v, bool trainable) {
  require_views("vertex fusion", f_v.size(), mode == Mode::kConcat ? views : 0);
  VertexFusionResult<T> r;
  const int n = static_cast<int>(f_v.size());
  const Eigen::Index rows = f_v[0].rows();
  switch (mode) {
    case Mode::kOff:
      r.fused = f_v[0];
      return r;
    case Mode::kPool:
      r.fused = n == 1 ? f_v[0] : ad::max_elementwise<T>(f_v);
      return r;
    case Mode::kConcat:
      r.fused = concat(g, n == 1 ? f_v[0] : ad::concat_cols<T>(f_v), trainable);
      return r;
    default:
      break;
  }

  std::vector<Var<T>> q = f_v, k = f_v, v = f_v;
  if (projections)
    for (int i = 0; i < n; ++i) {
      q[i] = query(g, f_v[i], trainable);
      k[i] = key(g, f_v[i], trainable);
      v[i] = value(g, f_v[i], trainable);
    }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(channels));
  std::vector<Var<T>> logits;
  for (int i = 0; i < n; ++i) {
    // Row p of `att` is view i's attention over the views at vertex p.
    std::vector<Var<T>> scores;
    for (int j = 0; j < n; ++j) scores.push_back(ad::scale(ad::row_sum(ad::mul(q[i], k[j])), inv_sqrt_d));
    Var<T> att = ad::softmax_rows(n == 1 ? scores[0] : ad::concat_cols<T>(scores));
    Var<T> mixed = f_v[i];
    for (int j = 0; j < n; ++j) mixed = ad::add(mixed, ad::mul_col(v[j], ad::slice(att, 0, rows, j, 1)));
    logits.push_back(logit(g, mixed, trainable));
  }
  r.weights = ad::softmax_rows(n == 1 ? logits[0] : ad::concat_cols<T>(logits));
  std::vector<Var<T>> terms;
  for (int i = 0; i < n; ++i) terms.push_back(ad::mul_col(f_v[i], ad::slice(r.weights, 0, rows, i, 1)));
  r.fused = sum_all(terms);
  return r;
}

template <typename T>
void VertexFusion<T>::collect(ParamList<T>& p) {
  if (mode == Mode::kAttention) {
    logit.collect(p);
    if (projections) {
      query.collect(p);
      key.collect(p);
      value.collect(p);
    }
  } else if (mode == Mode::kConcat) {
    concat.collect(p);
  }
}

template struct ImageFusion<float>;
template struct ImageFusion<double>;
template struct JointFusion<float>;
template struct JointFusion<double>;
template struct VertexFusion<float>;
template struct VertexFusion<double>;
template ViewStats<float> view_stats(const std::vector<Var<float>>&);
template ViewStats<double> view_stats(const std::vector<Var<double>>&);

}  // namespace mvhand::fusion
