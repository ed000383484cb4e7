#include "mvhand/losses.hpp"

#include <stdexcept>

namespace mvhand::losses {

namespace {

template <typename T>
Var<T> constant(Graph<T>& g, const Matrix<double>& m) {
  return g.constant(m.cast<T>());
}

void require_same_shape(const char* what, Eigen::Index r0, Eigen::Index c0, Eigen::Index r1, Eigen::Index c1) {
  if (r0 != r1 || c0 != c1)
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(r0) + "x" +
                                std::to_string(c0) + " vs " + std::to_string(r1) + "x" + std::to_string(c1));
}

struct EdgeList {
  std::vector<int> from, to;
  std::vector<int> face;  // owning face of each edge
};

EdgeList face_edges(const MatrixXi& faces, const std::vector<bool>& keep) {
  EdgeList e;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    if (!keep[f]) continue;
    for (int k = 0; k < 3; ++k) {
      e.from.push_back(faces(f, k));
      e.to.push_back(faces(f, (k + 1) % 3));
      e.face.push_back(static_cast<int>(f));
    }
  }
  return e;
}

template <typename T>
Var<T> edge_vectors(Var<T> vertices, const EdgeList& e) {
  return ad::sub(ad::gather_rows(vertices, e.to), ad::gather_rows(vertices, e.from));
}

}  // namespace

template <typename T>
Var<T> l1(Var<T> pred, Var<T> gt) {
  require_same_shape("l1", pred.rows(), pred.cols(), gt.rows(), gt.cols());
  return ad::sum(ad::abs(ad::sub(pred, gt)));
}

template <typename T>
Rotated<T> rotated_losses(Var<T> pred_vertices, Var<T> pred_rotation, const Matrix<double>& joint_regressor,
                          const Matrix<double>& gt_vertices, const Matrix<double>& gt_joints, const Mat3& gt_rotation) {
  Graph<T>& g = *pred_vertices.graph;
  Var<T> verts = ad::matmul_nt(pred_vertices, pred_rotation);
  Var<T> joints = ad::matmul(constant(g, joint_regressor), verts);
  Var<T> gt_v = constant<T>(g, gt_vertices * gt_rotation.transpose());
  Var<T> gt_j = constant<T>(g, gt_joints * gt_rotation.transpose());
  return {l1(verts, gt_v), l1(joints, gt_j)};
}

template <typename T>
Var<T> normal_loss(Var<T> pred_vertices, const MatrixXi& faces, const Matrix<double>& gt_vertices,
                   const NormalOptions& options, int* skipped) {
  require_same_shape("normal_loss", pred_vertices.rows(), pred_vertices.cols(), gt_vertices.rows(), gt_vertices.cols());
  Graph<T>& g = *pred_vertices.graph;
  std::vector<bool> keep(faces.rows(), true);
  std::vector<Vec3> normals(faces.rows(), Vec3::Zero());
  int degenerate = 0;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Vec3 a = gt_vertices.row(faces(f, 0)).transpose();
    const Vec3 b = gt_vertices.row(faces(f, 1)).transpose();
    const Vec3 c = gt_vertices.row(faces(f, 2)).transpose();
    const Vec3 n = (b - a).cross(c - a);
    const double scale = std::max({(b - a).squaredNorm(), (c - a).squaredNorm(), (c - b).squaredNorm()});
    if (n.norm() <= 1e-12 * std::max(scale, 1e-300)) {
      keep[f] = false;
      ++degenerate;
      continue;
    }
    normals[f] = n.normalized();
  }
  if (skipped) *skipped = degenerate;
  const EdgeList e = face_edges(faces, keep);
  if (e.from.empty()) return g.constant(Matrix<T>::Zero(1, 1));

  Matrix<T> n_gt(static_cast<Eigen::Index>(e.face.size()), 3);
  for (std::size_t i = 0; i < e.face.size(); ++i) n_gt.row(static_cast<Eigen::Index>(i)) = normals[e.face[i]].transpose().cast<T>();

  Var<T> edges = edge_vectors(pred_vertices, e);
  if (options.normalize_edges) {
    Var<T> len = ad::sqrt(ad::add_scalar(ad::row_sum(ad::square(edges)), T(1e-12)));
    Var<T> inv = ad::div(g.constant(Matrix<T>::Ones(len.rows(), 1)), len);
    edges = ad::mul_col(edges, inv);
  }
  return ad::sum(ad::abs(ad::row_sum(ad::mul(edges, g.constant(std::move(n_gt))))));
}

template <typename T>
Var<T> edge_length_loss(Var<T> pred_vertices, const MatrixXi& faces, const Matrix<double>& gt_vertices) {
  require_same_shape("edge_length_loss", pred_vertices.rows(), pred_vertices.cols(), gt_vertices.rows(),
                     gt_vertices.cols());
  Graph<T>& g = *pred_vertices.graph;
  const EdgeList e = face_edges(faces, std::vector<bool>(faces.rows(), true));
  Matrix<double> gt_edges(static_cast<Eigen::Index>(e.from.size()), 3);
  for (std::size_t i = 0; i < e.from.size(); ++i)
    gt_edges.row(static_cast<Eigen::Index>(i)) = gt_vertices.row(e.to[i]) - gt_vertices.row(e.from[i]);
  Matrix<T> gt_len = gt_edges.rowwise().norm().cast<T>();
  Var<T> len = ad::row_norm(edge_vectors(pred_vertices, e));
  return ad::sum(ad::abs(ad::sub(len, g.constant(std::move(gt_len)))));
}

template <typename T>
Var<T> rotation_loss(Var<T> pred_rotation, const Mat3& gt_rotation) {
  require_same_shape("rotation_loss", pred_rotation.rows(), pred_rotation.cols(), 3, 3);
  Graph<T>& g = *pred_rotation.graph;
  Var<T> prod = ad::matmul_nt(g.constant(Matrix<double>(gt_rotation).cast<T>()), pred_rotation);
  return ad::norm(ad::sub(prod, g.constant(Matrix<T>::Identity(3, 3))));
}

template <typename T>
Var<T> feature_distance(Var<T> a, Var<T> b, bool mse) {
  require_same_shape("feature_distance", a.rows(), a.cols(), b.rows(), b.cols());
  Var<T> d = ad::sub(a, b);
  return mse ? ad::mean(ad::square(d)) : ad::norm(d);
}

// ---- reports ----------------------------------------------------------------

void LossReport::finalize(const LossWeights& w) {
  recon = mesh_c + joint3d_c + mesh_r + joint3d_r + joint2d + normal + edge + rotation;
  total = recon + w.beta * se + w.gamma * oe;
}

LossReport& LossReport::operator+=(const LossReport& o) {
  mesh_c += o.mesh_c;
  joint3d_c += o.joint3d_c;
  mesh_r += o.mesh_r;
  joint3d_r += o.joint3d_r;
  joint2d += o.joint2d;
  normal += o.normal;
  edge += o.edge;
  rotation += o.rotation;
  se += o.se;
  oe += o.oe;
  recon += o.recon;
  total += o.total;
  degenerate_faces += o.degenerate_faces;
  return *this;
}

LossReport& LossReport::operator*=(double s) {
  for (double* v : {&mesh_c, &joint3d_c, &mesh_r, &joint3d_r, &joint2d, &normal, &edge, &rotation, &se, &oe, &recon,
                    &total})
    *v *= s;
  return *this;
}

nlohmann::json LossReport::to_json() const {
  return {{"L_M_c", mesh_c},   {"L_J3D_c", joint3d_c}, {"L_M_r", mesh_r}, {"L_J3D_r", joint3d_r},
          {"L_J2D", joint2d},  {"L_N_c", normal},      {"L_E_c", edge},   {"L_R", rotation},
          {"L_SE", se},        {"L_OE", oe},           {"L_Recon", recon}, {"L_Total", total},
          {"degenerate_faces", degenerate_faces}};
}

template <typename T>
LossReport LossTerms<T>::report(const LossWeights& w) const {
  auto val = [](Var<T> v) { return v.valid() ? static_cast<double>(v.value()(0, 0)) : 0.0; };
  LossReport r;
  r.mesh_c = val(mesh_c);
  r.joint3d_c = val(joint3d_c);
  r.mesh_r = val(mesh_r);
  r.joint3d_r = val(joint3d_r);
  r.joint2d = val(joint2d);
  r.normal = val(normal);
  r.edge = val(edge);
  r.rotation = val(rotation);
  r.se = val(se);
  r.oe = val(oe);
  r.degenerate_faces = degenerate_faces;
  r.finalize(w);
  return r;
}

template <typename T>
LossTerms<T> recon_loss(const HandTemplate& tpl, const ReconPrediction<T>& pred, const ReconTarget& gt,
                        const NormalOptions& normal_options) {
  if (pred.joints2d.size() != gt.joints2d.size())
    throw std::invalid_argument("recon_loss: 2-D joint predictions and targets differ in count");
  Graph<T>& g = *pred.vertices.graph;
  LossTerms<T> t;
  t.mesh_c = mesh_l1(pred.vertices, constant<T>(g, gt.vertices));
  t.joint3d_c = joint3d_l1(ad::matmul(constant<T>(g, tpl.joint_regressor), pred.vertices), constant<T>(g, gt.joints));
  const auto r = rotated_losses(pred.vertices, pred.rotation, tpl.joint_regressor, gt.vertices, gt.joints, gt.rotation);
  t.mesh_r = r.mesh;
  t.joint3d_r = r.joints;
  t.joint2d = g.constant(Matrix<T>::Zero(1, 1));
  for (std::size_t k = 0; k < gt.joints2d.size(); ++k)
    t.joint2d = ad::add(t.joint2d, joint2d_l1(pred.joints2d[k], constant<T>(g, gt.joints2d[k])));
  t.normal = normal_loss(pred.vertices, tpl.faces, gt.vertices, normal_options, &t.degenerate_faces);
  t.edge = edge_length_loss(pred.vertices, tpl.faces, gt.vertices);
  t.rotation = rotation_loss(pred.rotation, gt.rotation);
  t.recon = t.mesh_c;
  for (Var<T> v : {t.joint3d_c, t.mesh_r, t.joint3d_r, t.joint2d, t.normal, t.edge, t.rotation}) t.recon = ad::add(t.recon, v);
  t.total = t.recon;
  return t;
}

template <typename T>
void add_distillation(LossTerms<T>& terms, Var<T> se, Var<T> oe, const LossWeights& w) {
  terms.se = se;
  terms.oe = oe;
  terms.total = terms.recon;
  if (se.valid() && w.beta != 0.0) terms.total = ad::add(terms.total, ad::scale(se, static_cast<T>(w.beta)));
  if (oe.valid() && w.gamma != 0.0) terms.total = ad::add(terms.total, ad::scale(oe, static_cast<T>(w.gamma)));
}

#define MVHAND_INSTANTIATE_LOSSES(T)                                                                          \
  template Var<T> l1(Var<T>, Var<T>);                                                                         \
  template Rotated<T> rotated_losses(Var<T>, Var<T>, const Matrix<double>&, const Matrix<double>&,            \
                                     const Matrix<double>&, const Mat3&);                                     \
  template Var<T> normal_loss(Var<T>, const MatrixXi&, const Matrix<double>&, const NormalOptions&, int*);    \
  template Var<T> edge_length_loss(Var<T>, const MatrixXi&, const Matrix<double>&);                           \
  template Var<T> rotation_loss(Var<T>, const Mat3&);                                                         \
  template Var<T> feature_distance(Var<T>, Var<T>, bool);                                                     \
  template struct LossTerms<T>;                                                                               \
  template LossTerms<T> recon_loss(const HandTemplate&, const ReconPrediction<T>&, const ReconTarget&,         \
                                   const NormalOptions&);                                                     \
  template void add_distillation(LossTerms<T>&, Var<T>, Var<T>, const LossWeights&);

MVHAND_INSTANTIATE_LOSSES(float)
MVHAND_INSTANTIATE_LOSSES(double)

}  // namespace mvhand::losses
