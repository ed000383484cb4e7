#include "mvhand/hand_model.hpp"

#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mvhand {

namespace {

constexpr std::array<int, kNumJoints> kParents = {-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19};

struct FingerSpec {
  Vec3 cap;     // cap centre on the parameter sphere
  Vec3 dir;     // finger axis in the hand frame
  double length;
  double radius;
  std::array<double, 3> limits;  // first three joints; the tip joint is rigid
};

// Parameter sphere: the palm is the unit sphere stretched onto an ellipsoid,
// each finger replaces a spherical cap by a capsule.
const Vec3 kPalmCentre(0.0, 45.0, 0.0);
const Vec3 kPalmAxes(38.0, 45.0, 13.0);
constexpr double kCapRadius = 0.27;

std::array<FingerSpec, 5> finger_specs() {
  auto planar = [](double a) { return Vec3(std::sin(a), std::cos(a), 0.0); };
  return {{
      {Vec3(-1.0, -0.25, -0.5).normalized(), Vec3(-0.75, 0.65, -0.2).normalized(), 55.0, 10.0, {0.7, 0.8, 1.0}},
      {planar(-0.9), Vec3(-0.12, 1.0, 0.0).normalized(), 68.0, 8.5, {1.3, 1.5, 1.1}},
      {planar(-0.3), Vec3(-0.04, 1.0, 0.0).normalized(), 75.0, 8.5, {1.3, 1.5, 1.1}},
      {planar(0.3), Vec3(0.04, 1.0, 0.0).normalized(), 70.0, 8.0, {1.3, 1.5, 1.1}},
      {planar(0.9), Vec3(0.14, 1.0, 0.0).normalized(), 55.0, 7.0, {1.3, 1.5, 1.1}},
  }};
}

Vec3 palm_point(const Vec3& d) { return kPalmCentre + kPalmAxes.cwiseProduct(d); }

// Orthonormal pair spanning the plane perpendicular to n, anchored on +z.
std::pair<Vec3, Vec3> perpendicular_frame(const Vec3& n) {
  Vec3 ref = std::abs(n.z()) > 0.9 ? Vec3::UnitX() : Vec3::UnitZ();
  Vec3 u = (ref - ref.dot(n) * n).normalized();
  return {u, n.cross(u)};
}

// Region label of a template vertex: finger index (-1 for palm) and the
// arc length from the finger base along its profile.
struct Label {
  int finger = -1;
  double profile = 0.0;
};

// ---- convex hull ---------------------------------------------------------

// Incremental hull of points in general position. Returns outward-oriented
// triangles.
MatrixXi convex_hull(const std::vector<Vec3>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 4) throw TemplateError("convex hull needs at least four points");
  struct Face {
    std::array<int, 3> v;
    bool alive = true;
  };
  std::vector<Face> faces;
  std::map<std::pair<int, int>, int> edge_face;  // directed edge -> face

  int a = 0, b = 1, c = -1, d = -1;
  for (int i = 1; i < n; ++i)
    if ((pts[i] - pts[a]).norm() > (pts[b] - pts[a]).norm()) b = i;
  double best = 0;
  for (int i = 0; i < n; ++i) {
    double area = (pts[b] - pts[a]).cross(pts[i] - pts[a]).norm();
    if (area > best) best = area, c = i;
  }
  best = 0;
  const Vec3 nrm = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  for (int i = 0; i < n; ++i) {
    double h = std::abs(nrm.dot(pts[i] - pts[a]));
    if (h > best) best = h, d = i;
  }
  if (c < 0 || d < 0 || best < 1e-12) throw TemplateError("convex hull: degenerate point set");
  const Vec3 interior = (pts[a] + pts[b] + pts[c] + pts[d]) / 4.0;

  auto normal = [&](const std::array<int, 3>& f) {
    return Vec3((pts[f[1]] - pts[f[0]]).cross(pts[f[2]] - pts[f[0]]));
  };
  auto add_face = [&](int i, int j, int k) {
    std::array<int, 3> f{i, j, k};
    if (normal(f).dot(pts[i] - interior) < 0) std::swap(f[1], f[2]);
    faces.push_back({f});
    const int id = static_cast<int>(faces.size()) - 1;
    for (int e = 0; e < 3; ++e) edge_face[{f[e], f[(e + 1) % 3]}] = id;
  };
  add_face(a, b, c);
  add_face(a, b, d);
  add_face(a, c, d);
  add_face(b, c, d);

  for (int p = 0; p < n; ++p) {
    if (p == a || p == b || p == c || p == d) continue;
    std::vector<int> visible;
    for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
      if (!faces[f].alive) continue;
      const Vec3 nf = normal(faces[f].v);
      if (nf.dot(pts[p] - pts[faces[f].v[0]]) > 1e-12 * nf.norm()) visible.push_back(f);
    }
    if (visible.empty()) throw TemplateError("convex hull: point inside hull (points not in convex position)");
    std::set<int> vis(visible.begin(), visible.end());
    std::vector<std::pair<int, int>> horizon;
    for (int f : visible) {
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) {
        const int u = v[e], w = v[(e + 1) % 3];
        auto twin = edge_face.find({w, u});
        if (twin == edge_face.end() || !vis.count(twin->second)) horizon.emplace_back(u, w);
      }
    }
    for (int f : visible) {
      faces[f].alive = false;
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) edge_face.erase({v[e], v[(e + 1) % 3]});
    }
    for (auto [u, w] : horizon) {
      faces.push_back({{u, w, p}});
      const int id = static_cast<int>(faces.size()) - 1;
      edge_face[{u, w}] = id;
      edge_face[{w, p}] = id;
      edge_face[{p, u}] = id;
    }
  }
  std::vector<std::array<int, 3>> out;
  for (const auto& f : faces)
    if (f.alive) out.push_back(f.v);
  MatrixXi m(static_cast<Eigen::Index>(out.size()), 3);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int k = 0; k < 3; ++k) m(static_cast<Eigen::Index>(i), k) = out[i][k];
  return m;
}

void check_closed_manifold(const MatrixXi& faces, int vertex_count) {
  std::map<std::pair<int, int>, int> directed;
  std::vector<int> used(vertex_count, 0);
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int e = 0; e < 3; ++e) {
      const int u = faces(f, e), w = faces(f, (e + 1) % 3);
      if (u < 0 || u >= vertex_count) throw TemplateError("face index out of range");
      if (++directed[{u, w}] > 1) throw TemplateError("mesh is not edge-manifold");
      used[u] = 1;
    }
  for (const auto& [e, cnt] : directed)
    if (!directed.count({e.second, e.first})) throw TemplateError("mesh has a boundary edge");
  for (int u : used)
    if (!u) throw TemplateError("mesh has an unreferenced vertex");
  const auto edges = directed.size() / 2;
  if (static_cast<long>(vertex_count) - static_cast<long>(edges) + faces.rows() != 2)
    throw TemplateError("mesh is not a topological sphere");
}

// Radial projection of the unit vector d onto the triangulated hull;
// returns barycentric weights on the hit face.
std::array<std::pair<int, double>, 3> radial_barycentric(const Vec3& d, const std::vector<Vec3>& pts,
                                                         const MatrixXi& faces) {
  double best_min = -1e300;
  std::array<std::pair<int, double>, 3> best{};
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    Mat3 m;
    m.col(0) = pts[faces(f, 0)];
    m.col(1) = pts[faces(f, 1)];
    m.col(2) = pts[faces(f, 2)];
    const Vec3 x = m.partialPivLu().solve(d);
    const double mn = x.minCoeff();
    if (x.sum() <= 0) continue;
    if (mn > best_min) {
      best_min = mn;
      Vec3 w = x.cwiseMax(0.0);
      w /= w.sum();
      for (int k = 0; k < 3; ++k) best[k] = {faces(f, k), w(k)};
    }
  }
  return best;
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / std::max(ab.squaredNorm(), 1e-18), 0.0, 1.0);
  return (p - a - t * ab).norm();
}

}  // namespace

// ---- spirals and edges ------------------------------------------------------

std::vector<std::pair<int, int>> mesh_edges(const MatrixXi& faces) {
  std::set<std::pair<int, int>> s;
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int e = 0; e < 3; ++e) {
      int u = faces(f, e), w = faces(f, (e + 1) % 3);
      s.insert({std::min(u, w), std::max(u, w)});
    }
  return {s.begin(), s.end()};
}

MatrixXi build_spirals(const MatrixXi& faces, int vertex_count, int length) {
  // next[v][a] = b for every oriented face (v, a, b): walking it gives the
  // one-ring in cyclic order.
  std::vector<std::map<int, int>> next(vertex_count);
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int e = 0; e < 3; ++e) next[faces(f, e)][faces(f, (e + 1) % 3)] = faces(f, (e + 2) % 3);

  auto ring = [&](int v) {
    std::vector<int> r;
    if (next[v].empty()) return r;
    const int start = next[v].begin()->first;
    int cur = start;
    do {
      r.push_back(cur);
      auto it = next[v].find(cur);
      if (it == next[v].end()) break;
      cur = it->second;
    } while (cur != start && r.size() <= next[v].size());
    return r;
  };
  std::vector<std::vector<int>> rings(vertex_count);
  for (int v = 0; v < vertex_count; ++v) rings[v] = ring(v);

  MatrixXi out(vertex_count, length);
  for (int v = 0; v < vertex_count; ++v) {
    std::vector<int> seq{v};
    std::vector<char> seen(vertex_count, 0);
    seen[v] = 1;
    std::vector<int> frontier{v};
    while (static_cast<int>(seq.size()) < length && !frontier.empty()) {
      std::vector<int> nxt;
      for (int u : frontier)
        for (int w : rings[u])
          if (!seen[w]) {
            seen[w] = 1;
            nxt.push_back(w);
            seq.push_back(w);
          }
      frontier = std::move(nxt);
    }
    if (static_cast<int>(seq.size()) < length)
      throw TemplateError("spiral length exceeds the connected neighbourhood of a vertex");
    for (int k = 0; k < length; ++k) out(v, k) = seq[k];
  }
  return out;
}

// ---- template ---------------------------------------------------------------

Matrix<double> HandTemplate::coarse_vertices() const {
  Matrix<double> c(coarse_vertex_count, 3);
  for (int i = 0; i < coarse_vertex_count; ++i) c.row(i) = vertices_canonical.row(coarse_to_fine[i]);
  return c;
}

HandPose HandPose::rest() {
  HandPose p;
  p.joint_rotations.assign(kNumJoints, Mat3::Identity());
  return p;
}

HandTemplate build_template(int coarse_count, int fine_count, int spiral_length) {
  if (coarse_count < kNumJoints) throw TemplateError("coarse_count must be >= 21");
  if (fine_count < 2 * coarse_count) throw TemplateError("fine_count must be >= 2 * coarse_count");
  if (spiral_length < 5) throw TemplateError("spiral_length must be >= 5");
  if (spiral_length > coarse_count) throw TemplateError("spiral_length must not exceed coarse_count");

  constexpr int kRingSize = 6;
  const int rings = std::clamp(static_cast<int>(std::lround(0.65 * fine_count / (5.0 * kRingSize))), 2, 8);
  const int finger_points = 5 * (1 + rings * kRingSize);
  const int palm_needed = fine_count - finger_points;
  if (palm_needed < 20) throw TemplateError("fine_count too small for five fingers and a palm");

  const auto fingers = finger_specs();
  const double exclusion = kCapRadius * (1.0 + 0.5 / rings);

  // Palm: Fibonacci points outside the finger caps.
  std::vector<Vec3> palm_dirs;
  for (int n = palm_needed;; ++n) {
    std::vector<std::pair<double, Vec3>> cand;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
      const double y = 1.0 - 2.0 * (i + 0.5) / n, r = std::sqrt(1.0 - y * y);
      const Vec3 d(r * std::cos(golden * i), y, r * std::sin(golden * i));
      double closest = 1e9;
      for (const auto& f : fingers) closest = std::min(closest, std::acos(std::clamp(d.dot(f.cap), -1.0, 1.0)));
      if (closest > exclusion) cand.emplace_back(closest, d);
    }
    if (static_cast<int>(cand.size()) >= palm_needed) {
      std::stable_sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
      for (int i = 0; i < palm_needed; ++i) palm_dirs.push_back(cand[i].second);
      break;
    }
    if (n > 100 * fine_count) throw TemplateError("could not place palm vertices");
  }

  std::vector<Vec3> sphere;  // parameter-sphere position of every vertex
  std::vector<Vec3> pos;     // hand-space position
  std::vector<Label> labels;
  for (const auto& d : palm_dirs) {
    sphere.push_back(d);
    pos.push_back(palm_point(d));
    labels.push_back({-1, 0.0});
  }
  for (int fi = 0; fi < 5; ++fi) {
    const auto& f = fingers[fi];
    const Vec3 base = palm_point(f.cap);
    const double profile_len = f.length + 0.5 * M_PI * f.radius;
    const auto [e1, e2] = perpendicular_frame(f.cap);
    const auto [u1, u2] = perpendicular_frame(f.dir);
    for (int k = 0; k <= rings; ++k) {
      const double u = static_cast<double>(k) / rings;  // 0 at the tip, 1 at the base
      const double ell = (1.0 - u) * profile_len;
      Vec3 centre;
      double radius;
      if (ell <= f.length) {
        centre = base + ell * f.dir;
        radius = f.radius;
      } else {
        const double phi = (ell - f.length) / f.radius;
        centre = base + (f.length + f.radius * std::sin(phi)) * f.dir;
        radius = f.radius * std::cos(phi);
      }
      const int count = k == 0 ? 1 : kRingSize;
      const double theta = kCapRadius * u;
      for (int i = 0; i < count; ++i) {
        const double psi = 2.0 * M_PI * i / kRingSize + (k % 2 ? M_PI / kRingSize : 0.0);
        sphere.push_back(std::cos(theta) * f.cap + std::sin(theta) * (std::cos(psi) * e1 + std::sin(psi) * e2));
        pos.push_back(k == 0 ? Vec3(centre) : Vec3(centre + radius * (std::cos(psi) * u1 + std::sin(psi) * u2)));
        labels.push_back({fi, ell});
      }
    }
  }
  const int V = static_cast<int>(pos.size());

  // Small deterministic jitter puts the sphere points in general position.
  Rng rng(0x68616e64ULL);
  for (auto& s : sphere) {
    Vec3 j(normal(rng), normal(rng), normal(rng));
    s = (s + 0.003 * j).normalized();
  }

  HandTemplate t;
  t.faces = convex_hull(sphere);
  check_closed_manifold(t.faces, V);
  t.vertices_canonical.resize(V, 3);
  for (int i = 0; i < V; ++i) t.vertices_canonical.row(i) = pos[i].transpose();

  // Coarse vertices: farthest-point sampling in hand space from the lowest vertex.
  {
    int first = 0;
    for (int i = 1; i < V; ++i)
      if (pos[i].y() < pos[first].y()) first = i;
    std::vector<double> dist(V, 1e300);
    int cur = first;
    for (int k = 0; k < coarse_count; ++k) {
      t.coarse_to_fine.push_back(cur);
      for (int i = 0; i < V; ++i) dist[i] = std::min(dist[i], (pos[i] - pos[cur]).norm());
      cur = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    }
  }
  t.coarse_vertex_count = coarse_count;
  std::vector<Vec3> coarse_sphere;
  std::vector<int> fine_to_coarse(V, -1);
  for (int k = 0; k < coarse_count; ++k) {
    coarse_sphere.push_back(sphere[t.coarse_to_fine[k]]);
    fine_to_coarse[t.coarse_to_fine[k]] = k;
  }
  t.coarse_faces = convex_hull(coarse_sphere);
  check_closed_manifold(t.coarse_faces, coarse_count);

  t.upsample_matrix = Matrix<double>::Zero(V, coarse_count);
  for (int i = 0; i < V; ++i) {
    if (fine_to_coarse[i] >= 0) {
      t.upsample_matrix(i, fine_to_coarse[i]) = 1.0;
      continue;
    }
    for (auto [k, w] : radial_barycentric(sphere[i], coarse_sphere, t.coarse_faces)) t.upsample_matrix(i, k) += w;
  }

  // Joint regressor: wrist from the lowest palm vertices, finger joints from
  // Gaussian windows along each finger profile.
  t.skeleton_parents.assign(kParents.begin(), kParents.end());
  t.joint_regressor = Matrix<double>::Zero(kNumJoints, V);
  double ymin = 1e300;
  for (int i = 0; i < V; ++i)
    if (labels[i].finger < 0) ymin = std::min(ymin, pos[i].y());
  for (int i = 0; i < V; ++i)
    if (labels[i].finger < 0) {
      const double dy = pos[i].y() - ymin;
      t.joint_regressor(0, i) = std::exp(-dy * dy / (2.0 * 36.0));
    }
  for (int fi = 0; fi < 5; ++fi) {
    const auto& f = fingers[fi];
    const double profile_len = f.length + 0.5 * M_PI * f.radius;
    const double sigma = 0.6 * profile_len / rings;
    const std::array<double, 4> at = {0.0, 0.45 * f.length, 0.75 * f.length, profile_len};
    for (int k = 0; k < 4; ++k) {
      const int j = 1 + 4 * fi + k;
      const double s = k == 3 ? 0.35 * sigma : sigma;
      for (int i = 0; i < V; ++i)
        if (labels[i].finger == fi) {
          const double d = labels[i].profile - at[k];
          t.joint_regressor(j, i) = std::exp(-d * d / (2.0 * s * s));
        }
    }
  }
  for (int j = 0; j < kNumJoints; ++j) t.joint_regressor.row(j) /= t.joint_regressor.row(j).sum();

  // Wrist to the origin.
  const Eigen::RowVector3d wrist = t.joint_regressor.row(0) * t.vertices_canonical;
  t.vertices_canonical.rowwise() -= wrist;
  for (int i = 0; i < V; ++i) pos[i] = t.vertices_canonical.row(i).transpose();
  t.rest_joints = t.joint_regressor * t.vertices_canonical;

  // Skinning: Gaussian in the distance to the bones each joint drives.
  std::vector<std::vector<int>> children(kNumJoints);
  for (int j = 1; j < kNumJoints; ++j) children[kParents[j]].push_back(j);
  auto bone_distance = [&](int j, const Vec3& p) {
    double best = 1e300;
    const Vec3 a = t.rest_joints.row(j).transpose();
    for (int c : children[j]) best = std::min(best, segment_distance(p, a, t.rest_joints.row(c).transpose()));
    return best;
  };
  t.skinning_weights = Matrix<double>::Zero(V, kNumJoints);
  constexpr double kSkinSigma = 6.0;
  for (int i = 0; i < V; ++i) {
    std::vector<int> cand{0};
    if (labels[i].finger < 0) {
      for (int fi = 0; fi < 5; ++fi) cand.push_back(1 + 4 * fi);
    } else {
      for (int k = 0; k < 3; ++k) cand.push_back(1 + 4 * labels[i].finger + k);
    }
    std::vector<double> logits;
    for (int j : cand) {
      const double d = bone_distance(j, pos[i]);
      logits.push_back(-d * d / (2.0 * kSkinSigma * kSkinSigma));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (std::size_t k = 0; k < cand.size(); ++k) z += std::exp(logits[k] - mx);
    for (std::size_t k = 0; k < cand.size(); ++k) t.skinning_weights(i, cand[k]) = std::exp(logits[k] - mx) / z;
  }

  t.joint_limits.assign(kNumJoints, 0.0);
  t.flex_axes.assign(kNumJoints, Vec3::UnitX());
  for (int fi = 0; fi < 5; ++fi) {
    const Vec3 axis = fingers[fi].dir.cross(-Vec3::UnitZ()).normalized();
    for (int k = 0; k < 4; ++k) {
      const int j = 1 + 4 * fi + k;
      t.flex_axes[j] = axis;
      t.joint_limits[j] = k < 3 ? fingers[fi].limits[k] : 0.0;
    }
  }

  t.spiral_indices = build_spirals(t.coarse_faces, coarse_count, spiral_length);
  t.spiral_indices_fine = build_spirals(t.faces, V, spiral_length);
  return t;
}

// ---- kinematics -------------------------------------------------------------

Skinned forward_kinematics(const HandTemplate& tpl, const HandPose& pose) {
  const int J = static_cast<int>(tpl.skeleton_parents.size());
  if (static_cast<int>(pose.joint_rotations.size()) != J)
    throw std::invalid_argument("forward_kinematics: pose has the wrong joint count");
  std::vector<Mat3> A(J);
  std::vector<Vec3> P(J);
  for (int j = 0; j < J; ++j) {
    const int p = tpl.skeleton_parents[j];
    const Vec3 rest = tpl.rest_joints.row(j).transpose();
    if (p < 0) {
      A[j] = pose.joint_rotations[j];
      P[j] = rest;
    } else {
      A[j] = A[p] * pose.joint_rotations[j];
      P[j] = P[p] + A[p] * (rest - Vec3(tpl.rest_joints.row(p).transpose()));
    }
  }
  Skinned out;
  const int V = tpl.vertex_count();
  out.vertices.resize(V, 3);
  for (int i = 0; i < V; ++i) {
    const Vec3 v = tpl.vertices_canonical.row(i).transpose();
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = tpl.skinning_weights(i, j);
      if (w == 0.0) continue;
      acc += w * (A[j] * (v - Vec3(tpl.rest_joints.row(j).transpose())) + P[j]);
    }
    out.vertices.row(i) = pose.shape_scale * acc.transpose();
  }
  out.joints.resize(J, 3);
  for (int j = 0; j < J; ++j) out.joints.row(j) = pose.shape_scale * P[j].transpose();
  return out;
}

Matrix<double> regress_joints(const HandTemplate& tpl, const Matrix<double>& vertices) {
  if (vertices.rows() != tpl.vertex_count() || vertices.cols() != 3)
    throw std::invalid_argument("regress_joints: expected V x 3 vertices");
  return tpl.joint_regressor * vertices;
}

HandPose random_pose(const HandTemplate& tpl, Rng& rng, double amount, double scale_min, double scale_max) {
  HandPose pose = HandPose::rest();
  const int J = static_cast<int>(tpl.skeleton_parents.size());
  for (int j = 0; j < J; ++j) {
    const double limit = tpl.joint_limits[j];
    const double flex = uniform(rng, -0.15, 1.0) * limit * amount;
    const double spread = uniform(rng, -0.2, 0.2) * limit * amount;
    if (limit <= 0.0) continue;
    const Vec3 a = tpl.flex_axes[j];
    const Vec3 b = a.cross(Vec3::UnitZ()).cross(a).normalized();
    Vec3 rv = flex * a + spread * b;
    const double angle = std::min(rv.norm(), limit);
    if (angle > 0.0) pose.joint_rotations[j] = axis_angle(rv, angle);
  }
  pose.shape_scale = uniform(rng, scale_min, scale_max);
  return pose;
}

void validate_pose(const HandTemplate& tpl, const HandPose& pose, double tol) {
  const std::size_t J = tpl.skeleton_parents.size();
  if (pose.joint_rotations.size() != J) throw std::invalid_argument("pose has the wrong joint count");
  for (std::size_t j = 0; j < J; ++j) {
    const Mat3& r = pose.joint_rotations[j];
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tol || r.determinant() < 0)
      throw std::invalid_argument("joint rotation " + std::to_string(j) + " is not a proper rotation");
    if (rotation_angle(r) > tpl.joint_limits[j] + tol)
      throw std::invalid_argument("joint rotation " + std::to_string(j) + " exceeds its limit");
  }
  if (!(pose.shape_scale >= 0.8 - tol && pose.shape_scale <= 1.2 + tol))
    throw std::invalid_argument("shape scale outside [0.8, 1.2]");
}

// ---- OBJ --------------------------------------------------------------------

void write_obj(const std::filesystem::path& path, const Matrix<double>& vertices, const MatrixXi& faces) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(9);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i)
    out << "v " << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    out << "f " << faces(f, 0) + 1 << ' ' << faces(f, 1) + 1 << ' ' << faces(f, 2) + 1 << '\n';
  if (!out) throw std::runtime_error("error writing " + path.string());
}

ObjMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Vec3> v;
  std::vector<std::array<int, 3>> f;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 p;
      ss >> p.x() >> p.y() >> p.z();
      v.push_back(p);
    } else if (tag == "f") {
      std::array<int, 3> idx{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ss >> tok;
        idx[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      f.push_back(idx);
    }
  }
  ObjMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (int k = 0; k < 3; ++k) m.faces(static_cast<Eigen::Index>(i), k) = f[i][k];
  return m;
}

}  // namespace mvhand
