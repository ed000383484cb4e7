#include "mvhand/synthdata.hpp"

#include "mvhand/container.hpp"

namespace mvhand {

namespace {

using Vec2 = Eigen::Vector2d;

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Depth buffer over the supersample grid: the largest inverse depth of the
// hand surface per sample, or 0 where no triangle covers it.
struct DepthBuffer {
  int size = 0;  // samples per axis
  int ss = 1;
  std::vector<double> inv_depth;

  Vec2 position(int sx, int sy) const { return {(sx + 0.5) / ss, (sy + 0.5) / ss}; }
};

DepthBuffer rasterize(const Matrix<double>& vertices, const MatrixXi& faces, const Mat3& rotation,
                      const Vec3& translation, const Intrinsics& intr, int image_size, int ss) {
  DepthBuffer buf;
  buf.ss = ss;
  buf.size = image_size * ss;
  buf.inv_depth.assign(static_cast<std::size_t>(buf.size) * buf.size, 0.0);

  const Eigen::Index V = vertices.rows();
  std::vector<Vec2> screen(V);
  std::vector<double> iz(V);
  for (Eigen::Index i = 0; i < V; ++i) {
    const Vec3 c = rotation * Vec3(vertices.row(i).transpose()) + translation;
    if (c.z() <= 1.0) throw RenderError("hand vertex behind the camera");
    screen[i] = {intr.focal * c.x() / c.z() + intr.cx, intr.focal * c.y() / c.z() + intr.cy};
    iz[i] = 1.0 / c.z();
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    const Vec2 &p0 = screen[a], &p1 = screen[b], &p2 = screen[c];
    const double area = cross2(p1 - p0, p2 - p0);
    if (std::abs(area) < 1e-12) continue;
    const double umin = std::min({p0.x(), p1.x(), p2.x()}), umax = std::max({p0.x(), p1.x(), p2.x()});
    const double vmin = std::min({p0.y(), p1.y(), p2.y()}), vmax = std::max({p0.y(), p1.y(), p2.y()});
    const int x0 = std::max(0, static_cast<int>(std::floor(umin * ss - 0.5)));
    const int x1 = std::min(buf.size - 1, static_cast<int>(std::ceil(umax * ss - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(vmin * ss - 0.5)));
    const int y1 = std::min(buf.size - 1, static_cast<int>(std::ceil(vmax * ss - 0.5)));
    for (int sy = y0; sy <= y1; ++sy)
      for (int sx = x0; sx <= x1; ++sx) {
        const Vec2 s = buf.position(sx, sy);
        const double b0 = cross2(p2 - p1, s - p1) / area;
        const double b1 = cross2(p0 - p2, s - p2) / area;
        const double b2 = 1.0 - b0 - b1;
        if (b0 < 0 || b1 < 0 || b2 < 0) continue;
        const double z = b0 * iz[a] + b1 * iz[b] + b2 * iz[c];
        double& cell = buf.inv_depth[static_cast<std::size_t>(sy) * buf.size + sx];
        cell = std::max(cell, z);
      }
  }
  return buf;
}

bool occluded(const std::vector<Polygon>& occluders, const Vec2& p) {
  for (const auto& poly : occluders)
    if (inside_convex(poly, p)) return true;
  return false;
}

std::vector<Vec2> hand_sample_points(const DepthBuffer& buf) {
  std::vector<Vec2> pts;
  for (int sy = 0; sy < buf.size; ++sy)
    for (int sx = 0; sx < buf.size; ++sx)
      if (buf.inv_depth[static_cast<std::size_t>(sy) * buf.size + sx] > 0) pts.push_back(buf.position(sx, sy));
  return pts;
}

Mat3 view_rotation(int k, int n) {
  const double az = 2.0 * M_PI * k / n;
  const double el = n == 1 ? 0.0 : (k % 2 ? 0.3 : -0.3);
  const Vec3 position(std::sin(az) * std::cos(el), std::sin(el), -std::cos(az) * std::cos(el));
  const Vec3 z = -position;
  const Vec3 down(0.0, -1.0, 0.0);
  const Vec3 y = (down - down.dot(z) * z).normalized();
  const Vec3 x = y.cross(z);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

Polygon random_polygon(Rng& rng, int image_size) {
  const double w = image_size;
  const double r = uniform(rng, 0.12, 0.3) * w;
  const Vec2 c(uniform(rng, r, w - r), uniform(rng, r, w - r));
  const int m = 3 + uniform_int(rng, 4);
  std::vector<double> ang(m);
  for (auto& a : ang) a = uniform(rng, 0.0, 2.0 * M_PI);
  std::sort(ang.begin(), ang.end());
  Polygon p;
  for (double a : ang) p.emplace_back(c.x() + r * std::cos(a), c.y() + r * std::sin(a));
  return p;
}

Matrix<float> to_float(const Matrix<double>& m) { return m.cast<float>(); }

}  // namespace

// ---- rendering --------------------------------------------------------------

Eigen::Vector2d project_normalized(const Vec3& c, const Intrinsics& intr, int image_size) {
  return {(intr.focal * c.x() / c.z() + intr.cx) / image_size, (intr.focal * c.y() / c.z() + intr.cy) / image_size};
}

bool inside_convex(const Polygon& poly, const Eigen::Vector2d& p) {
  if (poly.size() < 3) return false;
  int sign = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const double c = cross2(b - a, p - a);
    if (c == 0.0) continue;
    const int s = c > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

Polygon clip_image_halfplane(const Eigen::Vector2d& n, double offset, int image_size) {
  const double w = image_size;
  const Polygon rect = {{0, 0}, {w, 0}, {w, w}, {0, w}};
  Polygon out;
  for (std::size_t i = 0; i < rect.size(); ++i) {
    const Vec2& a = rect[i];
    const Vec2& b = rect[(i + 1) % rect.size()];
    const double da = n.dot(a) - offset, db = n.dot(b) - offset;
    if (da >= 0) out.push_back(a);
    if ((da >= 0) != (db >= 0)) out.push_back(a + (b - a) * (da / (da - db)));
  }
  return out;
}

RenderedView render_mesh(const Matrix<double>& vertices, const MatrixXi& faces, const Matrix<double>& joints,
                         const Mat3& rotation, const Vec3& translation, const Intrinsics& intr, int image_size,
                         const std::vector<Polygon>& occluders, const RenderSettings& settings) {
  const int ss = settings.supersample;
  const DepthBuffer buf = rasterize(vertices, faces, rotation, translation, intr, image_size, ss);
  RenderedView out;
  out.image = Matrix<float>::Zero(kImageChannels, static_cast<Eigen::Index>(image_size) * image_size);
  const double inv_near = 1.0 / intr.near, inv_far = 1.0 / intr.far;
  int hand = 0, hidden = 0;
  std::vector<double> cover(out.image.cols(), 0.0), depth(out.image.cols(), 0.0);
  for (int sy = 0; sy < buf.size; ++sy)
    for (int sx = 0; sx < buf.size; ++sx) {
      const double z = buf.inv_depth[static_cast<std::size_t>(sy) * buf.size + sx];
      if (z <= 0) continue;
      ++hand;
      if (occluded(occluders, buf.position(sx, sy))) {
        ++hidden;
        continue;
      }
      const std::size_t px = static_cast<std::size_t>(sy / ss) * image_size + sx / ss;
      cover[px] += 1.0;
      depth[px] += std::clamp((z - inv_far) / (inv_near - inv_far), 0.0, 1.0);
    }
  if (hand == 0) throw RenderError("projected hand lies outside the image");
  const double per = 1.0 / (ss * ss);
  for (Eigen::Index p = 0; p < out.image.cols(); ++p) {
    out.image(0, p) = static_cast<float>(cover[p] * per);
    out.image(1, p) = static_cast<float>(depth[p] * per);
  }
  out.hand_samples = hand;
  out.occlusion_fraction = static_cast<double>(hidden) / hand;
  out.joints2d.resize(joints.rows(), 2);
  for (Eigen::Index j = 0; j < joints.rows(); ++j)
    out.joints2d.row(j) =
        project_normalized(rotation * Vec3(joints.row(j).transpose()) + translation, intr, image_size).transpose();
  return out;
}

RenderedView render_view(const HandTemplate& tpl, const HandPose& pose, const Mat3& rotation,
                         const Vec3& translation, const Intrinsics& intr, int image_size,
                         const std::vector<Polygon>& occluders, const RenderSettings& settings) {
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || rotation.determinant() < 0)
    throw std::invalid_argument("render_view: rotation is not proper");
  const Skinned s = forward_kinematics(tpl, pose);
  return render_mesh(s.vertices, tpl.faces, s.joints, rotation, translation, intr, image_size, occluders, settings);
}

// ---- generation ---------------------------------------------------------------

std::uint64_t sample_seed(std::uint64_t base_seed, int index) {
  return fnv1a("sample:" + std::to_string(index), base_seed * 0x9e3779b97f4a7c15ULL + 1);
}

MultiViewSample generate_sample(const HandTemplate& tpl, std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.views < 1) throw std::invalid_argument("views must be >= 1");
  if (cfg.image_size < 32) throw std::invalid_argument("image_size must be >= 32");
  if (cfg.occ_target_min < 0 || cfg.occ_target_max > 1 || cfg.occ_target_min > cfg.occ_target_max)
    throw std::invalid_argument("invalid target occlusion range");
  const int N = cfg.views, W = cfg.image_size;
  Rng rng(seed);

  Intrinsics intr;
  intr.focal = W * cfg.camera_distance / 230.0;
  intr.cx = intr.cy = W / 2.0;
  intr.near = cfg.camera_distance - 150.0;
  intr.far = cfg.camera_distance + 150.0;

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const HandPose pose = random_pose(tpl, rng, cfg.pose_amount);
    const Skinned sk = forward_kinematics(tpl, pose);
    const Vec3 axis(normal(rng), normal(rng), normal(rng));
    const Mat3 global = axis_angle(axis, uniform(rng, 0.0, cfg.max_global_angle));
    const Vec3 centre = sk.vertices.colwise().mean().transpose();

    CameraRig rig;
    rig.image_size = W;
    rig.intrinsics = intr;
    for (int k = 0; k < N; ++k) {
      const Mat3 rk = axis_angle(Vec3::UnitZ(), uniform(rng, -cfg.max_roll, cfg.max_roll)) * view_rotation(k, N);
      rig.rotations.push_back(rk);
      rig.translations.push_back(-rk * global * centre + Vec3(0, 0, cfg.camera_distance));
    }
    const int target = uniform_int(rng, N);
    const double q = uniform(rng, cfg.occ_target_min, cfg.occ_target_max);

    auto render = [&](int k, const std::vector<Polygon>& occ) {
      return render_mesh(sk.vertices, tpl.faces, sk.joints, rig.rotations[k] * global, rig.translations[k], intr, W,
                         occ);
    };

    bool ok = true;
    std::vector<RenderedView> views(N);
    std::vector<Polygon> occluders(N);
    try {
      for (int k = 0; k < N && ok; ++k) {
        if (k == target) {
          if (cfg.occ_target_max <= 0.0) {
            views[k] = render(k, {});
            continue;
          }
          const DepthBuffer buf = rasterize(sk.vertices, tpl.faces, rig.rotations[k] * global, rig.translations[k],
                                            intr, W, RenderSettings{}.supersample);
          const auto pts = hand_sample_points(buf);
          if (pts.empty()) throw RenderError("projected hand lies outside the image");
          bool placed = false;
          for (int tries = 0; tries < 16 && !placed; ++tries) {
            const double theta = uniform(rng, 0.0, 2.0 * M_PI);
            const Vec2 n(std::cos(theta), std::sin(theta));
            std::vector<double> proj;
            for (const auto& p : pts) proj.push_back(n.dot(p));
            std::sort(proj.begin(), proj.end(), std::greater<>());
            const int m = static_cast<int>(proj.size());
            const int keep = std::clamp(static_cast<int>(std::lround(q * m)), 0, m);
            const double offset = keep == 0 ? proj[0] + 1.0 : keep == m ? proj[m - 1] - 1.0
                                                                          : 0.5 * (proj[keep - 1] + proj[keep]);
            Polygon poly = clip_image_halfplane(n, offset, W);
            std::vector<Polygon> occ;
            if (poly.size() >= 3) occ.push_back(poly);
            RenderedView rv = render(k, occ);
            if (rv.occlusion_fraction >= cfg.occ_target_min - 1e-12 &&
                rv.occlusion_fraction <= cfg.occ_target_max + 1e-12) {
              views[k] = std::move(rv);
              occluders[k] = occ.empty() ? Polygon{} : occ[0];
              placed = true;
            }
          }
          ok = placed;
        } else {
          views[k] = render(k, {});
          if (uniform01(rng) < cfg.other_occluder_prob) {
            for (int tries = 0; tries < 8; ++tries) {
              Polygon poly = random_polygon(rng, W);
              RenderedView rv = render(k, {poly});
              if (rv.occlusion_fraction <= cfg.occ_other_max) {
                views[k] = std::move(rv);
                occluders[k] = poly;
                break;
              }
            }
          }
        }
      }
    } catch (const RenderError&) {
      ok = false;
    }
    if (!ok) continue;
    if (N > 1) {
      bool clear = false;
      for (int k = 0; k < N; ++k)
        if (k != target && views[k].occlusion_fraction <= cfg.clear_view_max) clear = true;
      if (!clear) continue;
    }

    MultiViewSample s;
    s.target_view = target;
    for (auto& poly : occluders)
      for (auto& v : poly) v = v.cast<float>().cast<double>();
    s.occluders = occluders;
    s.gt_vertices_canonical = to_float(sk.vertices);
    s.gt_joints3d_canonical = to_float(sk.joints);
    s.cam.image_size = W;
    s.cam.intrinsics = intr;
    for (double* v : {&s.cam.intrinsics.focal, &s.cam.intrinsics.cx, &s.cam.intrinsics.cy, &s.cam.intrinsics.near,
                      &s.cam.intrinsics.far})
      *v = static_cast<float>(*v);
    const Matrix<double> joints = s.gt_joints3d_canonical.cast<double>();
    for (int k = 0; k < N; ++k) {
      Matrix<float> img = views[k].image;
      for (Eigen::Index p = 0; p < img.cols(); ++p)
        img(0, p) = static_cast<float>(std::clamp(img(0, p) + cfg.noise_sigma * normal(rng), 0.0, 1.0));
      s.images.push_back(std::move(img));
      s.occlusion_fraction.push_back(static_cast<float>(views[k].occlusion_fraction));
      // Stored geometry is float32; the 2-D targets are re-projected from
      // the stored values so that they agree exactly.
      const Mat3 rot = (rig.rotations[k] * global).cast<float>().cast<double>();
      const Vec3 tr = rig.translations[k].cast<float>().cast<double>();
      s.cam.rotations.push_back(rig.rotations[k].cast<float>().cast<double>());
      s.cam.translations.push_back(tr);
      s.gt_rotation.push_back(rot.cast<float>());
      Matrix<float> j2(joints.rows(), 2);
      for (Eigen::Index j = 0; j < joints.rows(); ++j)
        j2.row(j) = project_normalized(rot * Vec3(joints.row(j).transpose()) + tr, s.cam.intrinsics, W).cast<float>().transpose();
      if (j2.minCoeff() < 0.0f || j2.maxCoeff() > 1.0f) {
        ok = false;
        break;
      }
      s.gt_joints2d.push_back(std::move(j2));
    }
    if (!ok) continue;
    return s;
  }
  throw SynthError("generate_sample: no valid sample after " + std::to_string(cfg.max_retries) + " attempts");
}

std::vector<MultiViewSample> generate_dataset(const HandTemplate& tpl, std::uint64_t base_seed, int count,
                                              const SynthConfig& config) {
  std::vector<MultiViewSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(generate_sample(tpl, sample_seed(base_seed, i), config));
  return out;
}

double recompute_occlusion(const HandTemplate& tpl, const MultiViewSample& s, int view) {
  std::vector<Polygon> occ;
  if (s.occluders[view].size() >= 3) occ.push_back(s.occluders[view]);
  const RenderedView rv = render_mesh(s.gt_vertices_canonical.cast<double>(), tpl.faces,
                                      s.gt_joints3d_canonical.cast<double>(), s.gt_rotation[view].cast<double>(),
                                      s.cam.translations[view], s.cam.intrinsics, s.cam.image_size, occ);
  return rv.occlusion_fraction;
}

// ---- persistence --------------------------------------------------------------

void write_dataset(const std::vector<MultiViewSample>& samples, const std::filesystem::path& dir,
                   const std::string& split) {
  if (samples.empty()) throw std::invalid_argument("write_dataset: no samples");
  const auto& first = samples.front();
  const std::int64_t S = static_cast<std::int64_t>(samples.size()), N = first.views(), W = first.cam.image_size;
  const std::int64_t V = first.gt_vertices_canonical.rows(), J = first.gt_joints3d_canonical.rows();
  const std::int64_t P = W * W;

  std::vector<float> images, rot, cam_rot, trans, intr, verts, joints, j2d, occ, polys;
  std::vector<std::int32_t> target, poly_count;
  for (const auto& s : samples) {
    if (s.views() != N || s.cam.image_size != W || s.gt_vertices_canonical.rows() != V)
      throw ShapeMismatch("write_dataset: samples differ in shape");
    for (int k = 0; k < N; ++k) {
      for (int c = 0; c < kImageChannels; ++c)
        for (std::int64_t p = 0; p < P; ++p) images.push_back(s.images[k](c, p));
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
          rot.push_back(s.gt_rotation[k](r, c));
          cam_rot.push_back(static_cast<float>(s.cam.rotations[k](r, c)));
        }
      for (int c = 0; c < 3; ++c) trans.push_back(static_cast<float>(s.cam.translations[k](c)));
      for (std::int64_t j = 0; j < J; ++j)
        for (int c = 0; c < 2; ++c) j2d.push_back(s.gt_joints2d[k](j, c));
      occ.push_back(s.occlusion_fraction[k]);
      const auto& poly = s.occluders[k];
      if (poly.size() > static_cast<std::size_t>(kMaxOccluderVertices))
        throw ShapeMismatch("write_dataset: occluder has too many vertices");
      poly_count.push_back(static_cast<std::int32_t>(poly.size()));
      for (int i = 0; i < kMaxOccluderVertices; ++i)
        for (int c = 0; c < 2; ++c)
          polys.push_back(i < static_cast<int>(poly.size()) ? static_cast<float>(poly[i](c)) : 0.0f);
    }
    const auto& in = s.cam.intrinsics;
    for (double v : {in.focal, in.cx, in.cy, in.near, in.far}) intr.push_back(static_cast<float>(v));
    for (std::int64_t i = 0; i < V; ++i)
      for (int c = 0; c < 3; ++c) verts.push_back(s.gt_vertices_canonical(i, c));
    for (std::int64_t j = 0; j < J; ++j)
      for (int c = 0; c < 3; ++c) joints.push_back(s.gt_joints3d_canonical(j, c));
    target.push_back(s.target_view);
  }

  TensorContainer tc;
  tc.meta["kind"] = "dataset";
  tc.meta["version"] = "1";
  tc.meta["split"] = split;
  tc.meta["sample_count"] = S;
  tc.meta["views"] = N;
  tc.meta["image_size"] = W;
  tc.add_f32("images", {S, N, kImageChannels, W, W}, std::move(images));
  tc.add_f32("camera_rotations", {S, N, 3, 3}, std::move(cam_rot));
  tc.add_f32("camera_translations", {S, N, 3}, std::move(trans));
  tc.add_f32("intrinsics", {S, 5}, std::move(intr));
  tc.add_f32("gt_vertices_canonical", {S, V, 3}, std::move(verts));
  tc.add_f32("gt_joints3d_canonical", {S, J, 3}, std::move(joints));
  tc.add_f32("gt_rotation_per_view", {S, N, 3, 3}, std::move(rot));
  tc.add_f32("gt_joints2d_per_view", {S, N, J, 2}, std::move(j2d));
  tc.add_f32("occlusion_fraction_per_view", {S, N}, std::move(occ));
  tc.add_i32("target_view", {S}, std::move(target));
  tc.add_i32("occluder_vertex_count", {S, N}, std::move(poly_count));
  tc.add_f32("occluders", {S, N, kMaxOccluderVertices, 2}, std::move(polys));
  tc.write(dir);
}

std::vector<MultiViewSample> read_dataset(const std::filesystem::path& dir) {
  const TensorContainer tc = TensorContainer::read(dir);
  auto shape = [&](const char* name, std::size_t rank) -> const std::vector<std::int64_t>& {
    if (!tc.contains(name)) throw CorruptManifest(std::string("dataset is missing tensor ") + name);
    const auto& sh = tc.at(name).shape;
    if (sh.size() != rank) throw ShapeMismatch(std::string("unexpected rank for ") + name);
    return sh;
  };
  const auto& isz = shape("images", 5);
  const std::int64_t S = isz[0], N = isz[1], W = isz[3];
  if (isz[2] != kImageChannels || isz[4] != W) throw ShapeMismatch("images must be S x N x 2 x W x W");
  const std::int64_t V = shape("gt_vertices_canonical", 3)[1], J = shape("gt_joints3d_canonical", 3)[1];
  auto expect = [&](const char* name, std::vector<std::int64_t> want) {
    if (shape(name, want.size()) != want) throw ShapeMismatch(std::string("inconsistent shape for ") + name);
  };
  expect("camera_rotations", {S, N, 3, 3});
  expect("camera_translations", {S, N, 3});
  expect("intrinsics", {S, 5});
  expect("gt_vertices_canonical", {S, V, 3});
  expect("gt_joints3d_canonical", {S, J, 3});
  expect("gt_rotation_per_view", {S, N, 3, 3});
  expect("gt_joints2d_per_view", {S, N, J, 2});
  expect("occlusion_fraction_per_view", {S, N});
  expect("target_view", {S});
  expect("occluder_vertex_count", {S, N});
  expect("occluders", {S, N, kMaxOccluderVertices, 2});

  const auto& images = tc.at("images").f32;
  const auto& cam_rot = tc.at("camera_rotations").f32;
  const auto& trans = tc.at("camera_translations").f32;
  const auto& intr = tc.at("intrinsics").f32;
  const auto& verts = tc.at("gt_vertices_canonical").f32;
  const auto& joints = tc.at("gt_joints3d_canonical").f32;
  const auto& rot = tc.at("gt_rotation_per_view").f32;
  const auto& j2d = tc.at("gt_joints2d_per_view").f32;
  const auto& occ = tc.at("occlusion_fraction_per_view").f32;
  const auto& target = tc.at("target_view").i32;
  const auto& pcount = tc.at("occluder_vertex_count").i32;
  const auto& polys = tc.at("occluders").f32;

  std::vector<MultiViewSample> out(S);
  const std::int64_t P = W * W;
  for (std::int64_t i = 0; i < S; ++i) {
    auto& s = out[i];
    s.target_view = target[i];
    if (s.target_view < 0 || s.target_view >= N) throw ShapeMismatch("target_view out of range");
    s.cam.image_size = static_cast<int>(W);
    s.cam.intrinsics = {intr[i * 5], intr[i * 5 + 1], intr[i * 5 + 2], intr[i * 5 + 3], intr[i * 5 + 4]};
    s.gt_vertices_canonical.resize(V, 3);
    for (std::int64_t v = 0; v < V; ++v)
      for (int c = 0; c < 3; ++c) s.gt_vertices_canonical(v, c) = verts[(i * V + v) * 3 + c];
    s.gt_joints3d_canonical.resize(J, 3);
    for (std::int64_t j = 0; j < J; ++j)
      for (int c = 0; c < 3; ++c) s.gt_joints3d_canonical(j, c) = joints[(i * J + j) * 3 + c];
    for (std::int64_t k = 0; k < N; ++k) {
      const std::int64_t ik = i * N + k;
      Matrix<float> img(kImageChannels, P);
      for (int c = 0; c < kImageChannels; ++c)
        for (std::int64_t p = 0; p < P; ++p) img(c, p) = images[(ik * kImageChannels + c) * P + p];
      s.images.push_back(std::move(img));
      Matrix<float> r(3, 3);
      Mat3 cr;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          r(a, b) = rot[ik * 9 + a * 3 + b];
          cr(a, b) = cam_rot[ik * 9 + a * 3 + b];
        }
      s.gt_rotation.push_back(r);
      s.cam.rotations.push_back(cr);
      s.cam.translations.emplace_back(trans[ik * 3], trans[ik * 3 + 1], trans[ik * 3 + 2]);
      Matrix<float> j2(J, 2);
      for (std::int64_t j = 0; j < J; ++j)
        for (int c = 0; c < 2; ++c) j2(j, c) = j2d[(ik * J + j) * 2 + c];
      s.gt_joints2d.push_back(std::move(j2));
      s.occlusion_fraction.push_back(occ[ik]);
      const int m = pcount[ik];
      if (m < 0 || m > kMaxOccluderVertices) throw ShapeMismatch("occluder vertex count out of range");
      Polygon poly;
      for (int v = 0; v < m; ++v)
        poly.emplace_back(polys[(ik * kMaxOccluderVertices + v) * 2], polys[(ik * kMaxOccluderVertices + v) * 2 + 1]);
      s.occluders.push_back(std::move(poly));
    }
  }
  return out;
}

}  // namespace mvhand
