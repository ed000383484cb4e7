#include <filesystem>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mvhand/container.hpp"
#include "mvhand/synthdata.hpp"

using namespace mvhand;
namespace fs = std::filesystem;

namespace {

const HandTemplate& tpl() {
  static const HandTemplate t = build_template();
  return t;
}

struct Scene {
  HandPose pose;
  Mat3 rotation;
  Vec3 translation;
  Intrinsics intr;
  int size;
};

Scene scene(int size = 64) {
  Scene s;
  Rng rng(4);
  s.pose = random_pose(tpl(), rng);
  s.rotation = axis_angle(Vec3(0.3, 1.0, 0.2), 0.6);
  const Vec3 centre = forward_kinematics(tpl(), s.pose).vertices.colwise().mean().transpose();
  s.translation = -s.rotation * centre + Vec3(0, 0, 400);
  s.intr.focal = size * 400.0 / 230.0;
  s.intr.cx = s.intr.cy = size / 2.0;
  s.size = size;
  return s;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mvhand_test_" + name);
  fs::remove_all(p);
  return p;
}

SynthConfig small_config() {
  SynthConfig c;
  c.views = 3;
  c.image_size = 32;
  c.occ_target_min = 0.5;
  c.occ_target_max = 0.8;
  return c;
}

}  // namespace

TEST_CASE("render_view: no occluder and full cover") {
  const Scene s = scene();
  const auto rv = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {});
  CHECK(rv.occlusion_fraction == 0.0);
  CHECK(rv.image.row(0).maxCoeff() == 1.0f);
  CHECK(rv.image.minCoeff() >= 0.0f);
  CHECK(rv.image.maxCoeff() <= 1.0f);
  CHECK(rv.image.row(1).maxCoeff() > 0.0f);

  const double w = s.size;
  const Polygon all = {{0, 0}, {w, 0}, {w, w}, {0, w}};
  const auto full = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {all});
  CHECK(full.occlusion_fraction == 1.0);
  CHECK(full.image.row(0).maxCoeff() == 0.0f);
}

TEST_CASE("render_view: half-plane occluder matches a pixel-counting oracle") {
  const Scene s = scene();
  const auto clean = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {});
  for (double theta : {0.3, 1.9, 4.0}) {
    const Eigen::Vector2d n(std::cos(theta), std::sin(theta));
    // Split the hand pixels roughly in half along n.
    std::vector<double> proj;
    for (int p = 0; p < clean.image.cols(); ++p)
      if (clean.image(0, p) > 0) proj.push_back(n.dot(Eigen::Vector2d(p % s.size + 0.5, p / s.size + 0.5)));
    std::sort(proj.begin(), proj.end());
    const double offset = proj[proj.size() / 2];
    const Polygon poly = clip_image_halfplane(n, offset, s.size);
    const auto occ = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {poly});

    double hand = 0, hidden = 0;
    for (int p = 0; p < clean.image.cols(); ++p) {
      const double cov = clean.image(0, p);
      if (cov <= 0) continue;
      hand += cov;
      if (n.dot(Eigen::Vector2d(p % s.size + 0.5, p / s.size + 0.5)) >= offset) hidden += cov;
    }
    CHECK(std::abs(occ.occlusion_fraction - hidden / hand) < 0.02);
  }
}

TEST_CASE("render_view: adding occluders never decreases occlusion") {
  const Scene s = scene();
  const Polygon a = {{10, 10}, {30, 12}, {20, 35}};
  const Polygon b = {{30, 30}, {60, 30}, {60, 60}, {30, 55}};
  const auto r0 = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {});
  const auto r1 = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {a});
  const auto r2 = render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {a, b});
  CHECK(r0.occlusion_fraction <= r1.occlusion_fraction);
  CHECK(r1.occlusion_fraction <= r2.occlusion_fraction);
}

TEST_CASE("render_view: hand outside the image is an error") {
  Scene s = scene();
  s.translation += Vec3(5000, 0, 0);
  CHECK_THROWS_AS(render_view(tpl(), s.pose, s.rotation, s.translation, s.intr, s.size, {}), RenderError);
}

TEST_CASE("projection consistency of generated samples") {
  const auto samples = generate_dataset(tpl(), 9, 5, small_config());
  for (const auto& smp : samples) {
    CHECK(smp.views() == 3);
    for (int k = 0; k < smp.views(); ++k) {
      const Mat3 r = smp.gt_rotation[k].cast<double>();
      for (int j = 0; j < kNumJoints; ++j) {
        const Vec3 c = r * Vec3(smp.gt_joints3d_canonical.row(j).transpose().cast<double>()) + smp.cam.translations[k];
        const Eigen::Vector2d uv = project_normalized(c, smp.cam.intrinsics, smp.cam.image_size);
        CHECK(std::abs(uv.x() - smp.gt_joints2d[k](j, 0)) < 1e-6);
        CHECK(std::abs(uv.y() - smp.gt_joints2d[k](j, 1)) < 1e-6);
        // Unprojecting with the known depth recovers the camera-frame joint.
        const double x = (uv.x() * smp.cam.image_size - smp.cam.intrinsics.cx) * c.z() / smp.cam.intrinsics.focal;
        CHECK(std::abs(x - c.x()) / smp.cam.image_size < 1e-6 * c.z());
      }
      CHECK(smp.gt_joints2d[k].minCoeff() >= 0.0f);
      CHECK(smp.gt_joints2d[k].maxCoeff() <= 1.0f);
      CHECK(std::abs(recompute_occlusion(tpl(), smp, k) - smp.occlusion_fraction[k]) < 0.02);
      const Mat3 cr = smp.cam.rotations[k];
      CHECK((cr.transpose() * cr - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
      CHECK(cr.determinant() > 0);
    }
  }
}

TEST_CASE("generate_sample is deterministic and honours the occlusion regime") {
  const SynthConfig cfg = small_config();
  const auto a = generate_sample(tpl(), 0, cfg);
  const auto b = generate_sample(tpl(), 0, cfg);
  for (int k = 0; k < a.views(); ++k) CHECK((a.images[k].array() == b.images[k].array()).all());
  CHECK((a.gt_vertices_canonical.array() == b.gt_vertices_canonical.array()).all());
  CHECK(a.target_view == b.target_view);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_sample(tpl(), seed, cfg);
    const double f = s.occlusion_fraction[s.target_view];
    CHECK(f >= 0.5 - 1e-6);
    CHECK(f <= 0.8 + 1e-6);
    bool clear = false;
    for (int k = 0; k < s.views(); ++k) {
      CHECK(s.images[k].minCoeff() >= 0.0f);
      CHECK(s.images[k].maxCoeff() <= 1.0f);
      if (k != s.target_view) {
        CHECK(s.occlusion_fraction[k] <= cfg.occ_other_max + 1e-6);
        clear = clear || s.occlusion_fraction[k] <= cfg.clear_view_max;
      }
    }
    CHECK(clear);
  }
}

TEST_CASE("mean target occlusion over 1000 samples sits at the range midpoint") {
  SynthConfig cfg = small_config();
  cfg.views = 2;
  double sum = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = generate_sample(tpl(), sample_seed(77, i), cfg);
    sum += s.occlusion_fraction[s.target_view];
  }
  CHECK(std::abs(sum / 1000 - 0.65) < 0.05);
}

TEST_CASE("dataset round-trip is bit-exact") {
  const auto samples = generate_dataset(tpl(), 3, 10, small_config());
  const auto dir = temp_dir("roundtrip");
  write_dataset(samples, dir, "train");
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& a = samples[i];
    const auto& b = back[i];
    CHECK(a.target_view == b.target_view);
    CHECK((a.gt_vertices_canonical.array() == b.gt_vertices_canonical.array()).all());
    CHECK((a.gt_joints3d_canonical.array() == b.gt_joints3d_canonical.array()).all());
    CHECK(a.cam.intrinsics.focal == b.cam.intrinsics.focal);
    for (int k = 0; k < a.views(); ++k) {
      CHECK((a.images[k].array() == b.images[k].array()).all());
      CHECK((a.gt_rotation[k].array() == b.gt_rotation[k].array()).all());
      CHECK((a.gt_joints2d[k].array() == b.gt_joints2d[k].array()).all());
      CHECK((a.cam.rotations[k].array() == b.cam.rotations[k].array()).all());
      CHECK((a.cam.translations[k].array() == b.cam.translations[k].array()).all());
      CHECK(a.occlusion_fraction[k] == b.occlusion_fraction[k]);
      REQUIRE(a.occluders[k].size() == b.occluders[k].size());
      for (std::size_t v = 0; v < a.occluders[k].size(); ++v) CHECK(a.occluders[k][v] == b.occluders[k][v]);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupted datasets raise distinct errors") {
  const auto samples = generate_dataset(tpl(), 3, 2, small_config());
  const auto dir = temp_dir("corrupt");
  write_dataset(samples, dir);
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  const nlohmann::json original = nlohmann::json::parse(in);
  in.close();
  auto write_manifest = [&](const nlohmann::json& j) { std::ofstream(manifest_path) << j.dump(); };

  {
    nlohmann::json j = original;
    j["tensor_index"][0]["offset"] = j["data_bytes"].get<std::int64_t>() + 64;
    write_manifest(j);
    CHECK_THROWS_AS(read_dataset(dir), TruncatedPayload);
  }
  {
    nlohmann::json j = original;
    j["tensor_index"][0]["shape"][1] = 99;
    write_manifest(j);
    CHECK_THROWS_AS(read_dataset(dir), ShapeMismatch);
  }
  {
    std::ofstream(manifest_path) << "{ not json";
    CHECK_THROWS_AS(read_dataset(dir), CorruptManifest);
  }
  write_manifest(original);
  fs::resize_file(dir / "data.bin", fs::file_size(dir / "data.bin") - 16);
  CHECK_THROWS_AS(read_dataset(dir), TruncatedPayload);
  fs::remove_all(dir);
}

TEST_CASE("payload is little-endian float32") {
  const auto samples = generate_dataset(tpl(), 5, 1, small_config());
  const auto dir = temp_dir("endian");
  write_dataset(samples, dir);
  const TensorContainer tc = TensorContainer::read(dir);
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  std::int64_t offset = -1;
  for (const auto& e : j["tensor_index"])
    if (e["name"] == "gt_vertices_canonical") offset = e["offset"].get<std::int64_t>();
  REQUIRE(offset >= 0);
  std::ifstream bin(dir / "data.bin", std::ios::binary);
  bin.seekg(offset);
  unsigned char b[4];
  bin.read(reinterpret_cast<char*>(b), 4);
  const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  CHECK(v == samples[0].gt_vertices_canonical(0, 0));
  fs::remove_all(dir);
}
