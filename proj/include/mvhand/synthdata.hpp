#pragma once

// Procedural multi-view hand dataset: pinhole cameras around the hand,
// a supersampled z-buffer rasterizer producing a soft silhouette and an
// inverse-depth channel, convex-polygon occluders, and persistence in the
// manifest + binary container.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvhand/hand_model.hpp"

namespace mvhand {

inline constexpr int kImageChannels = 2;
inline constexpr int kMaxOccluderVertices = 8;

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Intrinsics {
  double focal = 0.0;  // pixels
  double cx = 0.0;
  double cy = 0.0;
  double near = 250.0;  // inverse depth is normalized over [near, far] mm
  double far = 550.0;
};

/// A camera point is rotations[k] * v + translations[k] for a canonical
/// vertex v; the translation carries the hand placement in front of view k.
struct CameraRig {
  std::vector<Mat3> rotations;
  std::vector<Vec3> translations;
  Intrinsics intrinsics;
  int image_size = 64;

  int views() const { return static_cast<int>(rotations.size()); }
};

/// Convex polygon in pixel coordinates (x right, y down, pixel p spans [p, p+1)).
using Polygon = std::vector<Eigen::Vector2d>;

struct RenderedView {
  Matrix<float> image;     // kImageChannels x (H*W), pixel index y*W + x
  Matrix<double> joints2d;  // J x 2 normalized by the image size
  double occlusion_fraction = 0.0;
  int hand_samples = 0;
};

struct RenderSettings {
  int supersample = 3;  // per axis
};

/// Renders an already posed canonical mesh.
RenderedView render_mesh(const Matrix<double>& vertices, const MatrixXi& faces, const Matrix<double>& joints,
                         const Mat3& rotation, const Vec3& translation, const Intrinsics& intr, int image_size,
                         const std::vector<Polygon>& occluders, const RenderSettings& settings = {});

RenderedView render_view(const HandTemplate& tpl, const HandPose& pose, const Mat3& rotation,
                         const Vec3& translation, const Intrinsics& intr, int image_size,
                         const std::vector<Polygon>& occluders, const RenderSettings& settings = {});

/// Pinhole projection normalized to [0, 1] image units.
Eigen::Vector2d project_normalized(const Vec3& camera_point, const Intrinsics& intr, int image_size);

bool inside_convex(const Polygon& poly, const Eigen::Vector2d& p);

/// The part of the image rectangle where n . p >= offset.
Polygon clip_image_halfplane(const Eigen::Vector2d& n, double offset, int image_size);

struct SynthConfig {
  int views = 4;
  int image_size = 64;
  double occ_target_min = 0.0;
  double occ_target_max = 0.0;  // 0 disables the target-view occluder
  double occ_other_max = 0.3;
  double clear_view_max = 0.1;
  double other_occluder_prob = 0.5;
  double noise_sigma = 0.02;
  double pose_amount = 1.0;
  double max_global_angle = M_PI / 2;
  double max_roll = 0.25;
  double camera_distance = 400.0;
  int max_retries = 64;
};

struct MultiViewSample {
  std::vector<Matrix<float>> images;  // N x [kImageChannels x (H*W)]
  CameraRig cam;
  Matrix<float> gt_vertices_canonical;       // V x 3
  Matrix<float> gt_joints3d_canonical;       // J x 3
  std::vector<Matrix<float>> gt_rotation;    // N x [3 x 3]
  std::vector<Matrix<float>> gt_joints2d;    // N x [J x 2]
  std::vector<float> occlusion_fraction;     // N
  std::vector<Polygon> occluders;            // N, empty polygon = none
  int target_view = 0;

  int views() const { return static_cast<int>(images.size()); }
};

MultiViewSample generate_sample(const HandTemplate& tpl, std::uint64_t seed, const SynthConfig& config);

/// Seed of sample `index` in a dataset generated from `base_seed`.
std::uint64_t sample_seed(std::uint64_t base_seed, int index);

std::vector<MultiViewSample> generate_dataset(const HandTemplate& tpl, std::uint64_t base_seed, int count,
                                              const SynthConfig& config);

void write_dataset(const std::vector<MultiViewSample>& samples, const std::filesystem::path& dir,
                   const std::string& split = "train");
std::vector<MultiViewSample> read_dataset(const std::filesystem::path& dir);

/// Re-renders view k from the stored ground truth and occluders and returns
/// its occlusion fraction.
double recompute_occlusion(const HandTemplate& tpl, const MultiViewSample& s, int view);

}  // namespace mvhand
