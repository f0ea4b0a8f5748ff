#pragma once

#include "brachy/common.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace brachy {

/// Proper rigid motion x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  /// Rotation of `angle_rad` about `axis` (normalized internally), then translation.
  static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation = Vec3::Zero());
  /// Row-major 3x4 [R | t].
  static RigidTransform from_row_major(std::span<const double, 12> values);
  std::array<double, 12> to_row_major() const;

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// Throws ErrorCode::Validation unless R is orthonormal with det +1 (1e-9).
  void validate() const;
};

PointCloud apply_transform(const RigidTransform& t, std::span<const Vec3> points);
/// `a` applied after `b`.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);
/// Nearest proper rotation (polar decomposition with determinant correction).
Mat3 nearest_rotation(const Mat3& m);

/// Rotation angle of `a^-1 b`, in degrees.
double rotation_difference_deg(const Mat3& a, const Mat3& b);

struct LandmarkPairs {
  PointCloud model_points;
  PointCloud image_points;

  void validate() const;
};

/// Least-squares rigid fit of image_points ≈ T(model_points) via SVD of the
/// cross-covariance, with the determinant sign forced to +1.
RigidTransform fit_landmarks(const LandmarkPairs& pairs);

/// Same fit without the landmark preconditions; the caller guarantees
/// a well-posed configuration.
RigidTransform fit_rigid(std::span<const Vec3> model, std::span<const Vec3> target);

double rms_residual(const RigidTransform& t, std::span<const Vec3> model, std::span<const Vec3> target);

/// Static 3-d tree for nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(PointCloud points);

  struct Hit {
    std::size_t index;
    double distance_sq;
  };
  /// Nearest stored point; ties go to the lowest index.
  Hit nearest(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, Hit& best) const;

  PointCloud points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

struct IcpConfig {
  int max_iterations = 100;
  double rms_change_tol = 1e-4;  // mm
  /// Fraction of worst correspondences dropped before each fit; 0 disables trimming.
  double outlier_trim_fraction = 0.0;

  void validate() const;
};

struct IcpReport {
  RigidTransform transform;
  int iterations_used = 0;
  double final_rms = 0.0;
  bool converged = false;
  /// Correspondence RMS at the start of each iteration.
  std::vector<double> rms_history;
};

/// Point-to-point ICP (nearest-neighbor correspondence, closed-form refit).
IcpReport icp_refine(std::span<const Vec3> model_cloud, std::span<const Vec3> target_cloud, const RigidTransform& init,
                     const IcpConfig& cfg = {});

}  // namespace brachy
