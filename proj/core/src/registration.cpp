#include "brachy/registration.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace brachy {

namespace {

constexpr double kRotationTolerance = 1e-9;
constexpr double kCollinearRatio = 1e-9;
constexpr std::uint32_t kLeafSize = 8;

}  // namespace

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
  t.translation = translation;
  return t;
}

RigidTransform RigidTransform::from_row_major(std::span<const double, 12> v) {
  RigidTransform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = v[r * 4 + c];
    t.translation[r] = v[r * 4 + 3];
  }
  return t;
}

std::array<double, 12> RigidTransform::to_row_major() const {
  std::array<double, 12> out{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out[r * 4 + c] = rotation(r, c);
    out[r * 4 + 3] = translation[r];
  }
  return out;
}

void RigidTransform::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) fail(ErrorCode::Validation, "transform: non-finite entry");
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > kRotationTolerance) {
    fail(ErrorCode::Validation, "transform: rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > kRotationTolerance) {
    fail(ErrorCode::Validation, "transform: rotation is not proper (det != +1)");
  }
}

PointCloud apply_transform(const RigidTransform& t, std::span<const Vec3> points) {
  PointCloud out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = nearest_rotation(a.rotation * b.rotation);
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = nearest_rotation(t.rotation.transpose());
  out.translation = -(t.rotation.transpose() * t.translation);
  return out;
}

double rotation_difference_deg(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

// ---------------------------------------------------------------------------
// Landmarks

void LandmarkPairs::validate() const {
  if (model_points.size() != image_points.size()) {
    fail(ErrorCode::InvalidArgument, "landmarks: model and image point counts differ");
  }
  if (model_points.size() < 3) fail(ErrorCode::InvalidArgument, "landmarks: at least three pairs are required");
  for (std::size_t i = 0; i < model_points.size(); ++i) {
    if (!model_points[i].allFinite() || !image_points[i].allFinite()) {
      fail(ErrorCode::InvalidArgument, "landmarks: non-finite coordinate in pair " + std::to_string(i));
    }
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& p : model_points) mean += p;
  mean /= static_cast<double>(model_points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : model_points) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 ev = eig.eigenvalues();  // ascending
  // Three points always span a plane at most, so the middle eigenvalue is
  // the one that vanishes for a collinear configuration.
  if (!(ev[2] > 0.0) || ev[1] / ev[2] <= kCollinearRatio) {
    fail(ErrorCode::Degenerate, "landmarks: model points are collinear or coincident");
  }
}

RigidTransform fit_rigid(std::span<const Vec3> model, std::span<const Vec3> target) {
  if (model.size() != target.size() || model.empty()) fail(ErrorCode::InvalidArgument, "rigid fit: point count mismatch");
  const double n = static_cast<double>(model.size());
  Vec3 mc = Vec3::Zero(), tc = Vec3::Zero();
  for (std::size_t i = 0; i < model.size(); ++i) {
    mc += model[i];
    tc += target[i];
  }
  mc /= n;
  tc /= n;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < model.size(); ++i) h += (model[i] - mc) * (target[i] - tc).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = tc - t.rotation * mc;
  return t;
}

RigidTransform fit_landmarks(const LandmarkPairs& pairs) {
  pairs.validate();
  return fit_rigid(pairs.model_points, pairs.image_points);
}

double rms_residual(const RigidTransform& t, std::span<const Vec3> model, std::span<const Vec3> target) {
  if (model.size() != target.size() || model.empty()) fail(ErrorCode::InvalidArgument, "residual: point count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) sum += (t.apply(model[i]) - target[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(model.size()));
}

// ---------------------------------------------------------------------------
// k-d tree

KdTree::KdTree(PointCloud points) : points_(std::move(points)) {
  if (points_.empty()) fail(ErrorCode::InvalidArgument, "k-d tree needs at least one point");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (!(hi[axis] > lo[axis])) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
                     return a < b;
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t node_id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d = (points_[idx] - q).squaredNorm();
      if (d < best.distance_sq || (d == best.distance_sq && idx < best.index)) best = {idx, d};
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, best);
  // Points equal to the split value may sit on either side, hence <=.
  if (diff * diff <= best.distance_sq) search(far, q, best);
}

KdTree::Hit KdTree::nearest(const Vec3& query) const {
  Hit best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

// ---------------------------------------------------------------------------
// ICP

void IcpConfig::validate() const {
  if (max_iterations < 1) fail(ErrorCode::InvalidArgument, "icp: max_iterations must be at least 1");
  if (!(rms_change_tol > 0.0)) fail(ErrorCode::InvalidArgument, "icp: rms_change_tol must be positive");
  if (!(outlier_trim_fraction >= 0.0 && outlier_trim_fraction < 1.0)) {
    fail(ErrorCode::InvalidArgument, "icp: outlier_trim_fraction must be in [0, 1)");
  }
}

IcpReport icp_refine(std::span<const Vec3> model_cloud, std::span<const Vec3> target_cloud, const RigidTransform& init,
                     const IcpConfig& cfg) {
  if (model_cloud.empty() || target_cloud.empty()) fail(ErrorCode::InvalidArgument, "icp: empty point cloud");
  cfg.validate();
  init.validate();

  const KdTree tree(PointCloud(target_cloud.begin(), target_cloud.end()));
  const std::size_t n = model_cloud.size();
  const std::size_t keep = n - static_cast<std::size_t>(std::floor(cfg.outlier_trim_fraction * static_cast<double>(n)));

  IcpReport report;
  report.transform = init;
  std::vector<KdTree::Hit> hits(n);
  std::vector<std::size_t> order(n);
  PointCloud src, dst;
  src.reserve(keep);
  dst.reserve(keep);

  auto correspond = [&] {
    for (std::size_t i = 0; i < n; ++i) hits[i] = tree.nearest(report.transform.apply(model_cloud[i]));

    std::iota(order.begin(), order.end(), std::size_t{0});
    if (keep < n) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return hits[a].distance_sq < hits[b].distance_sq; });
    }
    double sum = 0.0;
    src.clear();
    dst.clear();
    for (std::size_t r = 0; r < keep; ++r) {
      const std::size_t i = order[r];
      sum += hits[i].distance_sq;
      src.push_back(model_cloud[i]);
      dst.push_back(tree.point(hits[i].index));
    }
    return std::sqrt(sum / static_cast<double>(keep));
  };

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const double rms = correspond();
    report.rms_history.push_back(rms);
    report.iterations_used = iter + 1;
    report.final_rms = rms;

    const bool stalled = report.rms_history.size() >= 2 &&
                         report.rms_history[report.rms_history.size() - 2] - rms < cfg.rms_change_tol;
    if (rms == 0.0 || stalled) {
      report.converged = true;
      break;
    }
    report.transform = fit_rigid(src, dst);
  }
  if (!report.converged) {
    // Iteration budget spent; score the last fit so final_rms matches the transform.
    report.final_rms = correspond();
    report.rms_history.push_back(report.final_rms);
  }
  return report;
}

}  // namespace brachy
