#include "brachy/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace brachy {

namespace {

bool in_ellipsoid(const Vec3& p, const Vec3& c, const Vec3& r) {
  const Vec3 d = (p - c).cwiseQuotient(r);
  return d.squaredNorm() <= 1.0;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
  if (spec.dims < 8) fail(ErrorCode::InvalidArgument, "phantom needs at least 8 voxels per axis");
  if (!(spec.spacing_mm > 0.0)) fail(ErrorCode::InvalidArgument, "phantom spacing must be positive");
  spec.registration.validate();

  Phantom ph;
  ph.device = make_template(spec.device);
  ph.registration = spec.registration;

  GridGeometry g;
  g.dims = {spec.dims, spec.dims, spec.dims};
  g.spacing = Vec3::Constant(spec.spacing_mm);
  const double half = 0.5 * (spec.dims - 1) * spec.spacing_mm;
  g.origin = Vec3(-half, -half, -20.0);

  ph.labels = LabelMap::empty_like(g);
  LabelMap& L = ph.labels;
  const std::uint8_t c_template = spec.device_structure ? L.ensure_code(StructureKind::other("TEMPLATE")) : 0;
  const std::uint8_t c_rectum = L.ensure_code(StructureTag::OAR_RECTUM_SIGMOID);
  const std::uint8_t c_bladder = L.ensure_code(StructureTag::OAR_BLADDER);
  const std::uint8_t c_bowel = L.ensure_code(StructureTag::OAR_SMALL_BOWEL);
  const std::uint8_t c_hr = L.ensure_code(StructureTag::HR_CTV);
  const std::uint8_t c_gtv = L.ensure_code(StructureTag::GTV);

  const Vec3 tc = spec.target_center;
  const Vec3 bladder_c = tc + Vec3(0.0, spec.target_radius_mm + 22.0, -5.0);
  const Vec3 bladder_r(30.0, 14.0, 22.0);
  const Vec3 bowel_c = tc + Vec3(0.0, 0.0, spec.target_radius_mm + 35.0);
  const double bowel_r = 15.0;
  const double rect_y = tc.y() - spec.rectum_offset_mm;
  const RigidTransform to_device = invert(spec.registration);
  const double plate_x = 0.5 * (spec.device.cols - 1) * spec.device.pitch_mm + spec.device.margin_mm;
  const double plate_y = 0.5 * (spec.device.rows - 1) * spec.device.pitch_mm + spec.device.margin_mm;

  ph.t2.grid = g;
  ph.t2.dtype = VoxelType::Int16;
  ph.t2.modality = "MR-T2";
  ph.t2.voxels.assign(g.voxel_count(), 0.0f);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sd);

  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 p = g.voxel_center(i, j, k);
        std::uint8_t code = 0;
        double intensity = 120.0;
        const Vec3 d = to_device.apply(p);
        if (spec.device_structure && d.z() >= -spec.device.thickness_mm && d.z() <= 0.0 &&
            std::abs(d.x()) <= plate_x && std::abs(d.y()) <= plate_y) {
          code = c_template;
          intensity = 30.0;
        }
        const double ry = p.y() - rect_y;
        if (p.x() * p.x() + ry * ry <= spec.rectum_radius_mm * spec.rectum_radius_mm && p.z() >= tc.z() - 45.0 &&
            p.z() <= tc.z() + 45.0) {
          code = c_rectum;
          intensity = 180.0;
        }
        if (in_ellipsoid(p, bladder_c, bladder_r)) {
          code = c_bladder;
          intensity = 600.0;
        }
        if ((p - bowel_c).norm() <= bowel_r) {
          code = c_bowel;
          intensity = 220.0;
        }
        if ((p - tc).norm() <= spec.target_radius_mm) {
          code = c_hr;
          intensity = 260.0;
        }
        if ((p - tc).norm() <= spec.gtv_radius_mm) {
          code = c_gtv;
          intensity = 330.0;
        }
        const std::size_t idx = g.index(i, j, k);
        L.voxels[idx] = code;
        ph.t2.voxels[idx] = static_cast<float>(std::clamp(std::round(intensity + noise(rng)), 0.0, 32767.0));
      }
    }
  }

  const auto& holes = ph.device.holes;
  const Hole& a = holes.front();
  const Hole& b = ph.device.hole(hole_label(0, spec.device.cols - 1));
  const Hole& c = holes.back();
  for (const Hole* h : {&a, &b, &c}) {
    ph.landmarks.model_points.push_back(h->position);
    ph.landmarks.image_points.push_back(spec.registration.apply(h->position));
  }
  if (spec.device.rows == 1 || spec.device.cols == 1) {
    // a single row or column of holes is collinear; use a plate corner instead
    const Vec3 corner(plate_x, plate_y, -spec.device.thickness_mm);
    ph.landmarks.model_points[2] = corner;
    ph.landmarks.image_points[2] = spec.registration.apply(corner);
  }
  return ph;
}

NeedlePlan reference_plan(const Phantom& phantom, double dwell_step_mm) {
  auto device = std::make_shared<const TemplateModel>(phantom.device);
  const FeasibilityReport report = evaluate_feasibility(*device, phantom.registration, phantom.labels, {});
  PlanConfig cfg;
  cfg.default_dwell_step_mm = dwell_step_mm;
  double shallowest = cfg.max_depth_mm;
  for (const auto& row : report.rows) {
    if (row.feasible) shallowest = std::min(shallowest, *row.min_depth_to_target);
  }
  if (report.feasible_holes == 0) fail(ErrorCode::State, "phantom has no feasible hole");
  cfg.retract_margin_mm = std::floor(shallowest);
  NeedlePlan plan = NeedlePlan::for_device(device, phantom.registration, cfg);
  for (const auto& row : report.rows) {
    if (!row.feasible) continue;
    const double depth = std::max(*row.min_depth_to_target, row.max_useful_depth - 1.0);
    plan = edit_needle(plan, row.hole_id, NeedleEdit::set_depth(std::round(depth)));
    plan = edit_needle(plan, row.hole_id, NeedleEdit::activate());
  }
  return plan;
}

}  // namespace brachy
