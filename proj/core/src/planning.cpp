#include "brachy/planning.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace brachy {

namespace {

constexpr double kDwellEpsilon = 1e-9;

const std::array<StructureTag, 3> kOarTags{StructureTag::OAR_BLADDER, StructureTag::OAR_RECTUM_SIGMOID,
                                           StructureTag::OAR_SMALL_BOWEL};

}  // namespace

std::string_view to_string(PlanStage stage) {
  switch (stage) {
    case PlanStage::PRE: return "PRE";
    case PlanStage::INTRA: return "INTRA";
    case PlanStage::POST: return "POST";
  }
  return "?";
}

PlanStage parse_plan_stage(std::string_view text) {
  if (text == "PRE") return PlanStage::PRE;
  if (text == "INTRA") return PlanStage::INTRA;
  if (text == "POST") return PlanStage::POST;
  fail(ErrorCode::InvalidArgument, "unknown plan stage '" + std::string(text) + "'");
}

NeedlePlan NeedlePlan::for_device(std::shared_ptr<const TemplateModel> device, const RigidTransform& registration,
                                  const PlanConfig& config) {
  if (!device) fail(ErrorCode::InvalidArgument, "plan needs a device");
  NeedlePlan plan;
  plan.device = std::move(device);
  plan.registration = registration;
  plan.config = config;
  for (const auto& h : plan.device->holes) plan.needles.push_back({h.id, 0.0, false, config.default_dwell_step_mm});
  plan.validate();
  return plan;
}

const Needle* NeedlePlan::find(std::string_view hole_id) const {
  for (const auto& n : needles) {
    if (n.hole_id == hole_id) return &n;
  }
  return nullptr;
}

const Needle& NeedlePlan::needle(std::string_view hole_id) const {
  const Needle* n = find(hole_id);
  if (!n) fail(ErrorCode::NotFound, "no needle for hole '" + std::string(hole_id) + "'");
  return *n;
}

std::vector<const Needle*> NeedlePlan::active_needles() const {
  std::vector<const Needle*> out;
  for (const auto& n : needles) {
    if (n.active) out.push_back(&n);
  }
  return out;
}

void NeedlePlan::validate() const {
  if (!device) fail(ErrorCode::Validation, "plan: no device");
  registration.validate();
  std::set<std::string> seen;
  for (const auto& n : needles) {
    if (!seen.insert(n.hole_id).second) fail(ErrorCode::Validation, "plan: duplicate hole " + n.hole_id);
    if (!device->find_hole(n.hole_id)) fail(ErrorCode::Validation, "plan: hole " + n.hole_id + " not on device");
    if (!(n.depth_mm >= 0.0 && n.depth_mm <= config.max_depth_mm)) {
      fail(ErrorCode::Range, "plan: depth of " + n.hole_id + " outside [0, max_depth]");
    }
    if (!(n.dwell_step_mm > 0.0)) fail(ErrorCode::Range, "plan: dwell step of " + n.hole_id + " must be positive");
  }
}

TrajectorySegment hole_trajectory(const TemplateModel& device, const RigidTransform& registration,
                                  std::string_view hole_id, double depth_mm) {
  const Hole& h = device.hole(std::string(hole_id));
  TrajectorySegment seg;
  seg.entry = registration.apply(h.position);
  seg.direction = (registration.rotation * h.direction).normalized();
  seg.depth = depth_mm;
  seg.tip = seg.entry + depth_mm * seg.direction;
  return seg;
}

TrajectorySegment trajectory(const NeedlePlan& plan, std::string_view hole_id) {
  if (!plan.device->find_hole(std::string(hole_id))) {
    fail(ErrorCode::NotFound, "unknown template hole '" + std::string(hole_id) + "'");
  }
  const Needle& n = plan.needle(hole_id);
  if (!n.active) fail(ErrorCode::State, "needle " + n.hole_id + " is not active");
  return hole_trajectory(*plan.device, plan.registration, hole_id, n.depth_mm);
}

std::vector<DepthInterval> ray_structure_intersections(const TrajectorySegment& seg, const LabelMap& labels,
                                                       const StructureKind& kind, double step_mm) {
  const GridGeometry& g = labels.grid;
  if (step_mm <= 0.0) step_mm = g.spacing.minCoeff() / 2.0;
  std::array<bool, 256> member{};
  for (const auto& [code, k] : labels.legend) member[code] = structure_contains(kind, k);

  auto inside = [&](double t) {
    const Vec3 c = g.continuous_index(seg.entry + t * seg.direction);
    std::array<int, 3> n{};
    for (int a = 0; a < 3; ++a) {
      const double r = std::floor(c[a] + 0.5);
      if (!(r >= 0.0) || r > g.dims[a] - 1) return false;
      n[a] = static_cast<int>(r);
    }
    return member[labels.at(n[0], n[1], n[2])];
  };

  std::vector<double> depths;
  const auto count = static_cast<long>(std::floor(seg.depth / step_mm));
  for (long s = 0; s <= count; ++s) depths.push_back(static_cast<double>(s) * step_mm);
  if (depths.back() < seg.depth) depths.push_back(seg.depth);

  std::vector<DepthInterval> out;
  bool in_run = false;
  double prev = 0.0;
  for (double t : depths) {
    const bool in = inside(t);
    if (in && !in_run) {
      out.push_back({t == 0.0 ? 0.0 : 0.5 * (prev + t), t});
      in_run = true;
    } else if (!in && in_run) {
      out.back().exit = 0.5 * (prev + t);
      in_run = false;
    }
    if (in) out.back().exit = t;
    prev = t;
  }
  return out;
}

FeasibilityReport evaluate_feasibility(const TemplateModel& device, const RigidTransform& registration,
                                       const LabelMap& labels, const DepthRange& range) {
  const StructureKind target(StructureTag::HR_CTV);
  const auto target_mask = labels.mask(target);
  if (!labels.has(target) || std::none_of(target_mask.begin(), target_mask.end(), [](auto v) { return v != 0; })) {
    fail(ErrorCode::NotFound, "feasibility: labels contain no HR_CTV voxels");
  }
  if (!(range.min_mm >= 0.0) || !(range.max_mm > range.min_mm)) {
    fail(ErrorCode::InvalidArgument, "feasibility: depth range must satisfy 0 <= min < max");
  }

  FeasibilityReport report;
  report.device_id = device.id;
  for (const auto& hole : device.holes) {
    const TrajectorySegment seg = hole_trajectory(device, registration, hole.id, range.max_mm);
    FeasibilityRow row;
    row.hole_id = hole.id;

    for (const auto& iv : ray_structure_intersections(seg, labels, target)) {
      if (iv.exit < range.min_mm) continue;
      const double enter = std::max(iv.enter, range.min_mm);
      if (!row.min_depth_to_target) row.min_depth_to_target = enter;
      row.max_useful_depth = iv.exit;
      row.target_path_length += iv.exit - enter;
    }

    for (auto tag : kOarTags) {
      const StructureKind oar(tag);
      if (!labels.has(oar)) continue;
      for (const auto& iv : ray_structure_intersections(seg, labels, oar)) {
        if (row.min_depth_to_target && iv.enter >= row.max_useful_depth) break;
        row.oar_hits.push_back({oar, iv.enter});
        break;
      }
    }

    row.feasible = row.min_depth_to_target.has_value() &&
                   std::none_of(row.oar_hits.begin(), row.oar_hits.end(),
                                [&](const OarHit& h) { return h.depth_mm < *row.min_depth_to_target; });
    if (row.feasible) ++report.feasible_holes;
    report.rows.push_back(std::move(row));
  }
  return report;
}

PointCloud dwell_positions(const NeedlePlan& plan, std::string_view hole_id) {
  const TrajectorySegment seg = trajectory(plan, hole_id);
  const Needle& n = plan.needle(hole_id);
  const double usable = seg.depth - plan.config.retract_margin_mm;
  const long count = usable < 0.0 ? 1 : static_cast<long>(std::floor(usable / n.dwell_step_mm + kDwellEpsilon)) + 1;
  PointCloud out;
  out.reserve(static_cast<std::size_t>(count));
  for (long s = 0; s < count; ++s) out.push_back(seg.tip - (static_cast<double>(s) * n.dwell_step_mm) * seg.direction);
  return out;
}

NeedlePlan edit_needle(const NeedlePlan& plan, std::string_view hole_id, const NeedleEdit& edit) {
  if (!plan.device->find_hole(std::string(hole_id))) {
    fail(ErrorCode::NotFound, "unknown template hole '" + std::string(hole_id) + "'");
  }
  NeedlePlan out = plan;
  auto it = std::find_if(out.needles.begin(), out.needles.end(), [&](const Needle& n) { return n.hole_id == hole_id; });
  if (it == out.needles.end()) {
    out.needles.push_back({std::string(hole_id), 0.0, false, plan.config.default_dwell_step_mm});
    it = std::prev(out.needles.end());
  }
  switch (edit.action) {
    case NeedleEdit::Action::SetDepth:
      if (!(edit.value >= 0.0 && edit.value <= plan.config.max_depth_mm)) {
        fail(ErrorCode::Range, "depth " + std::to_string(edit.value) + " mm outside [0, " +
                                   std::to_string(plan.config.max_depth_mm) + "]");
      }
      it->depth_mm = edit.value;
      break;
    case NeedleEdit::Action::Activate: it->active = true; break;
    case NeedleEdit::Action::Deactivate: it->active = false; break;
    case NeedleEdit::Action::SetDwellStep:
      if (!(edit.value > 0.0) || !std::isfinite(edit.value)) fail(ErrorCode::Range, "dwell step must be positive");
      it->dwell_step_mm = edit.value;
      break;
  }
  out.validate();
  return out;
}

}  // namespace brachy
