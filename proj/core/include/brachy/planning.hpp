#pragma once

#include "brachy/mesh.hpp"
#include "brachy/registration.hpp"
#include "brachy/volume.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace brachy {

enum class PlanStage { PRE, INTRA, POST };

std::string_view to_string(PlanStage stage);
PlanStage parse_plan_stage(std::string_view text);

struct PlanConfig {
  double max_depth_mm = 200.0;
  double retract_margin_mm = 0.0;
  double default_dwell_step_mm = 5.0;
};

/// One row of the planning sheet. Depth is the insertion depth measured from
/// the template face.
struct Needle {
  std::string hole_id;
  double depth_mm = 0.0;
  bool active = false;
  double dwell_step_mm = 5.0;

  bool operator==(const Needle&) const = default;
};

struct NeedlePlan {
  std::vector<Needle> needles;
  RigidTransform registration;  // device -> image
  std::shared_ptr<const TemplateModel> device;
  PlanStage stage = PlanStage::PRE;
  PlanConfig config;

  /// One inactive needle per template hole.
  static NeedlePlan for_device(std::shared_ptr<const TemplateModel> device, const RigidTransform& registration,
                               const PlanConfig& config = {});

  const Needle* find(std::string_view hole_id) const;
  const Needle& needle(std::string_view hole_id) const;
  std::vector<const Needle*> active_needles() const;
  void validate() const;
};

struct TrajectorySegment {
  Vec3 entry = Vec3::Zero();
  Vec3 tip = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double depth = 0.0;
};

/// Straight path from the registered hole along the registered face normal.
TrajectorySegment hole_trajectory(const TemplateModel& device, const RigidTransform& registration,
                                  std::string_view hole_id, double depth_mm);
TrajectorySegment trajectory(const NeedlePlan& plan, std::string_view hole_id);

struct DepthInterval {
  double enter = 0.0;
  double exit = 0.0;
};

/// Samples the segment at `step_mm` (default: half the smallest spacing) and
/// reports maximal runs of samples whose nearest voxel belongs to `kind`.
/// Run boundaries are placed halfway between the last outside sample and the
/// first inside one, clipped to [0, depth].
std::vector<DepthInterval> ray_structure_intersections(const TrajectorySegment& seg, const LabelMap& labels,
                                                       const StructureKind& kind, double step_mm = 0.0);

struct OarHit {
  StructureKind kind;
  double depth_mm = 0.0;
};

struct FeasibilityRow {
  std::string hole_id;
  std::optional<double> min_depth_to_target;
  double max_useful_depth = 0.0;
  double target_path_length = 0.0;
  std::vector<OarHit> oar_hits;
  bool feasible = false;
};

struct FeasibilityReport {
  std::string device_id;
  std::vector<FeasibilityRow> rows;
  /// Holes reaching the HR-CTV with no OAR transit before target entry.
  int feasible_holes = 0;
};

struct DepthRange {
  double min_mm = 0.0;
  double max_mm = 200.0;
};

FeasibilityReport evaluate_feasibility(const TemplateModel& device, const RigidTransform& registration,
                                       const LabelMap& labels, const DepthRange& range);

/// Tip first, then every dwell step back toward the entry while the offset
/// stays within depth - retract margin.
PointCloud dwell_positions(const NeedlePlan& plan, std::string_view hole_id);

struct NeedleEdit {
  enum class Action { SetDepth, Activate, Deactivate, SetDwellStep };
  Action action = Action::SetDepth;
  double value = 0.0;

  static NeedleEdit set_depth(double mm) { return {Action::SetDepth, mm}; }
  static NeedleEdit activate() { return {Action::Activate, 0.0}; }
  static NeedleEdit deactivate() { return {Action::Deactivate, 0.0}; }
  static NeedleEdit set_dwell_step(double mm) { return {Action::SetDwellStep, mm}; }
};

/// Returns a copy of `plan` with one needle edited.
NeedlePlan edit_needle(const NeedlePlan& plan, std::string_view hole_id, const NeedleEdit& edit);

}  // namespace brachy
