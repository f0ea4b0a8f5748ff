#pragma once

#include "brachy/archive.hpp"
#include "brachy/dosimetry.hpp"
#include "brachy/planning.hpp"
#include "brachy/registration.hpp"
#include "brachy/replan.hpp"

#include <json.hpp>

#include <string>

namespace brachy {

using Json = nlohmann::json;

inline constexpr int kJsonSchema = 1;

Json to_json(const Vec3& v);
Vec3 vec3_from_json(const Json& j);

/// {"matrix": [12 numbers, row-major 3x4]}
Json to_json(const RigidTransform& t);
/// Accepts {"matrix": [...]} or a bare 12-number array. The rotation must be proper.
RigidTransform transform_from_json(const Json& j);

/// {"model_points": [[x,y,z]...], "image_points": [...]}
LandmarkPairs landmarks_from_json(const Json& j);
Json to_json(const LandmarkPairs& p);

IcpConfig icp_config_from_json(const Json& j);
Json to_json(const IcpReport& r);

Json to_json(const TemplateSpec& s);
TemplateSpec template_spec_from_json(const Json& j);
/// Device summary: id, spec and hole table.
Json to_json(const TemplateModel& m);

Json to_json(const PlanConfig& c);
PlanConfig plan_config_from_json(const Json& j);

/// {"schema", "device_id", "device", "registration", "stage", "config", "needles": [...]}
Json to_json(const NeedlePlan& plan);
/// Rebuilds the device from the embedded spec.
NeedlePlan plan_from_json(const Json& j);

NeedleEdit needle_edit_from_json(const Json& j);

Json to_json(const TrajectorySegment& s);
Json to_json(const FeasibilityReport& r);

Json to_json(const DoseMetric& m);
Json to_json(const VerdictRow& r);
Json to_json(std::span<const VerdictRow> rows);
Json to_json(const DvhCurve& c);
Json to_json(const StructureMetrics& m);

Json to_json(const CourseSpec& c);
CourseSpec course_from_json(const Json& j);

Json to_json(const ArtifactRef& r);
ArtifactRef artifact_ref_from_json(const Json& j);
Json to_json(const FollowupOverlay& o);

/// Stable text form: two-space indent, trailing newline.
std::string dump(const Json& j);

}  // namespace brachy
