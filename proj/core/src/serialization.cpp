#include "brachy/serialization.hpp"

#include <cmath>

namespace brachy {

namespace {

const Json& field(const Json& j, const char* key) {
  if (!j.is_object()) fail(ErrorCode::Parse, std::string("expected an object holding '") + key + "'");
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorCode::Parse, std::string("missing field '") + key + "'");
  return *it;
}

double number(const Json& j, const char* what) {
  if (!j.is_number()) fail(ErrorCode::Parse, std::string("'") + what + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(ErrorCode::Parse, std::string("'") + what + "' must be finite");
  return v;
}

template <typename T>
T value_or(const Json& j, const char* key, T fallback) {
  if (!j.is_object()) return fallback;
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    fail(ErrorCode::Parse, std::string("field '") + key + "' has the wrong type");
  }
}

std::string string_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_string()) fail(ErrorCode::Parse, std::string("'") + key + "' must be a string");
  return v.get<std::string>();
}

PointCloud points_from_json(const Json& j, const char* what) {
  if (!j.is_array()) fail(ErrorCode::Parse, std::string("'") + what + "' must be an array of points");
  PointCloud out;
  for (const auto& p : j) out.push_back(vec3_from_json(p));
  return out;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::Parse, "a point is an array of 3 numbers");
  return {number(j[0], "x"), number(j[1], "y"), number(j[2], "z")};
}

Json to_json(const RigidTransform& t) {
  const auto m = t.to_row_major();
  return {{"matrix", Json(std::vector<double>(m.begin(), m.end()))}};
}

RigidTransform transform_from_json(const Json& j) {
  const Json& m = j.is_array() ? j : field(j, "matrix");
  if (!m.is_array() || m.size() != 12) fail(ErrorCode::Parse, "a transform has 12 numbers (row-major 3x4)");
  std::array<double, 12> v{};
  for (std::size_t i = 0; i < 12; ++i) v[i] = number(m[i], "matrix");
  RigidTransform t = RigidTransform::from_row_major(v);
  t.validate();
  return t;
}

LandmarkPairs landmarks_from_json(const Json& j) {
  LandmarkPairs p;
  p.model_points = points_from_json(field(j, "model_points"), "model_points");
  p.image_points = points_from_json(field(j, "image_points"), "image_points");
  return p;
}

Json to_json(const LandmarkPairs& p) {
  Json m = Json::array(), i = Json::array();
  for (const auto& v : p.model_points) m.push_back(to_json(v));
  for (const auto& v : p.image_points) i.push_back(to_json(v));
  return {{"model_points", m}, {"image_points", i}};
}

IcpConfig icp_config_from_json(const Json& j) {
  IcpConfig c;
  c.max_iterations = value_or(j, "max_iterations", c.max_iterations);
  c.rms_change_tol = value_or(j, "rms_change_tol", c.rms_change_tol);
  c.outlier_trim_fraction = value_or(j, "outlier_trim_fraction", c.outlier_trim_fraction);
  c.validate();
  return c;
}

Json to_json(const IcpReport& r) {
  return {{"transform", to_json(r.transform)},
          {"iterations_used", r.iterations_used},
          {"final_rms", r.final_rms},
          {"converged", r.converged},
          {"rms_history", r.rms_history}};
}

Json to_json(const TemplateSpec& s) {
  return {{"id", s.id},
          {"rows", s.rows},
          {"cols", s.cols},
          {"pitch_mm", s.pitch_mm},
          {"margin_mm", s.margin_mm},
          {"thickness_mm", s.thickness_mm},
          {"hole_radius_mm", s.hole_radius_mm},
          {"ring_segments", s.ring_segments}};
}

TemplateSpec template_spec_from_json(const Json& j) {
  TemplateSpec s;
  s.id = value_or(j, "id", s.id);
  s.rows = value_or(j, "rows", s.rows);
  s.cols = value_or(j, "cols", s.cols);
  s.pitch_mm = value_or(j, "pitch_mm", s.pitch_mm);
  s.margin_mm = value_or(j, "margin_mm", s.margin_mm);
  s.thickness_mm = value_or(j, "thickness_mm", s.thickness_mm);
  s.hole_radius_mm = value_or(j, "hole_radius_mm", s.hole_radius_mm);
  s.ring_segments = value_or(j, "ring_segments", s.ring_segments);
  return s;
}

Json to_json(const TemplateModel& m) {
  Json holes = Json::array();
  for (const auto& h : m.holes) {
    holes.push_back({{"id", h.id},
                     {"row", h.row},
                     {"col", h.col},
                     {"position", to_json(h.position)},
                     {"direction", to_json(h.direction)}});
  }
  return {{"id", m.id}, {"spec", to_json(m.spec)}, {"holes", holes}};
}

Json to_json(const PlanConfig& c) {
  return {{"max_depth_mm", c.max_depth_mm},
          {"retract_margin_mm", c.retract_margin_mm},
          {"default_dwell_step_mm", c.default_dwell_step_mm}};
}

PlanConfig plan_config_from_json(const Json& j) {
  PlanConfig c;
  c.max_depth_mm = value_or(j, "max_depth_mm", c.max_depth_mm);
  c.retract_margin_mm = value_or(j, "retract_margin_mm", c.retract_margin_mm);
  c.default_dwell_step_mm = value_or(j, "default_dwell_step_mm", c.default_dwell_step_mm);
  if (!(c.max_depth_mm > 0.0) || c.retract_margin_mm < 0.0 || !(c.default_dwell_step_mm > 0.0)) {
    fail(ErrorCode::Validation, "plan config values out of range");
  }
  return c;
}

Json to_json(const NeedlePlan& plan) {
  Json needles = Json::array();
  for (const auto& n : plan.needles) {
    needles.push_back(
        {{"hole_id", n.hole_id}, {"depth_mm", n.depth_mm}, {"active", n.active}, {"dwell_step_mm", n.dwell_step_mm}});
  }
  return {{"schema", kJsonSchema},
          {"device_id", plan.device->id},
          {"device", to_json(plan.device->spec)},
          {"registration", to_json(plan.registration)},
          {"stage", to_string(plan.stage)},
          {"config", to_json(plan.config)},
          {"needles", needles}};
}

NeedlePlan plan_from_json(const Json& j) {
  const TemplateSpec spec = template_spec_from_json(field(j, "device"));
  const std::string device_id = value_or(j, "device_id", spec.id);
  if (device_id != spec.id) fail(ErrorCode::Validation, "plan device_id does not match the embedded device");
  NeedlePlan plan;
  plan.device = std::make_shared<const TemplateModel>(make_template(spec));
  plan.registration = transform_from_json(field(j, "registration"));
  plan.stage = parse_plan_stage(value_or<std::string>(j, "stage", "PRE"));
  plan.config = plan_config_from_json(value_or(j, "config", Json::object()));
  const Json& needles = field(j, "needles");
  if (!needles.is_array()) fail(ErrorCode::Parse, "'needles' must be an array");
  for (const auto& n : needles) {
    Needle needle;
    needle.hole_id = string_field(n, "hole_id");
    needle.depth_mm = number(field(n, "depth_mm"), "depth_mm");
    needle.active = value_or(n, "active", false);
    needle.dwell_step_mm = value_or(n, "dwell_step_mm", plan.config.default_dwell_step_mm);
    plan.needles.push_back(needle);
  }
  plan.validate();
  return plan;
}

NeedleEdit needle_edit_from_json(const Json& j) {
  const std::string action = string_field(j, "action");
  if (action == "set_depth") return NeedleEdit::set_depth(number(field(j, "value"), "value"));
  if (action == "activate") return NeedleEdit::activate();
  if (action == "deactivate") return NeedleEdit::deactivate();
  if (action == "set_dwell_step") return NeedleEdit::set_dwell_step(number(field(j, "value"), "value"));
  fail(ErrorCode::InvalidArgument, "unknown needle action '" + action + "'");
}

Json to_json(const TrajectorySegment& s) {
  return {{"entry", to_json(s.entry)}, {"tip", to_json(s.tip)}, {"direction", to_json(s.direction)}, {"depth_mm", s.depth}};
}

Json to_json(const FeasibilityReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json hits = Json::array();
    for (const auto& h : row.oar_hits) hits.push_back({{"structure", h.kind.name()}, {"depth_mm", h.depth_mm}});
    rows.push_back({{"hole_id", row.hole_id},
                    {"min_depth_to_target", optional_number(row.min_depth_to_target)},
                    {"max_useful_depth", row.max_useful_depth},
                    {"target_path_length", row.target_path_length},
                    {"oar_hits", hits},
                    {"feasible", row.feasible}});
  }
  return {{"device_id", r.device_id}, {"feasible_holes", r.feasible_holes}, {"rows", rows}};
}

Json to_json(const DoseMetric& m) { return {{"dose_gy", m.dose_gy}, {"undersized", m.undersized}}; }

Json to_json(const VerdictRow& r) {
  Json limit = nullptr;
  if (r.limit_range_gy) limit = Json::array({r.limit_range_gy->lo, r.limit_range_gy->hi});
  else if (r.limit_gy) limit = *r.limit_gy;
  return {{"structure", r.structure},
          {"metric", r.metric},
          {"value_gy", optional_number(r.value_gy)},
          {"per_fraction_gy", optional_number(r.per_fraction_gy)},
          {"limit_gy", limit},
          {"verdict", to_string(r.verdict)},
          {"undersized", r.undersized}};
}

Json to_json(std::span<const VerdictRow> rows) {
  Json out = Json::array();
  for (const auto& r : rows) out.push_back(to_json(r));
  return out;
}

Json to_json(const DvhCurve& c) {
  Json pts = Json::array();
  for (const auto& p : c.cumulative()) pts.push_back({p.dose_gy, p.volume_cc, p.percent});
  return {{"structure", c.structure.name()}, {"volume_cc", c.volume_cc}, {"points", pts}};
}

Json to_json(const StructureMetrics& m) {
  return {{"structure", m.structure},
          {"volume_cc", m.volume_cc},
          {"max_gy", m.max_gy},
          {"d90", to_json(m.d90)},
          {"d2cc", to_json(m.d2cc)},
          {"d0_1cc", to_json(m.d0_1cc)}};
}

Json to_json(const CourseSpec& c) {
  return {{"ebrt_gy", c.ebrt_gy}, {"n_fractions", c.n_fractions}, {"fraction_gy", c.fraction_gy}};
}

CourseSpec course_from_json(const Json& j) {
  CourseSpec c;
  c.ebrt_gy = value_or(j, "ebrt_gy", c.ebrt_gy);
  c.n_fractions = value_or(j, "n_fractions", c.n_fractions);
  c.fraction_gy = value_or(j, "fraction_gy", c.fraction_gy);
  c.validate();
  return c;
}

Json to_json(const ArtifactRef& r) {
  return {{"case_id", r.case_id},
          {"stage", to_string(r.stage)},
          {"kind", to_string(r.kind)},
          {"version", r.version},
          {"hash", r.hash},
          {"filename", r.filename}};
}

ArtifactRef artifact_ref_from_json(const Json& j) {
  ArtifactRef r;
  r.case_id = string_field(j, "case_id");
  r.stage = parse_plan_stage(string_field(j, "stage"));
  r.kind = parse_artifact_kind(string_field(j, "kind"));
  r.version = field(j, "version").get<int>();
  r.hash = string_field(j, "hash");
  r.filename = string_field(j, "filename");
  return r;
}

Json to_json(const FollowupOverlay& o) {
  Json j = {{"complete", o.complete}, {"missing", o.missing}};
  j["volume"] = o.volume ? to_json(*o.volume) : Json(nullptr);
  j["device"] = o.device ? to_json(*o.device) : Json(nullptr);
  j["registration"] = o.registration ? to_json(*o.registration) : Json(nullptr);
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace brachy
