#include "brachy/workstation.hpp"

#include "brachy/segmentation.hpp"

#include <algorithm>
#include <array>

namespace brachy {

namespace {

constexpr std::array<WorkflowStage, 7> kStages{WorkflowStage::ARRIVAL,  WorkflowStage::DIAGNOSIS,
                                               WorkflowStage::DEVICE_SELECTION, WorkflowStage::PREPLAN,
                                               WorkflowStage::INTRAOP,  WorkflowStage::POSTOP,
                                               WorkflowStage::CLOSED};

constexpr const char* kStateDoc = "state.json";

const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::Parse, std::string("missing field '") + key + "'");
  return j.at(key);
}

template <typename T>
T field_or(const Json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::Parse, std::string("field '") + key + "' has the wrong type");
  }
}

WorkflowStage stage_of(const Json& state) { return parse_workflow_stage(state.at("stage").get<std::string>()); }

std::optional<ArtifactRef> ref_or_null(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return artifact_ref_from_json(j);
}

Json advisories_json(const std::vector<Advisory>& list) {
  Json out = Json::array();
  for (const auto& a : list) out.push_back({{"field", a.field}, {"message", a.message}});
  return out;
}

ScalarVolume labels_as_volume(const LabelMap& labels) {
  ScalarVolume v;
  v.grid = labels.grid;
  v.dtype = VoxelType::UInt8;
  v.modality = labels.modality;
  v.voxels.assign(labels.voxels.begin(), labels.voxels.end());
  return v;
}

}  // namespace

std::string_view to_string(WorkflowStage s) {
  switch (s) {
    case WorkflowStage::ARRIVAL: return "ARRIVAL";
    case WorkflowStage::DIAGNOSIS: return "DIAGNOSIS";
    case WorkflowStage::DEVICE_SELECTION: return "DEVICE_SELECTION";
    case WorkflowStage::PREPLAN: return "PREPLAN";
    case WorkflowStage::INTRAOP: return "INTRAOP";
    case WorkflowStage::POSTOP: return "POSTOP";
    case WorkflowStage::CLOSED: return "CLOSED";
  }
  return "?";
}

WorkflowStage parse_workflow_stage(std::string_view text) {
  for (auto s : kStages)
    if (to_string(s) == text) return s;
  fail(ErrorCode::InvalidArgument, "unknown workflow stage '" + std::string(text) + "'");
}

std::span<const WorkflowStage> all_workflow_stages() { return kStages; }

bool is_workflow_edge(WorkflowStage from, WorkflowStage to) {
  const int a = static_cast<int>(from);
  const int b = static_cast<int>(to);
  if (b == a + 1) return true;
  return from == WorkflowStage::DIAGNOSIS && to == WorkflowStage::CLOSED;
}

std::string_view to_string(Eligibility e) {
  switch (e) {
    case Eligibility::Undecided: return "undecided";
    case Eligibility::Eligible: return "eligible";
    case Eligibility::Ineligible: return "ineligible";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// devices

DeviceCatalog DeviceCatalog::defaults() {
  DeviceCatalog c;
  TemplateSpec coarse;
  c.templates[coarse.id] = coarse;
  TemplateSpec fine;
  fine.id = "template-6x6-fine";
  fine.pitch_mm = 7.0;
  c.templates[fine.id] = fine;
  TemplateSpec wide;
  wide.id = "template-4x4";
  wide.rows = wide.cols = 4;
  wide.pitch_mm = 12.5;
  c.templates[wide.id] = wide;
  return c;
}

DeviceCatalog DeviceCatalog::from_json(const Json& j) {
  DeviceCatalog c;
  const Json& list = require(j, "templates");
  if (!list.is_array() || list.empty()) fail(ErrorCode::Parse, "'templates' must be a non-empty array");
  for (const auto& item : list) {
    TemplateSpec s = template_spec_from_json(item);
    if (!c.templates.emplace(s.id, s).second) fail(ErrorCode::Parse, "duplicate device id '" + s.id + "'");
  }
  return c;
}

const TemplateSpec& DeviceCatalog::get(const std::string& id) const {
  auto it = templates.find(id);
  if (it == templates.end()) fail(ErrorCode::NotFound, "unknown device '" + id + "'");
  return it->second;
}

Json DeviceCatalog::to_json() const {
  Json list = Json::array();
  for (const auto& [id, spec] : templates) list.push_back(brachy::to_json(spec));
  return {{"schema", kJsonSchema}, {"templates", list}};
}

// ---------------------------------------------------------------------------
// state

Workstation::Workstation(std::filesystem::path data_dir, WorkstationOptions options)
    : archive_(std::move(data_dir)), options_(std::move(options)) {}

void Workstation::log(const std::string& line) const {
  if (options_.log) options_.log(line);
}

Json Workstation::load_state(const std::string& case_id) const {
  if (!archive_.has_case(case_id)) fail(ErrorCode::NotFound, "unknown case '" + case_id + "'");
  auto text = archive_.get_document(case_id, kStateDoc);
  if (!text) fail(ErrorCode::NotFound, "case '" + case_id + "' has no workflow state");
  try {
    return Json::parse(*text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Corruption, "state of case '" + case_id + "' is unreadable: " + e.what());
  }
}

void Workstation::save_state(const std::string& case_id, Json& state) {
  state["revision"] = state.value("revision", 0) + 1;
  state["modified"] = utc_timestamp();
  archive_.put_document(case_id, kStateDoc, dump(state));
}

void Workstation::transition(Json& state, WorkflowStage to) {
  const WorkflowStage from = stage_of(state);
  if (!is_workflow_edge(from, to))
    fail(ErrorCode::State,
         "illegal transition " + std::string(to_string(from)) + " -> " + std::string(to_string(to)));
  state["stage"] = std::string(to_string(to));
  state["igtl"]["armed"] = to == WorkflowStage::INTRAOP;
  state["history"].push_back(
      {{"from", std::string(to_string(from))}, {"to", std::string(to_string(to))}, {"at", utc_timestamp()}});
  log("case " + state["case_id"].get<std::string>() + ": " + std::string(to_string(from)) + " -> " +
      std::string(to_string(to)));
}

std::shared_ptr<const LabelMap> Workstation::labels_for(const std::string& case_id, PlanStage stage) const {
  auto ref = archive_.latest(case_id, stage, ArtifactKind::LABELS);
  if (!ref && stage != PlanStage::PRE) ref = archive_.latest(case_id, PlanStage::PRE, ArtifactKind::LABELS);
  if (!ref) return nullptr;
  {
    std::lock_guard lock(cache_.mutex);
    auto it = cache_.labels.find(ref->hash);
    if (it != cache_.labels.end()) return it->second;
  }
  auto labels = std::make_shared<const LabelMap>(parse_label_map(archive_.fetch(*ref)));
  std::lock_guard lock(cache_.mutex);
  cache_.labels.emplace(ref->hash, labels);
  return labels;
}

std::shared_ptr<const NeedlePlan> Workstation::active_plan(const Json& state) const {
  const auto ref = ref_or_null(state.at("active_plan"));
  if (!ref) return nullptr;
  {
    std::lock_guard lock(cache_.mutex);
    auto it = cache_.plans.find(ref->hash);
    if (it != cache_.plans.end()) return it->second;
  }
  const auto bytes = archive_.fetch(*ref);
  auto plan = std::make_shared<const NeedlePlan>(plan_from_json(Json::parse(bytes.begin(), bytes.end())));
  std::lock_guard lock(cache_.mutex);
  cache_.plans.emplace(ref->hash, plan);
  return plan;
}

ReplanConfig Workstation::replan_config(const Json& state) const {
  ReplanConfig cfg = options_.replan;
  cfg.course = course_from_json(state.at("course"));
  cfg.dwell_weight = state.at("dwell_weight").get<double>();
  return cfg;
}

// ---------------------------------------------------------------------------
// cases

Json Workstation::create_case(const Json& body) {
  const std::string id = field_or<std::string>(body, "case_id", "");
  if (id.empty()) fail(ErrorCode::Validation, "case_id is required");
  if (!valid_case_id(id)) fail(ErrorCode::Validation, "invalid case id '" + id + "'");
  CourseSpec course;
  if (body.contains("course")) course = course_from_json(body.at("course"));
  course.validate();
  const double weight = field_or<double>(body, "dwell_weight", options_.replan.dwell_weight);
  if (!(weight > 0.0)) fail(ErrorCode::Validation, "dwell_weight must be positive");

  const CaseRecord rec = archive_.create_case(id);
  return archive_.with_case_lock(id, [&] {
    Json state = {
        {"schema", kJsonSchema},
        {"case_id", id},
        {"stage", std::string(to_string(WorkflowStage::ARRIVAL))},
        {"eligibility", std::string(to_string(Eligibility::Undecided))},
        {"course", to_json(course)},
        {"dwell_weight", weight},
        {"device", {{"candidates", Json::array()}, {"selected", nullptr}, {"comparison", nullptr}, {"ref", nullptr}}},
        {"active_plan", nullptr},
        {"active_registration", nullptr},
        {"last_replan", nullptr},
        {"igtl", {{"armed", false}, {"updates", 0}}},
        {"inventory_requests", Json::array()},
        {"history", Json::array()},
        {"revision", 0},
        {"created", rec.created},
    };
    save_state(id, state);
    log("case " + id + ": created");
    return state;
  });
}

Json Workstation::list_cases() const {
  Json out = Json::array();
  for (const auto& id : archive_.case_ids()) {
    auto text = archive_.get_document(id, kStateDoc);
    if (!text) continue;
    const Json state = Json::parse(*text);
    out.push_back({{"case_id", id}, {"stage", state.at("stage")}, {"eligibility", state.at("eligibility")}});
  }
  return {{"schema", kJsonSchema}, {"cases", out}};
}

Json Workstation::get_case(const std::string& case_id) const {
  Json state = load_state(case_id);
  const Json plan = get_plan(case_id);
  state["plan"] = plan.at("plan");
  state["trajectories"] = plan.at("trajectories");
  return state;
}

Json Workstation::get_plan(const std::string& case_id) const {
  const Json state = load_state(case_id);
  const auto plan = active_plan(state);
  if (!plan) return {{"schema", kJsonSchema}, {"plan", nullptr}, {"trajectories", Json::array()}};
  Json trajectories = Json::array();
  for (const Needle* n : plan->active_needles()) {
    Json t = to_json(trajectory(*plan, n->hole_id));
    t["hole_id"] = n->hole_id;
    trajectories.push_back(t);
  }
  return {{"schema", kJsonSchema},
          {"plan_ref", state.at("active_plan")},
          {"plan", to_json(*plan)},
          {"trajectories", trajectories},
          {"last_replan", state.at("last_replan")}};
}

// ---------------------------------------------------------------------------
// uploads and transitions

Json Workstation::upload(const std::string& case_id, PlanStage stage, ArtifactKind kind,
                         std::span<const std::uint8_t> bytes, MrProtocol protocol) {
  if (kind != ArtifactKind::VOLUME && kind != ArtifactKind::LABELS)
    fail(ErrorCode::InvalidArgument, "uploads carry VOLUME or LABELS, not " + std::string(to_string(kind)));
  return archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    const WorkflowStage ws = stage_of(state);
    bool allowed = false;
    switch (stage) {
      case PlanStage::PRE: allowed = ws <= WorkflowStage::PREPLAN; break;
      case PlanStage::INTRA: allowed = ws == WorkflowStage::INTRAOP; break;
      case PlanStage::POST: allowed = ws == WorkflowStage::POSTOP; break;
    }
    if (!allowed)
      fail(ErrorCode::State, std::string(to_string(stage)) + " uploads are not accepted in stage " +
                                 std::string(to_string(ws)));

    Json summary;
    std::vector<Advisory> advisories;
    if (kind == ArtifactKind::VOLUME) {
      const ScalarVolume vol = parse_volume(bytes);
      advisories = validate_protocol(vol, protocol);
      summary = {{"dims", vol.grid.dims}, {"spacing", to_json(vol.grid.spacing)}, {"modality", vol.modality},
                 {"dtype", std::string(to_string(vol.dtype))}};
    } else {
      const LabelMap labels = parse_label_map(bytes);
      Json legend = Json::object();
      for (const auto& [code, k] : labels.legend) legend[std::to_string(code)] = k.name();
      summary = {{"dims", labels.grid.dims}, {"spacing", to_json(labels.grid.spacing)}, {"legend", legend}};
    }
    const ArtifactRef ref = archive_.store(case_id, stage, kind, bytes);
    save_state(case_id, state);
    log("case " + case_id + ": stored " + ref.filename);
    return Json{{"schema", kJsonSchema}, {"ref", to_json(ref)}, {"summary", summary},
                {"advisories", advisories_json(advisories)}};
  });
}

Json Workstation::advance(const std::string& case_id, const Json& body) {
  const WorkflowStage to = parse_workflow_stage(require(body, "to").get<std::string>());
  return archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    const WorkflowStage from = stage_of(state);
    if (!is_workflow_edge(from, to))
      fail(ErrorCode::State,
           "illegal transition " + std::string(to_string(from)) + " -> " + std::string(to_string(to)));
    switch (to) {
      case WorkflowStage::DIAGNOSIS:
        if (!archive_.latest(case_id, PlanStage::PRE, ArtifactKind::VOLUME))
          fail(ErrorCode::Validation, "a PRE volume is required before DIAGNOSIS");
        break;
      case WorkflowStage::DEVICE_SELECTION:
        state["eligibility"] = std::string(to_string(Eligibility::Eligible));
        break;
      case WorkflowStage::CLOSED:
        if (from == WorkflowStage::DIAGNOSIS) state["eligibility"] = std::string(to_string(Eligibility::Ineligible));
        break;
      case WorkflowStage::PREPLAN: {
        if (body.contains("device_id")) {
          Json comparison = {{"candidates", {body.at("device_id")}}, {"selected", body.at("device_id")}};
          for (const char* key : {"registration", "depth_range", "plan_config"})
            if (body.contains(key)) comparison[key] = body.at(key);
          return compare_devices(case_id, comparison);
        }
        fail(ErrorCode::Validation, "select a device before PREPLAN");
      }
      default: break;
    }
    transition(state, to);
    save_state(case_id, state);
    return state;
  });
}

Json Workstation::set_eligibility(const std::string& case_id, const Json& body) {
  const Json& v = require(body, "eligible");
  if (!v.is_boolean()) fail(ErrorCode::Parse, "'eligible' must be a boolean");
  const bool eligible = v.get<bool>();
  return archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    if (stage_of(state) != WorkflowStage::DIAGNOSIS)
      fail(ErrorCode::State, "eligibility is decided in DIAGNOSIS, case is in " + state["stage"].get<std::string>());
    state["eligibility"] = std::string(to_string(eligible ? Eligibility::Eligible : Eligibility::Ineligible));
    transition(state, eligible ? WorkflowStage::DEVICE_SELECTION : WorkflowStage::CLOSED);
    save_state(case_id, state);
    return state;
  });
}

// ---------------------------------------------------------------------------
// device comparison

Json Workstation::compare_devices(const std::string& case_id, const Json& body) {
  const Json& cands = require(body, "candidates");
  if (!cands.is_array()) fail(ErrorCode::Parse, "'candidates' must be an array");
  std::vector<std::string> ids;
  for (const auto& c : cands) {
    if (!c.is_string()) fail(ErrorCode::Parse, "candidate ids must be strings");
    ids.push_back(c.get<std::string>());
  }
  std::optional<std::string> selected;
  if (body.contains("selected") && !body.at("selected").is_null()) {
    if (!body.at("selected").is_string()) fail(ErrorCode::Parse, "'selected' must be a string");
    selected = body.at("selected").get<std::string>();
  }

  return archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    const WorkflowStage ws = stage_of(state);
    if (ws > WorkflowStage::DEVICE_SELECTION && ws != WorkflowStage::CLOSED)
      fail(ErrorCode::State, "device change is not allowed after PREPLAN");
    if (ws != WorkflowStage::DEVICE_SELECTION)
      fail(ErrorCode::State, "device comparison requires DEVICE_SELECTION, case is in " + std::string(to_string(ws)));
    if (ids.empty()) fail(ErrorCode::Validation, "at least one candidate device is required");
    if (selected && std::find(ids.begin(), ids.end(), *selected) == ids.end())
      fail(ErrorCode::Validation, "selected device '" + *selected + "' is not a candidate");
    for (const auto& id : ids) options_.devices.get(id);

    const auto labels = labels_for(case_id, PlanStage::PRE);
    if (!labels) fail(ErrorCode::Validation, "PRE labels are required for device comparison");

    RigidTransform registration;
    if (body.contains("registration")) {
      registration = transform_from_json(body.at("registration"));
    } else if (auto ref = ref_or_null(state.at("active_registration"))) {
      const auto bytes = archive_.fetch(*ref);
      registration = transform_from_json(Json::parse(bytes.begin(), bytes.end()).at("transform"));
    }
    PlanConfig plan_config;
    if (body.contains("plan_config")) plan_config = plan_config_from_json(body.at("plan_config"));
    DepthRange range;
    if (body.contains("depth_range")) {
      const Json& r = body.at("depth_range");
      range.min_mm = field_or<double>(r, "min_mm", range.min_mm);
      range.max_mm = field_or<double>(r, "max_mm", range.max_mm);
    }

    Json reports = Json::array();
    std::map<std::string, TemplateModel> models;
    for (const auto& id : ids) {
      auto [it, fresh] = models.emplace(id, make_template(options_.devices.get(id)));
      if (!fresh) fail(ErrorCode::Validation, "duplicate candidate '" + id + "'");
      reports.push_back(to_json(evaluate_feasibility(it->second, registration, *labels, range)));
    }

    Json inventory = Json::array();
    for (const auto& id : ids)
      inventory.push_back({{"device_id", id}, {"available", true}, {"lead_time_days", 0}});
    state["inventory_requests"].push_back({{"requested_at", utc_timestamp()}, {"responses", inventory}});
    log("case " + case_id + ": inventory request for " + std::to_string(ids.size()) + " device(s)");

    Json comparison = {{"schema", kJsonSchema},     {"candidates", ids},  {"registration", to_json(registration)},
                       {"depth_range", {{"min_mm", range.min_mm}, {"max_mm", range.max_mm}}},
                       {"reports", reports},         {"selected", selected ? Json(*selected) : Json(nullptr)}};
    const ArtifactRef report_ref = archive_.store(case_id, PlanStage::PRE, ArtifactKind::REPORT, dump(comparison));
    state["device"]["candidates"] = ids;
    state["device"]["comparison"] = to_json(report_ref);

    Json response = comparison;
    response["inventory"] = inventory;
    response["comparison_ref"] = to_json(report_ref);
    if (selected) {
      const TemplateModel& model = models.at(*selected);
      Json device = to_json(model);
      const ArtifactRef device_ref = archive_.store(case_id, PlanStage::PRE, ArtifactKind::DEVICE, dump(device));
      state["device"]["selected"] = *selected;
      state["device"]["ref"] = to_json(device_ref);
      NeedlePlan plan = NeedlePlan::for_device(std::make_shared<const TemplateModel>(model), registration, plan_config);
      transition(state, WorkflowStage::PREPLAN);
      response["replan"] = commit_plan(case_id, state, plan);
      response["device_ref"] = to_json(device_ref);
    }
    save_state(case_id, state);
    response["stage"] = state["stage"];
    return response;
  });
}

// ---------------------------------------------------------------------------
// plan and registration

Json Workstation::commit_plan(const std::string& case_id, Json& state, const NeedlePlan& plan_in) {
  NeedlePlan plan = plan_in;
  plan.stage = stage_of(state) == WorkflowStage::INTRAOP ? PlanStage::INTRA : PlanStage::PRE;
  const Json plan_json = to_json(plan);
  const ArtifactRef plan_ref = archive_.store(case_id, plan.stage, ArtifactKind::PLAN, dump(plan_json));
  {
    std::lock_guard lock(cache_.mutex);
    cache_.plans.emplace(plan_ref.hash, std::make_shared<const NeedlePlan>(plan));
  }
  state["active_plan"] = to_json(plan_ref);

  Json out = {{"plan_ref", to_json(plan_ref)}};
  const auto labels = labels_for(case_id, plan.stage);
  if (!labels) {
    state["last_replan"] = nullptr;
    out["dose"] = nullptr;
    return out;
  }
  const ReplanResult r = replan(plan, *labels, replan_config(state));
  const ArtifactRef dose_ref =
      archive_.store(case_id, plan.stage, ArtifactKind::DOSE, serialize_volume(r.dose.to_volume()));
  Json metrics = Json::array();
  for (const auto& m : r.metrics) metrics.push_back(to_json(m));
  Json report = {{"schema", kJsonSchema},
                 {"plan_ref", to_json(plan_ref)},
                 {"dose_ref", to_json(dose_ref)},
                 {"dwell_count", r.dwell_count},
                 {"max_gy", r.dose.max()},
                 {"metrics", metrics},
                 {"verdicts", to_json(std::span<const VerdictRow>(r.verdicts))},
                 {"has_failures", has_failures(r.verdicts)},
                 {"advisories", r.advisories}};
  const ArtifactRef report_ref = archive_.store(case_id, plan.stage, ArtifactKind::REPORT, dump(report));
  report["report_ref"] = to_json(report_ref);
  state["last_replan"] = {{"plan_ref", report["plan_ref"]}, {"dose_ref", report["dose_ref"]},
                          {"report_ref", report["report_ref"]}, {"dwell_count", r.dwell_count},
                          {"max_gy", report["max_gy"]}, {"verdicts", report["verdicts"]},
                          {"has_failures", report["has_failures"]}, {"advisories", report["advisories"]}};
  out["dose"] = report;
  return out;
}

Json Workstation::edit_plan(const std::string& case_id, const Json& body) {
  const std::string hole = require(body, "hole_id").get<std::string>();
  const NeedleEdit edit = needle_edit_from_json(body);
  return archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    const WorkflowStage ws = stage_of(state);
    if (ws != WorkflowStage::PREPLAN && ws != WorkflowStage::INTRAOP)
      fail(ErrorCode::State, "plan edits require PREPLAN or INTRAOP, case is in " + std::string(to_string(ws)));
    const auto plan = active_plan(state);
    if (!plan) fail(ErrorCode::State, "case has no active plan");
    const NeedlePlan edited = edit_needle(*plan, hole, edit);
    Json result = commit_plan(case_id, state, edited);
    save_state(case_id, state);
    Json out = {{"schema", kJsonSchema}, {"plan", to_json(*active_plan(state))}, {"plan_ref", result["plan_ref"]}};
    const Json& dose = result["dose"];
    for (const char* key : {"dose_ref", "report_ref", "dwell_count", "max_gy", "metrics", "verdicts", "has_failures",
                            "advisories"})
      out[key] = dose.is_null() ? Json(nullptr) : dose.at(key);
    out["revision"] = state["revision"];
    return out;
  });
}

Json Workstation::apply_registration(const std::string& case_id, Json& state, const RigidTransform& t,
                                     const Json& provenance) {
  const PlanStage stage = stage_of(state) == WorkflowStage::INTRAOP ? PlanStage::INTRA : PlanStage::PRE;
  Json doc = {{"schema", kJsonSchema}, {"transform", to_json(t)}, {"provenance", provenance}};
  const ArtifactRef ref = archive_.store(case_id, stage, ArtifactKind::TRANSFORM, dump(doc));
  state["active_registration"] = to_json(ref);
  Json out = {{"ref", to_json(ref)}, {"transform", to_json(t)}};
  if (const auto plan = active_plan(state)) {
    NeedlePlan moved = *plan;
    moved.registration = t;
    out["replan"] = commit_plan(case_id, state, moved);
  }
  return out;
}

Json Workstation::register_device(const std::string& case_id, const Json& body) {
  const LandmarkPairs landmarks = landmarks_from_json(require(body, "landmarks"));
  return archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    const WorkflowStage ws = stage_of(state);
    if (ws != WorkflowStage::PREPLAN && ws != WorkflowStage::INTRAOP)
      fail(ErrorCode::State, "registration requires a selected device (PREPLAN or INTRAOP), case is in " +
                                 std::string(to_string(ws)));
    const auto plan = active_plan(state);
    if (!plan) fail(ErrorCode::State, "case has no device plan");

    const RigidTransform initial = fit_landmarks(landmarks);
    const double landmark_rms = rms_residual(initial, landmarks.model_points, landmarks.image_points);
    RigidTransform result = initial;
    Json icp_json = nullptr;
    Json provenance = {{"source", "landmarks"}, {"landmark_rms", landmark_rms}};

    if (body.contains("icp") && !body.at("icp").is_null() && body.at("icp").value("enabled", true)) {
      const Json& icp = body.at("icp");
      const IcpConfig cfg = icp_config_from_json(icp);
      const std::size_t samples = field_or<std::size_t>(icp, "samples", options_.icp_samples);
      const std::uint64_t seed = field_or<std::uint64_t>(icp, "seed", 1);
      PointCloud target;
      if (body.contains("target_points")) {
        for (const auto& p : body.at("target_points")) target.push_back(vec3_from_json(p));
      } else {
        const std::string name = field_or<std::string>(body, "target_structure", "TEMPLATE");
        const auto labels = labels_for(case_id, ws == WorkflowStage::INTRAOP ? PlanStage::INTRA : PlanStage::PRE);
        if (!labels) fail(ErrorCode::Validation, "labels are required for ICP refinement");
        const StructureKind kind = StructureKind::parse(name);
        if (!labels->has(kind)) fail(ErrorCode::Validation, "labels have no structure '" + name + "'");
        target = surface_cloud(*labels, kind);
      }
      if (target.size() < 3) fail(ErrorCode::Validation, "ICP target cloud has fewer than 3 points");
      const PointCloud model = sample_surface(plan->device->mesh, samples, seed);
      const IcpReport report = icp_refine(model, target, initial, cfg);
      result = report.transform;
      icp_json = to_json(report);
      provenance = {{"source", "icp"}, {"landmark_rms", landmark_rms}, {"icp_final_rms", report.final_rms}};
    }

    Json out = apply_registration(case_id, state, result, provenance);
    save_state(case_id, state);
    out["schema"] = kJsonSchema;
    out["landmark_rms"] = landmark_rms;
    out["icp"] = icp_json;
    return out;
  });
}

// ---------------------------------------------------------------------------
// follow-up, slices, igtlink

Json Workstation::followup(const std::string& case_id) const {
  const Json state = load_state(case_id);
  const FollowupOverlay overlay = archive_.followup_overlay(case_id);
  Json out = to_json(overlay);
  out["schema"] = kJsonSchema;
  out["stage"] = state.at("stage");
  if (overlay.complete) {
    auto read_json = [&](const ArtifactRef& r) {
      const auto bytes = archive_.fetch(r);
      return Json::parse(bytes.begin(), bytes.end());
    };
    out["device"] = read_json(*overlay.device);
    out["transform"] = read_json(*overlay.registration).at("transform");
    out["refs"] = Json::array({to_json(*overlay.volume), to_json(*overlay.device), to_json(*overlay.registration)});
  }
  return out;
}

Json Workstation::slice(const std::string& case_id, const Json& query) const {
  const Json state = load_state(case_id);
  const std::string source = field_or<std::string>(query, "source", "volume");
  const PlanStage stage = parse_plan_stage(field_or<std::string>(query, "stage", "PRE"));
  ScalarVolume vol;
  if (source == "volume") {
    auto ref = archive_.latest(case_id, stage, ArtifactKind::VOLUME);
    if (!ref) fail(ErrorCode::NotFound, "no " + std::string(to_string(stage)) + " volume");
    vol = parse_volume(archive_.fetch(*ref));
  } else if (source == "labels") {
    auto labels = labels_for(case_id, stage);
    if (!labels) fail(ErrorCode::NotFound, "no labels");
    vol = labels_as_volume(*labels);
  } else if (source == "dose") {
    const Json& last = state.at("last_replan");
    if (last.is_null()) fail(ErrorCode::NotFound, "no dose computed");
    vol = parse_volume(archive_.fetch(artifact_ref_from_json(last.at("dose_ref"))));
  } else {
    fail(ErrorCode::InvalidArgument, "unknown slice source '" + source + "'");
  }
  const int axis = field_or<int>(query, "axis", 2);
  if (axis < 0 || axis > 2) fail(ErrorCode::InvalidArgument, "axis must be 0, 1 or 2");
  const int index = field_or<int>(query, "index", vol.grid.dims[axis] / 2);
  if (index < 0 || index >= vol.grid.dims[axis]) fail(ErrorCode::Range, "slice index out of range");
  const SlicePlane plane = SlicePlane::grid_aligned(vol.grid, axis, index);
  const Image2D img = extract_slice(vol, plane, Interpolation::Nearest);
  return {{"schema", kJsonSchema}, {"source", source}, {"stage", std::string(to_string(stage))},
          {"axis", axis},           {"index", index},   {"width", img.width},
          {"height", img.height},   {"origin", to_json(plane.origin)}, {"u", to_json(plane.u)},
          {"v", to_json(plane.v)},  {"pixel_size", {plane.pixel_size_u(), plane.pixel_size_v()}},
          {"pixels", img.pixels}};
}

bool Workstation::handle_igtl(const igtl::Message& msg) {
  const auto* body = std::get_if<igtl::TransformBody>(&msg.body);
  if (!body || !valid_case_id(msg.device_name) || !archive_.has_case(msg.device_name)) {
    ++igtl_ignored_;
    return false;
  }
  const std::string& case_id = msg.device_name;
  const bool applied = archive_.with_case_lock(case_id, [&] {
    Json state = load_state(case_id);
    if (stage_of(state) != WorkflowStage::INTRAOP || !state["igtl"].value("armed", false)) return false;
    apply_registration(case_id, state, body->to_rigid(), {{"source", "igtlink"}, {"timestamp", msg.timestamp}});
    state["igtl"]["updates"] = state["igtl"].value("updates", 0) + 1;
    save_state(case_id, state);
    return true;
  });
  if (applied) {
    ++igtl_applied_;
    log("case " + case_id + ": registration updated over igtlink");
  } else {
    ++igtl_ignored_;
  }
  return applied;
}

igtl::Server::Handler Workstation::igtl_handler() {
  return [this](const igtl::Peer& peer, const igtl::Message& msg) {
    try {
      handle_igtl(msg);
    } catch (const Error& e) {
      log("igtlink peer " + std::to_string(peer.id) + ": " + e.what());
    }
  };
}

}  // namespace brachy
