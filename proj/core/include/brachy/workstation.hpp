#pragma once

#include "brachy/archive.hpp"
#include "brachy/igtlink.hpp"
#include "brachy/replan.hpp"
#include "brachy/serialization.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>

namespace brachy {

enum class WorkflowStage { ARRIVAL, DIAGNOSIS, DEVICE_SELECTION, PREPLAN, INTRAOP, POSTOP, CLOSED };

std::string_view to_string(WorkflowStage s);
WorkflowStage parse_workflow_stage(std::string_view text);
std::span<const WorkflowStage> all_workflow_stages();
/// Edges of the workflow graph: the linear path plus DIAGNOSIS -> CLOSED.
bool is_workflow_edge(WorkflowStage from, WorkflowStage to);

enum class Eligibility { Undecided, Eligible, Ineligible };
std::string_view to_string(Eligibility e);

struct DeviceCatalog {
  std::map<std::string, TemplateSpec> templates;

  /// 6x6 templates at 10 mm and 7 mm pitch, and a 4x4 template at 12.5 mm.
  static DeviceCatalog defaults();
  static DeviceCatalog from_json(const Json& j);
  const TemplateSpec& get(const std::string& id) const;
  Json to_json() const;
};

struct WorkstationOptions {
  DeviceCatalog devices = DeviceCatalog::defaults();
  /// Dwell weight and kernel used when a case does not set its own.
  ReplanConfig replan;
  /// Surface samples of the device mesh used as the ICP model cloud.
  std::size_t icp_samples = 3000;
  std::function<void(std::string_view)> log;
};

/// Case workflow over an archive: state machine, device comparison,
/// registration, replanning and follow-up. Every operation takes and returns
/// JSON so the HTTP service and the CLI share one implementation. Mutations
/// on one case are serialized; different cases proceed independently.
class Workstation {
 public:
  Workstation(std::filesystem::path data_dir, WorkstationOptions options = {});

  Archive& archive() { return archive_; }
  const DeviceCatalog& devices() const { return options_.devices; }

  /// {"case_id", optional "course", optional "dwell_weight"}. Conflict on a duplicate id.
  Json create_case(const Json& body);
  Json list_cases() const;
  /// Full case view: stage, device, registration, plan with trajectories, last replan.
  Json get_case(const std::string& case_id) const;

  /// SVOL upload tagged PRE, INTRA or POST. PRE is accepted from ARRIVAL to
  /// PREPLAN, INTRA in INTRAOP, POST in POSTOP. Volumes return protocol advisories.
  Json upload(const std::string& case_id, PlanStage stage, ArtifactKind kind, std::span<const std::uint8_t> bytes,
              MrProtocol protocol = MrProtocol::T2);

  /// {"eligible": bool}: DIAGNOSIS -> DEVICE_SELECTION or CLOSED.
  Json set_eligibility(const std::string& case_id, const Json& body);
  /// {"to": stage, optional "device_id" when entering PREPLAN}. Leaving DIAGNOSIS
  /// records the eligibility implied by the target.
  Json advance(const std::string& case_id, const Json& body);

  /// {"candidates": [ids], optional "selected", "registration", "depth_range",
  /// "plan_config"}. A selection archives the device, starts its plan and enters PREPLAN.
  Json compare_devices(const std::string& case_id, const Json& body);
  /// {"landmarks": {...}, optional "icp": {...}, "target_structure", "target_points"}.
  Json register_device(const std::string& case_id, const Json& body);
  /// {"hole_id", "action", optional "value"}: one needle edit, then dose, DVH and verdicts.
  Json edit_plan(const std::string& case_id, const Json& body);
  Json get_plan(const std::string& case_id) const;

  Json followup(const std::string& case_id) const;
  /// {"source": volume|labels|dose, "stage", "axis", "index"}.
  Json slice(const std::string& case_id, const Json& query) const;

  /// TRANSFORM messages named after a case in INTRAOP replace its registration
  /// and replan. Returns true when a case was updated.
  bool handle_igtl(const igtl::Message& msg);
  igtl::Server::Handler igtl_handler();

  struct IgtlStats {
    std::uint64_t transforms_applied = 0;
    std::uint64_t ignored = 0;
  };
  IgtlStats igtl_stats() const { return {igtl_applied_, igtl_ignored_}; }

 private:
  struct Cache {
    std::mutex mutex;
    std::map<std::string, std::shared_ptr<const LabelMap>> labels;
    std::map<std::string, std::shared_ptr<const NeedlePlan>> plans;
  };

  Json load_state(const std::string& case_id) const;
  void save_state(const std::string& case_id, Json& state);
  void transition(Json& state, WorkflowStage to);
  std::shared_ptr<const LabelMap> labels_for(const std::string& case_id, PlanStage stage) const;
  std::shared_ptr<const NeedlePlan> active_plan(const Json& state) const;
  ReplanConfig replan_config(const Json& state) const;
  /// Archives `plan`, replans when labels exist, and records the result in `state`.
  Json commit_plan(const std::string& case_id, Json& state, const NeedlePlan& plan);
  Json apply_registration(const std::string& case_id, Json& state, const RigidTransform& t, const Json& provenance);
  void log(const std::string& line) const;

  Archive archive_;
  WorkstationOptions options_;
  mutable Cache cache_;
  std::atomic<std::uint64_t> igtl_applied_{0};
  std::atomic<std::uint64_t> igtl_ignored_{0};
};

}  // namespace brachy
