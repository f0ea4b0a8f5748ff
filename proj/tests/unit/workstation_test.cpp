#include "brachy/phantom.hpp"
#include "brachy/segmentation.hpp"
#include "brachy/workstation.hpp"

#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <thread>

using namespace brachy;

namespace {

const Phantom& phantom() {
  static const Phantom ph = [] {
    PhantomSpec spec;
    spec.dims = 40;
    spec.spacing_mm = 3.0;
    return make_phantom(spec);
  }();
  return ph;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Format;
}

class WorkstationTest : public ::testing::Test {
 protected:
  ScratchDir dir{"ws"};
  Workstation ws{dir.path()};

  void upload_pre(const std::string& id) {
    ws.upload(id, PlanStage::PRE, ArtifactKind::VOLUME, serialize_volume(phantom().t2));
    ws.upload(id, PlanStage::PRE, ArtifactKind::LABELS, serialize_label_map(phantom().labels));
  }

  /// Creates `id` and walks the legal path up to `target`.
  void drive(const std::string& id, WorkflowStage target) {
    ws.create_case({{"case_id", id}});
    upload_pre(id);
    if (target == WorkflowStage::ARRIVAL) return;
    const std::vector<WorkflowStage> path{WorkflowStage::DIAGNOSIS, WorkflowStage::DEVICE_SELECTION,
                                          WorkflowStage::PREPLAN,   WorkflowStage::INTRAOP,
                                          WorkflowStage::POSTOP,    WorkflowStage::CLOSED};
    for (auto s : path) {
      Json body = {{"to", std::string(to_string(s))}};
      if (s == WorkflowStage::PREPLAN) {
        body["device_id"] = "template-6x6";
        body["registration"] = to_json(phantom().registration);
      }
      ws.advance(id, body);
      if (s == target) return;
    }
  }

  Json landmarks() const { return to_json(phantom().landmarks); }
};

}  // namespace

TEST(WorkflowGraph, EdgesAreTheLinearPathPlusIneligibleExit) {
  int edges = 0;
  for (auto a : all_workflow_stages())
    for (auto b : all_workflow_stages()) edges += is_workflow_edge(a, b);
  EXPECT_EQ(edges, 7);
  EXPECT_TRUE(is_workflow_edge(WorkflowStage::DIAGNOSIS, WorkflowStage::CLOSED));
  EXPECT_FALSE(is_workflow_edge(WorkflowStage::PREPLAN, WorkflowStage::CLOSED));
  EXPECT_FALSE(is_workflow_edge(WorkflowStage::CLOSED, WorkflowStage::ARRIVAL));
  for (auto s : all_workflow_stages()) EXPECT_EQ(parse_workflow_stage(to_string(s)), s);
}

TEST_F(WorkstationTest, CreateReadAndConflict) {
  const Json s = ws.create_case({{"case_id", "c1"}});
  EXPECT_EQ(s["stage"], "ARRIVAL");
  EXPECT_EQ(s["eligibility"], "undecided");
  EXPECT_EQ(ws.get_case("c1")["stage"], "ARRIVAL");
  EXPECT_EQ(code_of([&] { ws.create_case({{"case_id", "c1"}}); }), ErrorCode::Conflict);
  EXPECT_EQ(code_of([&] { ws.get_case("nope"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { ws.create_case({{"case_id", "../x"}}); }), ErrorCode::Validation);
  EXPECT_EQ(ws.list_cases()["cases"].size(), 1u);
}

TEST_F(WorkstationTest, TransitionMatrix) {
  int n = 0;
  for (auto from : all_workflow_stages()) {
    for (auto to : all_workflow_stages()) {
      const std::string id = "m" + std::to_string(n++);
      drive(id, from);
      Json body = {{"to", std::string(to_string(to))}, {"device_id", "template-6x6"}};
      if (is_workflow_edge(from, to)) {
        EXPECT_NO_THROW(ws.advance(id, body)) << to_string(from) << " -> " << to_string(to);
        EXPECT_EQ(ws.get_case(id)["stage"], std::string(to_string(to)));
      } else {
        EXPECT_EQ(code_of([&] { ws.advance(id, body); }), ErrorCode::State)
            << to_string(from) << " -> " << to_string(to);
        EXPECT_EQ(ws.get_case(id)["stage"], std::string(to_string(from)));
      }
    }
  }
}

TEST_F(WorkstationTest, DiagnosisNeedsPreVolume) {
  ws.create_case({{"case_id", "c1"}});
  EXPECT_EQ(code_of([&] { ws.advance("c1", {{"to", "DIAGNOSIS"}}); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([&] { ws.advance("c1", {{"to", "BOGUS"}}); }), ErrorCode::InvalidArgument);
}

TEST_F(WorkstationTest, UploadRules) {
  drive("c1", WorkflowStage::DIAGNOSIS);
  ScalarVolume thick = phantom().t2;
  thick.grid.spacing.z() = 8.0;
  const Json r = ws.upload("c1", PlanStage::PRE, ArtifactKind::VOLUME, serialize_volume(thick));
  EXPECT_EQ(r["ref"]["version"], 2);
  EXPECT_FALSE(r["advisories"].empty());
  EXPECT_EQ(code_of([&] { ws.upload("c1", PlanStage::POST, ArtifactKind::VOLUME, serialize_volume(thick)); }),
            ErrorCode::State);
  EXPECT_EQ(code_of([&] {
              const std::vector<std::uint8_t> junk{1, 2, 3};
              ws.upload("c1", PlanStage::PRE, ArtifactKind::VOLUME, junk);
            }),
            ErrorCode::Format);
  EXPECT_EQ(code_of([&] { ws.upload("c1", PlanStage::PRE, ArtifactKind::PLAN, serialize_volume(thick)); }),
            ErrorCode::InvalidArgument);

  drive("c2", WorkflowStage::CLOSED);
  EXPECT_EQ(code_of([&] { ws.upload("c2", PlanStage::PRE, ArtifactKind::VOLUME, serialize_volume(thick)); }),
            ErrorCode::State);
}

TEST_F(WorkstationTest, Eligibility) {
  drive("c1", WorkflowStage::DIAGNOSIS);
  const Json s = ws.set_eligibility("c1", {{"eligible", false}});
  EXPECT_EQ(s["stage"], "CLOSED");
  EXPECT_EQ(s["eligibility"], "ineligible");
  EXPECT_EQ(code_of([&] { ws.set_eligibility("c1", {{"eligible", true}}); }), ErrorCode::State);

  drive("c2", WorkflowStage::DIAGNOSIS);
  EXPECT_EQ(ws.set_eligibility("c2", {{"eligible", true}})["stage"], "DEVICE_SELECTION");
  EXPECT_EQ(code_of([&] { ws.set_eligibility("c2", {{"eligible", "yes"}}); }), ErrorCode::Parse);
}

TEST_F(WorkstationTest, DeviceComparisonByPitch) {
  drive("c1", WorkflowStage::DEVICE_SELECTION);
  const Json body = {{"candidates", {"template-6x6", "template-6x6-fine"}},
                     {"registration", to_json(phantom().registration)}};
  const Json r = ws.compare_devices("c1", body);
  ASSERT_EQ(r["reports"].size(), 2u);
  EXPECT_EQ(r["stage"], "DEVICE_SELECTION");
  EXPECT_EQ(r["inventory"][0]["available"], true);
  EXPECT_EQ(r["inventory"][0]["lead_time_days"], 0);

  // oracle: a hole reaches the target when its straight column meets an HR-CTV voxel
  const LabelMap& labels = phantom().labels;
  const auto mask = labels.mask(StructureTag::HR_CTV);
  for (std::size_t d = 0; d < 2; ++d) {
    const TemplateModel m = make_template(ws.devices().get(body["candidates"][d]));
    int reach = 0;
    for (const auto& h : m.holes) {
      const Vec3 p = phantom().registration.apply(h.position);
      const Vec3 c = labels.grid.continuous_index(p);
      const int i = static_cast<int>(std::lround(c.x())), j = static_cast<int>(std::lround(c.y()));
      bool hit = false;
      for (int k = 0; k < labels.grid.dims[2] && !hit; ++k)
        hit = labels.grid.contains(i, j, k) && mask[labels.grid.index(i, j, k)];
      reach += hit;
    }
    EXPECT_EQ(r["reports"][d]["feasible_holes"], reach) << d;
  }
  EXPECT_LT(r["reports"][0]["feasible_holes"].get<int>(), r["reports"][1]["feasible_holes"].get<int>());

  EXPECT_EQ(code_of([&] { ws.compare_devices("c1", {{"candidates", Json::array()}}); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([&] { ws.compare_devices("c1", {{"candidates", {"template-6x6"}}, {"selected", "template-4x4"}}); }),
            ErrorCode::Validation);
  EXPECT_EQ(code_of([&] { ws.compare_devices("c1", {{"candidates", {"no-such"}}}); }), ErrorCode::NotFound);

  Json pick = body;
  pick["selected"] = "template-6x6-fine";
  const Json sel = ws.compare_devices("c1", pick);
  EXPECT_EQ(sel["stage"], "PREPLAN");
  const Json state = ws.get_case("c1");
  EXPECT_EQ(state["device"]["selected"], "template-6x6-fine");
  EXPECT_EQ(state["inventory_requests"].size(), 2u);
  EXPECT_EQ(state["plan"]["device_id"], "template-6x6-fine");
  EXPECT_TRUE(ws.archive().latest("c1", PlanStage::PRE, ArtifactKind::DEVICE).has_value());
  EXPECT_EQ(code_of([&] { ws.compare_devices("c1", pick); }), ErrorCode::State);

  // selection survives a restart
  Workstation again(dir.path());
  EXPECT_EQ(again.get_case("c1")["device"]["selected"], "template-6x6-fine");
}

TEST_F(WorkstationTest, ComparisonNeedsLabels) {
  ws.create_case({{"case_id", "c1"}});
  ws.upload("c1", PlanStage::PRE, ArtifactKind::VOLUME, serialize_volume(phantom().t2));
  ws.advance("c1", {{"to", "DIAGNOSIS"}});
  ws.advance("c1", {{"to", "DEVICE_SELECTION"}});
  EXPECT_EQ(code_of([&] { ws.compare_devices("c1", {{"candidates", {"template-6x6"}}}); }), ErrorCode::Validation);
}

TEST_F(WorkstationTest, RegistrationFromExactLandmarks) {
  drive("c0", WorkflowStage::DEVICE_SELECTION);
  EXPECT_EQ(code_of([&] { ws.register_device("c0", {{"landmarks", landmarks()}}); }), ErrorCode::State);

  drive("c1", WorkflowStage::PREPLAN);
  const Json r = ws.register_device("c1", {{"landmarks", landmarks()}});
  EXPECT_LT(r["landmark_rms"].get<double>(), 1e-9);
  EXPECT_TRUE(r["icp"].is_null());
  EXPECT_EQ(r["ref"]["kind"], "TRANSFORM");
  const RigidTransform t = transform_from_json(r["transform"]);
  EXPECT_LT((t.translation - phantom().registration.translation).norm(), 1e-9);
  EXPECT_EQ(ws.get_case("c1")["active_registration"], r["ref"]);

  Json bad = landmarks();
  bad["model_points"][1] = bad["model_points"][0];
  bad["image_points"][1] = bad["image_points"][0];
  EXPECT_EQ(code_of([&] { ws.register_device("c1", {{"landmarks", bad}}); }), ErrorCode::Degenerate);
}

TEST_F(WorkstationTest, IcpRefinementLowersResidual) {
  drive("c1", WorkflowStage::PREPLAN);
  Json lm = landmarks();
  // perturb the picked image points by a couple of millimetres
  const double shifts[3][3] = {{2.0, -1.5, 1.0}, {-1.0, 2.0, -2.0}, {1.5, 1.0, 2.5}};
  for (int i = 0; i < 3; ++i)
    for (int a = 0; a < 3; ++a) lm["image_points"][i][a] = lm["image_points"][i][a].get<double>() + shifts[i][a];
  const Json r = ws.register_device("c1", {{"landmarks", lm}, {"icp", {{"samples", 1500}, {"seed", 3}}}});
  ASSERT_FALSE(r["icp"].is_null());
  const auto& hist = r["icp"]["rms_history"];
  ASSERT_FALSE(hist.empty());
  EXPECT_LT(r["icp"]["final_rms"].get<double>(), hist[0].get<double>());
  EXPECT_EQ(r["ref"]["kind"], "TRANSFORM");
}

TEST_F(WorkstationTest, PlanEditsReplanSynchronously) {
  drive("c1", WorkflowStage::PREPLAN);
  const Json a = ws.edit_plan("c1", {{"hole_id", "A1"}, {"action", "set_depth"}, {"value", 30}});
  EXPECT_EQ(a["dwell_count"], 0);
  const Json b = ws.edit_plan("c1", {{"hole_id", "A1"}, {"action", "activate"}});
  EXPECT_GT(b["dwell_count"].get<int>(), 0);
  bool bladder = false;
  for (const auto& row : b["verdicts"])
    if (row["structure"] == "OAR_BLADDER" && row["metric"] == "D2cc") bladder = !row["value_gy"].is_null();
  EXPECT_TRUE(bladder);
  EXPECT_EQ(b["plan"]["needles"][0]["active"], true);

  const Json c = ws.edit_plan("c1", {{"hole_id", "A1"}, {"action", "activate"}});
  EXPECT_EQ(c["verdicts"].dump(), b["verdicts"].dump());
  EXPECT_EQ(c["plan_ref"], b["plan_ref"]);
  EXPECT_EQ(c["dose_ref"], b["dose_ref"]);

  EXPECT_EQ(code_of([&] { ws.edit_plan("c1", {{"hole_id", "Z9"}, {"action", "activate"}}); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { ws.edit_plan("c1", {{"hole_id", "A1"}, {"action", "set_depth"}, {"value", -5}}); }),
            ErrorCode::Range);

  const Json plan = ws.get_plan("c1");
  EXPECT_EQ(plan["trajectories"].size(), 1u);
  EXPECT_EQ(plan["trajectories"][0]["hole_id"], "A1");

  const Json slice = ws.slice("c1", {{"source", "dose"}, {"axis", 2}});
  EXPECT_EQ(slice["width"], phantom().labels.grid.dims[0]);
  EXPECT_EQ(code_of([&] { ws.slice("c1", {{"source", "dose"}, {"axis", 2}, {"index", 999}}); }), ErrorCode::Range);

  drive("c2", WorkflowStage::CLOSED);
  EXPECT_EQ(code_of([&] { ws.edit_plan("c2", {{"hole_id", "A1"}, {"action", "activate"}}); }), ErrorCode::State);
}

TEST_F(WorkstationTest, IgtlinkTransformUpdatesIntraopCase) {
  drive("c1", WorkflowStage::PREPLAN);
  ws.edit_plan("c1", {{"hole_id", "C3"}, {"action", "set_depth"}, {"value", 60}});
  ws.edit_plan("c1", {{"hole_id", "C3"}, {"action", "activate"}});
  const RigidTransform moved{Mat3::Identity(), phantom().registration.translation + Vec3(0.0, 0.0, 3.0)};

  // not armed before INTRAOP
  EXPECT_FALSE(ws.handle_igtl(igtl::Message::transform("c1", moved)));
  const Json before = ws.get_case("c1");
  ws.advance("c1", {{"to", "INTRAOP"}});
  EXPECT_EQ(ws.get_case("c1")["igtl"]["armed"], true);

  igtl::ServerOptions opts;
  opts.port = 0;
  igtl::Server server(opts, ws.igtl_handler());
  server.start();
  {
    auto conn = igtl::Connection::connect("127.0.0.1", server.port());
    conn.send(igtl::Message::transform("other-device", moved));
    conn.send(igtl::Message::transform("c1", moved));
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (ws.igtl_stats().transforms_applied == 0 && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  server.stop();

  ASSERT_EQ(ws.igtl_stats().transforms_applied, 1u);
  const Json after = ws.get_case("c1");
  EXPECT_EQ(after["igtl"]["updates"], 1);
  EXPECT_EQ(after["active_registration"]["stage"], "INTRA");
  EXPECT_EQ(transform_from_json(after["plan"]["registration"]).translation, moved.translation);
  EXPECT_EQ(after["last_replan"]["plan_ref"]["stage"], "INTRA");
  EXPECT_NE(after["last_replan"]["verdicts"].dump(), before["last_replan"]["verdicts"].dump());

  ws.advance("c1", {{"to", "POSTOP"}});
  EXPECT_EQ(ws.get_case("c1")["igtl"]["armed"], false);
  EXPECT_FALSE(ws.handle_igtl(igtl::Message::transform("c1", moved)));
}

TEST_F(WorkstationTest, FollowupOverlay) {
  drive("c1", WorkflowStage::POSTOP);
  const Json inc = ws.followup("c1");
  EXPECT_EQ(inc["complete"], false);
  EXPECT_EQ(inc["missing"], Json::array({"VOLUME@POST", "TRANSFORM"}));
  EXPECT_FALSE(inc.contains("refs"));
}

TEST_F(WorkstationTest, FollowupBundleCarriesThreeRefs) {
  drive("c1", WorkflowStage::PREPLAN);
  ws.register_device("c1", {{"landmarks", landmarks()}});
  ws.advance("c1", {{"to", "INTRAOP"}});
  ws.advance("c1", {{"to", "POSTOP"}});
  ws.upload("c1", PlanStage::POST, ArtifactKind::VOLUME, serialize_volume(phantom().t2));
  const Json f = ws.followup("c1");
  EXPECT_EQ(f["complete"], true);
  ASSERT_EQ(f["refs"].size(), 3u);
  EXPECT_EQ(f["refs"][0]["kind"], "VOLUME");
  EXPECT_EQ(f["refs"][1]["kind"], "DEVICE");
  EXPECT_EQ(f["refs"][2]["kind"], "TRANSFORM");
  EXPECT_EQ(f["device"]["id"], "template-6x6");
  EXPECT_NO_THROW(transform_from_json(f["transform"]));
}

TEST_F(WorkstationTest, ConcurrentEditsOnOneCaseAreSerialized) {
  drive("c1", WorkflowStage::PREPLAN);
  const int start = ws.get_case("c1")["revision"];
  std::vector<std::thread> threads;
  const char* holes[] = {"A1", "B2", "C3", "D4"};
  for (const char* h : holes)
    threads.emplace_back([&, h] {
      for (int d = 20; d < 25; ++d) ws.edit_plan("c1", {{"hole_id", h}, {"action", "set_depth"}, {"value", d}});
    });
  for (auto& t : threads) t.join();
  const Json s = ws.get_case("c1");
  EXPECT_EQ(s["revision"].get<int>(), start + 20);
  for (const char* h : holes) {
    bool found = false;
    for (const auto& n : s["plan"]["needles"])
      if (n["hole_id"] == h) found = n["depth_mm"] == 24.0;
    EXPECT_TRUE(found) << h;
  }
}
