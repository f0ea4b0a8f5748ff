#include "brachy/http_service.hpp"
#include "brachy/phantom.hpp"

#include "scratch_dir.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

using namespace brachy;

namespace {

const Phantom& phantom() {
  static const Phantom ph = [] {
    PhantomSpec spec;
    spec.dims = 32;
    spec.spacing_mm = 4.0;
    return make_phantom(spec);
  }();
  return ph;
}

std::string as_body(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    HttpOptions opts;
    opts.port = 0;
    service = std::make_unique<HttpService>(ws, opts);
    service->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", service->port());
  }
  void TearDown() override { service->stop(); }

  Json post(const std::string& path, const Json& body, int expect) {
    auto res = client->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    if (!res) return nullptr;
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return Json::parse(res->body);
  }
  Json get(const std::string& path, int expect) {
    auto res = client->Get(path);
    EXPECT_TRUE(res);
    if (!res) return nullptr;
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return Json::parse(res->body);
  }
  Json patch(const std::string& path, const Json& body, int expect) {
    auto res = client->Patch(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    if (!res) return nullptr;
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return Json::parse(res->body);
  }
  Json upload(const std::string& id, const std::string& query, const std::string& body, int expect) {
    auto res = client->Post("/cases/" + id + "/volumes?" + query, body, "application/octet-stream");
    EXPECT_TRUE(res);
    if (!res) return nullptr;
    EXPECT_EQ(res->status, expect) << res->body;
    return Json::parse(res->body);
  }

  ScratchDir dir{"http"};
  Workstation ws{dir.path()};
  std::unique_ptr<HttpService> service;
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(ErrorCode::NotFound), 404);
  EXPECT_EQ(http_status(ErrorCode::Conflict), 409);
  EXPECT_EQ(http_status(ErrorCode::State), 409);
  EXPECT_EQ(http_status(ErrorCode::Validation), 422);
  EXPECT_EQ(http_status(ErrorCode::Degenerate), 422);
  EXPECT_EQ(http_status(ErrorCode::Parse), 400);
  EXPECT_EQ(http_status(ErrorCode::Corruption), 500);
}

TEST_F(HttpTest, CaseLifecycleErrors) {
  EXPECT_EQ(get("/health", 200)["status"], "ok");
  EXPECT_EQ(get("/devices", 200)["templates"].size(), 3u);
  const Json c = post("/cases", {{"case_id", "c1"}}, 201);
  EXPECT_EQ(c["stage"], "ARRIVAL");
  EXPECT_EQ(c["eligibility"], "undecided");
  EXPECT_EQ(post("/cases", {{"case_id", "c1"}}, 409)["error"]["code"], "conflict");
  EXPECT_EQ(get("/cases/unknown", 404)["error"]["code"], "not_found");
  EXPECT_EQ(get("/cases", 200)["cases"].size(), 1u);

  auto res = client->Post("/cases", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  const Json illegal = post("/cases/c1/advance", {{"to", "POSTOP"}}, 409);
  EXPECT_EQ(illegal["error"]["code"], "state");
  EXPECT_NE(illegal["error"]["message"].get<std::string>().find("ARRIVAL -> POSTOP"), std::string::npos);
}

TEST_F(HttpTest, EndToEndOverHttp) {
  post("/cases", {{"case_id", "c1"}}, 201);
  const Json up = upload("c1", "stage=PRE&kind=VOLUME&protocol=T2", as_body(serialize_volume(phantom().t2)), 201);
  EXPECT_EQ(up["ref"]["kind"], "VOLUME");
  EXPECT_TRUE(up["advisories"].empty());
  // 4 mm slices are outside the 3 mm T1 protocol
  const Json t1 = upload("c1", "stage=PRE&kind=VOLUME&protocol=T1", as_body(serialize_volume(phantom().t2)), 201);
  EXPECT_EQ(t1["advisories"].size(), 1u);
  EXPECT_EQ(t1["ref"]["version"], 1);
  upload("c1", "stage=PRE&kind=LABELS", as_body(serialize_label_map(phantom().labels)), 201);
  upload("c1", "stage=POST", as_body(serialize_volume(phantom().t2)), 409);
  upload("c1", "stage=PRE", "garbage", 400);

  post("/cases/c1/advance", {{"to", "DIAGNOSIS"}}, 200);
  EXPECT_EQ(post("/cases/c1/eligibility", {{"eligible", true}}, 200)["stage"], "DEVICE_SELECTION");
  EXPECT_EQ(post("/cases/c1/registration", {{"landmarks", to_json(phantom().landmarks)}}, 409)["error"]["code"],
            "state");
  EXPECT_EQ(post("/cases/c1/device-comparison", {{"candidates", Json::array()}}, 422)["error"]["code"], "validation");
  EXPECT_EQ(post("/cases/c1/device-comparison", {{"candidates", {"nope"}}}, 404)["error"]["code"], "not_found");
  const Json cmp = post("/cases/c1/device-comparison",
                        {{"candidates", {"template-6x6", "template-6x6-fine"}},
                         {"selected", "template-6x6"},
                         {"registration", to_json(phantom().registration)}},
                        200);
  EXPECT_EQ(cmp["reports"].size(), 2u);
  EXPECT_EQ(cmp["stage"], "PREPLAN");

  const Json reg = post("/cases/c1/registration", {{"landmarks", to_json(phantom().landmarks)}}, 200);
  EXPECT_LT(reg["landmark_rms"].get<double>(), 1e-9);

  patch("/cases/c1/plan", {{"hole_id", "C3"}, {"action", "set_depth"}, {"value", 60}}, 200);
  const Json p1 = patch("/cases/c1/plan", {{"hole_id", "C3"}, {"action", "activate"}}, 200);
  const Json p2 = patch("/cases/c1/plan", {{"hole_id", "C3"}, {"action", "activate"}}, 200);
  EXPECT_EQ(p1["verdicts"].dump(), p2["verdicts"].dump());
  EXPECT_GT(p1["dwell_count"].get<int>(), 0);
  EXPECT_EQ(patch("/cases/c1/plan", {{"hole_id", "C3"}, {"action", "warp"}}, 400)["error"]["code"], "invalid_argument");

  // a fresh GET restores the planning sheet
  const Json state = get("/cases/c1", 200);
  EXPECT_EQ(state["last_replan"]["verdicts"], p2["verdicts"]);
  EXPECT_EQ(state["trajectories"].size(), 1u);
  EXPECT_EQ(get("/cases/c1/plan", 200)["plan"]["device_id"], "template-6x6");

  const Json slice = get("/cases/c1/slice?source=labels&axis=2&index=10", 200);
  EXPECT_EQ(slice["pixels"].size(), 32u * 32u);
  EXPECT_EQ(get("/cases/c1/slice?source=labels&axis=x", 400)["error"]["code"], "invalid_argument");

  post("/cases/c1/advance", {{"to", "INTRAOP"}}, 200);
  post("/cases/c1/advance", {{"to", "POSTOP"}}, 200);
  EXPECT_EQ(patch("/cases/c1/plan", {{"hole_id", "C3"}, {"action", "deactivate"}}, 409)["error"]["code"], "state");
  EXPECT_EQ(get("/cases/c1/followup", 200)["complete"], false);
  upload("c1", "stage=POST", as_body(serialize_volume(phantom().t2)), 201);
  const Json f = get("/cases/c1/followup", 200);
  EXPECT_EQ(f["complete"], true);
  EXPECT_EQ(f["refs"].size(), 3u);
  EXPECT_GT(get("/cases/c1/artifacts", 200)["artifacts"].size(), 8u);
}
