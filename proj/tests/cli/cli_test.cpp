#include "brachy/phantom.hpp"
#include "brachy/serialization.hpp"

#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <random>

#include <sys/wait.h>

using namespace brachy;
namespace fs = std::filesystem;

namespace {

struct Invocation {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  Invocation run(const std::string& args) {
    const fs::path err = dir.path() / "stderr.txt";
    const std::string cmd = "cd '" + dir.path().string() + "' && '" BRACHY_CLI_PATH "' " + args + " 2>'" + err.string() + "'";
    Invocation r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf;
    for (std::size_t n; (n = fread(buf.data(), 1, buf.size(), p)) > 0;) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
  }

  void write(const std::string& name, const std::vector<std::uint8_t>& bytes) {
    std::ofstream(dir.path() / name, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  void write(const std::string& name, const Json& j) { std::ofstream(dir.path() / name) << j.dump(2); }

  /// Uniform per-fraction dose by structure.
  void write_dose(const std::string& name, const LabelMap& labels, const std::map<std::string, double>& by_structure) {
    DoseGrid d{labels.grid, std::vector<double>(labels.voxels.size(), 0.0)};
    for (std::size_t n = 0; n < d.dose.size(); ++n) {
      const auto it = labels.legend.find(labels.voxels[n]);
      if (it == labels.legend.end()) continue;
      const auto dose = by_structure.find(it->second.name());
      if (dose != by_structure.end()) d.dose[n] = dose->second;
    }
    write(name, serialize_volume(d.to_volume()));
  }

  ScratchDir dir{"cli"};
};

const Phantom& phantom() {
  static const Phantom ph = [] {
    PhantomSpec spec;
    spec.dims = 32;
    spec.spacing_mm = 4.0;
    return make_phantom(spec);
  }();
  return ph;
}

}  // namespace

TEST_F(CliTest, StrictCheckPassesWithinLimits) {
  write("labels.svol", serialize_label_map(phantom().labels));
  // 45 + 5 x 7.5 = 82.5 Gy to the HR-CTV, every organ at 45 + 5 x 1 = 50 Gy
  write_dose("dose.svol", phantom().labels,
             {{"HR_CTV", 7.5}, {"GTV", 7.5}, {"OAR_BLADDER", 1.0}, {"OAR_RECTUM_SIGMOID", 1.0}, {"OAR_SMALL_BOWEL", 1.0}});
  const Invocation r = run("check --dose dose.svol --labels labels.svol --strict");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("82.50"), std::string::npos);
}

TEST_F(CliTest, StrictCheckPassesOnPhantomPlan) {
  ASSERT_EQ(run("phantom -o ph").code, 0);
  const double weight = Json::parse(slurp(dir.path() / "ph" / "phantom.json"))["dwell_weight"];
  char w[64];
  std::snprintf(w, sizeof w, "%.17g", weight);
  ASSERT_EQ(run(std::string("dose --plan ph/plan.json --grid ph/labels.svol --dwell-weight ") + w + " -o dose.svol").code,
            0);
  const Invocation r = run("check --dose dose.svol --labels ph/labels.svol --strict");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, StrictCheckFailsOnRectumAboveSeventy) {
  write("labels.svol", serialize_label_map(phantom().labels));
  // rectum 45 + 5 x 5.1 = 70.5 Gy
  write_dose("dose.svol", phantom().labels,
             {{"HR_CTV", 7.5}, {"GTV", 7.5}, {"OAR_BLADDER", 1.0}, {"OAR_RECTUM_SIGMOID", 5.1}, {"OAR_SMALL_BOWEL", 1.0}});
  const Invocation r = run("check --dose dose.svol --labels labels.svol --strict");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("FAIL OAR_RECTUM_SIGMOID D2cc 70.50 Gy"), std::string::npos) << r.err;
  EXPECT_EQ(r.err.find("FAIL HR_CTV"), std::string::npos);
  EXPECT_EQ(r.err.find("FAIL OAR_BLADDER"), std::string::npos);

  // without --strict the table is printed and the exit code stays 0
  const Invocation loose = run("check --dose dose.svol --labels labels.svol");
  EXPECT_EQ(loose.code, 0);
  EXPECT_NE(loose.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, RegisterExactLandmarks) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const RigidTransform truth =
        RigidTransform::from_axis_angle(Vec3(u(rng), u(rng), 1.0), 3.0 * u(rng), 40.0 * Vec3(u(rng), u(rng), u(rng)));
    LandmarkPairs pairs;
    pairs.model_points = {{-25, -25, 0}, {25, -25, 0}, {-25, 25, 0}};
    pairs.image_points = apply_transform(truth, pairs.model_points);
    write("landmarks.json", to_json(pairs));
    const Invocation r = run("--json register --landmarks landmarks.json -o reg.json");
    ASSERT_EQ(r.code, 0) << r.err;
    const Json j = Json::parse(r.out);
    EXPECT_LT(j["landmark_rms"].get<double>(), 1e-9);
    const RigidTransform t = transform_from_json(j["transform"]);
    EXPECT_LT((t.rotation - truth.rotation).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((t.translation - truth.translation).norm(), 1e-9);
    EXPECT_TRUE(fs::exists(dir.path() / "reg.json"));
  }
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("check --dose").code, 2);
  EXPECT_EQ(run("check --labels labels.svol").code, 2);
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("register --landmarks a.json --samples many").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, DomainErrorsExitOne) {
  // a missing input file is rejected while parsing arguments
  EXPECT_EQ(run("register --landmarks missing.json").code, 2);
  write("landmarks.json", Json{{"model_points", {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}},
                               {"image_points", {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}}});
  const Invocation r = run("register --landmarks landmarks.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error [degenerate]"), std::string::npos) << r.err;
}
