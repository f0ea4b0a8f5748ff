#include "brachy/archive.hpp"
#include "brachy/file_io.hpp"
#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>
#include <thread>

using namespace brachy;

namespace {

std::vector<std::uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::Format;
}

}  // namespace

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex(bytes("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Archive, CaseIds) {
  EXPECT_TRUE(valid_case_id("c1"));
  EXPECT_TRUE(valid_case_id("case-2024_01.a"));
  EXPECT_FALSE(valid_case_id(""));
  EXPECT_FALSE(valid_case_id(".."));
  EXPECT_FALSE(valid_case_id("a/b"));
  EXPECT_FALSE(valid_case_id(std::string(65, 'a')));
}

TEST(Archive, CreateAndConflict) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  EXPECT_TRUE(ar.has_case("c1"));
  EXPECT_EQ(code_of([&] { ar.create_case("c1"); }), ErrorCode::Conflict);
  EXPECT_EQ(code_of([&] { ar.record("nope"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { ar.create_case("../x"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(ar.case_ids(), std::vector<std::string>{"c1"});
}

TEST(Archive, FirstStoreIsVersionOneAndLaidOut) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  const auto ref = ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("{\"plan\":1}"));
  EXPECT_EQ(ref.version, 1);
  EXPECT_EQ(ref.hash, sha256_hex(bytes("{\"plan\":1}")));
  EXPECT_EQ(ref.filename, "cases/c1/PRE/PLAN/1_" + ref.hash.substr(0, 8) + ".json");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / ref.filename));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "cases/c1/index.json"));
}

TEST(Archive, IdenticalBytesAreIdempotent) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  const auto a = ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("same"));
  const auto b = ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("same"));
  EXPECT_EQ(a, b);
  EXPECT_EQ(ar.record("c1").artifacts.size(), 1u);
}

TEST(Archive, SecondPlanIsVersionTwoAndFirstStillReadable) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  const auto v1 = ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("one"));
  const auto v2 = ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("two"));
  EXPECT_EQ(v2.version, 2);
  EXPECT_EQ(ar.fetch(v1), bytes("one"));
  EXPECT_EQ(ar.fetch(v2), bytes("two"));
  // storing v1's bytes again returns v1
  EXPECT_EQ(ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("one")), v1);
}

TEST(Archive, LatestAfterThreeStores) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  for (int i = 0; i < 3; ++i) ar.store("c1", PlanStage::INTRA, ArtifactKind::TRANSFORM, std::to_string(i));
  EXPECT_EQ(ar.latest("c1", PlanStage::INTRA, ArtifactKind::TRANSFORM)->version, 3);
  EXPECT_FALSE(ar.latest("c1", PlanStage::PRE, ArtifactKind::TRANSFORM));
}

TEST(Archive, VersionsAreDensePerStageAndKind) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  std::mt19937 rng(1);
  std::map<std::pair<int, int>, int> expected;
  for (int i = 0; i < 60; ++i) {
    const auto stage = static_cast<PlanStage>(rng() % 3);
    const auto kind = static_cast<ArtifactKind>(rng() % 7);
    const std::string payload = std::to_string(rng() % 25);
    const auto before = ar.versions("c1", stage, kind);
    const auto ref = ar.store("c1", stage, kind, payload);
    const bool dup = std::any_of(before.begin(), before.end(), [&](const auto& r) { return r.hash == ref.hash; });
    if (!dup) EXPECT_EQ(ref.version, static_cast<int>(before.size()) + 1);
  }
  for (int s = 0; s < 3; ++s) {
    for (int k = 0; k < 7; ++k) {
      const auto v = ar.versions("c1", static_cast<PlanStage>(s), static_cast<ArtifactKind>(k));
      for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i].version, static_cast<int>(i) + 1);
    }
  }
}

TEST(Archive, AppendOnlyRefsKeepTheirBytes) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  std::vector<std::pair<ArtifactRef, std::vector<std::uint8_t>>> seen;
  std::mt19937 rng(2);
  for (int i = 0; i < 40; ++i) {
    std::vector<std::uint8_t> b(1 + rng() % 50);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng() % 4);
    seen.emplace_back(ar.store("c1", static_cast<PlanStage>(rng() % 3), ArtifactKind::DOSE, b), b);
    for (const auto& [ref, content] : seen) ASSERT_EQ(ar.fetch(ref), content);
  }
}

TEST(Archive, TamperedFileIsCorruption) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  const auto ref = ar.store("c1", PlanStage::POST, ArtifactKind::VOLUME, std::string("voxels"));
  {
    std::ofstream f(dir.path() / ref.filename, std::ios::binary | std::ios::trunc);
    f << "voxelz";
  }
  EXPECT_EQ(code_of([&] { ar.fetch(ref); }), ErrorCode::Corruption);
  std::filesystem::remove(dir.path() / ref.filename);
  EXPECT_EQ(code_of([&] { ar.fetch(ref); }), ErrorCode::NotFound);
  ArtifactRef escape = ref;
  escape.filename = "../outside";
  EXPECT_EQ(code_of([&] { ar.fetch(escape); }), ErrorCode::InvalidArgument);
}

TEST(Archive, SameBytesShareOnePhysicalCopy) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  const auto a = ar.store("c1", PlanStage::PRE, ArtifactKind::REPORT, std::string("shared"));
  const auto b = ar.store("c1", PlanStage::POST, ArtifactKind::REPORT, std::string("shared"));
  EXPECT_NE(a.filename, b.filename);
  EXPECT_TRUE(std::filesystem::equivalent(dir.path() / a.filename, dir.path() / b.filename));
}

TEST(Archive, FollowupOverlay) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  auto o = ar.followup_overlay("c1");
  EXPECT_FALSE(o.complete);
  EXPECT_EQ(o.missing, (std::vector<std::string>{"VOLUME@POST", "DEVICE", "TRANSFORM"}));

  ar.store("c1", PlanStage::PRE, ArtifactKind::DEVICE, std::string("dev"));
  ar.store("c1", PlanStage::PRE, ArtifactKind::TRANSFORM, std::string("reg1"));
  ar.store("c1", PlanStage::INTRA, ArtifactKind::VOLUME, std::string("intra"));
  o = ar.followup_overlay("c1");
  EXPECT_EQ(o.missing, std::vector<std::string>{"VOLUME@POST"});

  ar.store("c1", PlanStage::PRE, ArtifactKind::TRANSFORM, std::string("reg2"));
  ar.store("c1", PlanStage::POST, ArtifactKind::VOLUME, std::string("post"));
  o = ar.followup_overlay("c1");
  ASSERT_TRUE(o.complete);
  EXPECT_TRUE(o.missing.empty());
  EXPECT_EQ(o.registration->version, 2);
  EXPECT_EQ(ar.fetch(*o.registration), bytes("reg2"));
  EXPECT_EQ(o.volume->stage, PlanStage::POST);
}

TEST(Archive, ConcurrentWritersKeepVersionsDense) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 10; ++i) ar.store("c1", PlanStage::INTRA, ArtifactKind::PLAN, std::to_string(t * 100 + i));
    });
  }
  for (auto& th : threads) th.join();
  const auto v = ar.versions("c1", PlanStage::INTRA, ArtifactKind::PLAN);
  ASSERT_EQ(v.size(), 80u);
  std::set<std::string> hashes;
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v[i].version, static_cast<int>(i) + 1);
    hashes.insert(v[i].hash);
  }
  EXPECT_EQ(hashes.size(), 80u);
}

TEST(Archive, TwoInstancesShareTheLock) {
  ScratchDir dir;
  Archive a(dir.path());
  Archive b(dir.path());
  a.create_case("c1");
  std::thread ta([&] {
    for (int i = 0; i < 20; ++i) a.store("c1", PlanStage::PRE, ArtifactKind::PLAN, "a" + std::to_string(i));
  });
  std::thread tb([&] {
    for (int i = 0; i < 20; ++i) b.store("c1", PlanStage::PRE, ArtifactKind::PLAN, "b" + std::to_string(i));
  });
  ta.join();
  tb.join();
  EXPECT_EQ(a.versions("c1", PlanStage::PRE, ArtifactKind::PLAN).size(), 40u);
}

TEST(Archive, DeterministicIndexUnderSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  std::string first;
  for (int run = 0; run < 2; ++run) {
    ScratchDir dir;
    Archive ar(dir.path());
    ar.create_case("c1");
    ar.store("c1", PlanStage::PRE, ArtifactKind::PLAN, std::string("p"));
    const std::string idx = read_text_file(dir.path() / "cases/c1/index.json");
    if (run == 0) first = idx;
    else EXPECT_EQ(idx, first);
  }
  EXPECT_NE(first.find("2023-11-14T22:13:20Z"), std::string::npos);
  ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST(Archive, Documents) {
  ScratchDir dir;
  Archive ar(dir.path());
  ar.create_case("c1");
  EXPECT_FALSE(ar.get_document("c1", "state.json"));
  ar.put_document("c1", "state.json", "{}");
  EXPECT_EQ(*ar.get_document("c1", "state.json"), "{}");
  EXPECT_EQ(code_of([&] { ar.put_document("zz", "state.json", "{}"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { ar.put_document("c1", "index.json", "{}"); }), ErrorCode::InvalidArgument);
}
