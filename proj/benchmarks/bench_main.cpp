#include "brachy/igtlink.hpp"
#include "brachy/mesh.hpp"
#include "brachy/phantom.hpp"
#include "brachy/registration.hpp"
#include "brachy/replan.hpp"
#include "brachy/segmentation.hpp"

#include <benchmark/benchmark.h>

#include <numbers>
#include <random>

using namespace brachy;

namespace {

const Phantom& phantom(int dims) {
  static std::map<int, Phantom> cache;
  auto it = cache.find(dims);
  if (it == cache.end()) {
    PhantomSpec spec;
    spec.dims = dims;
    spec.spacing_mm = 128.0 / dims;
    it = cache.emplace(dims, make_phantom(spec)).first;
  }
  return it->second;
}

}  // namespace

static void BM_Replan(benchmark::State& state) {
  const Phantom& ph = phantom(static_cast<int>(state.range(0)));
  const NeedlePlan plan = reference_plan(ph);
  ReplanConfig cfg;
  cfg.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(replan(plan, ph.labels, cfg));
  state.counters["dwells"] = static_cast<double>(plan_sources(plan, 1.0).size());
}
BENCHMARK(BM_Replan)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Icp(benchmark::State& state) {
  const PointCloud model = sample_surface(make_template({}).mesh, static_cast<std::size_t>(state.range(0)), 1);
  const RigidTransform truth = RigidTransform::from_axis_angle(Vec3(1, 2, 3), 8.0 * std::numbers::pi / 180.0, Vec3(3, -2, 4));
  const PointCloud target = apply_transform(truth, model);
  for (auto _ : state) benchmark::DoNotOptimize(icp_refine(model, target, RigidTransform::identity()));
}
BENCHMARK(BM_Icp)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

static void BM_GrowCut(benchmark::State& state) {
  const Phantom& ph = phantom(static_cast<int>(state.range(0)));
  LabelMap seeds = LabelMap::empty_like(ph.labels.grid);
  const auto& g = seeds.grid;
  const auto hr = seeds.ensure_code(StructureTag::HR_CTV);
  const auto bg = seeds.ensure_code(StructureKind::other("BACKGROUND"));
  const int c = g.dims[0] / 2;
  seeds.voxels[g.index(c, c, (g.dims[2] * 3) / 4 - 2)] = hr;
  seeds.voxels[g.index(1, 1, 1)] = bg;
  for (auto _ : state) benchmark::DoNotOptimize(growcut_run(ph.t2, seeds, 200));
}
BENCHMARK(BM_GrowCut)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Margin(benchmark::State& state) {
  const Phantom& ph = phantom(64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(expand_margin(ph.labels, StructureTag::HR_CTV, StructureTag::IR_CTV, 10.0));
  }
}
BENCHMARK(BM_Margin)->Unit(benchmark::kMillisecond);

static void BM_IgtlCodec(benchmark::State& state) {
  const Phantom& ph = phantom(static_cast<int>(state.range(0)));
  const auto [geometry, image] = igtl::volume_messages(ph.t2, "t2");
  std::size_t bytes = 0;
  for (auto _ : state) {
    const auto wire = igtl::encode(image);
    bytes += wire.size();
    benchmark::DoNotOptimize(igtl::decode(wire, std::uint64_t{1} << 30));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_IgtlCodec)->Arg(32)->Arg(64);

static void BM_IgtlTransform(benchmark::State& state) {
  const igtl::Message m = igtl::Message::transform("needle", RigidTransform::identity(), 42);
  for (auto _ : state) benchmark::DoNotOptimize(igtl::decode(igtl::encode(m)));
}
BENCHMARK(BM_IgtlTransform);

static void BM_StlParse(benchmark::State& state) {
  const auto format = state.range(0) ? StlFormat::Ascii : StlFormat::Binary;
  const auto bytes = serialize_stl(make_template({}).mesh, format);
  for (auto _ : state) benchmark::DoNotOptimize(parse_stl(bytes));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
  state.SetLabel(state.range(0) ? "ascii" : "binary");
}
BENCHMARK(BM_StlParse)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
