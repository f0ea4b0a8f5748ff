#include "brachy/dosimetry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

namespace brachy {

double DoseGrid::max() const {
  double m = 0.0;
  for (double d : dose) m = std::max(m, d);
  return m;
}

ScalarVolume DoseGrid::to_volume() const {
  ScalarVolume vol;
  vol.grid = grid;
  vol.dtype = VoxelType::Float32;
  vol.modality = "DOSE";
  vol.voxels.assign(dose.begin(), dose.end());
  return vol;
}

DoseGrid DoseGrid::from_volume(const ScalarVolume& vol) {
  vol.validate();
  DoseGrid out;
  out.grid = vol.grid;
  out.dose.assign(vol.voxels.begin(), vol.voxels.end());
  for (double d : out.dose) {
    if (!(d >= 0.0) || !std::isfinite(d)) fail(ErrorCode::Validation, "dose grid: values must be finite and >= 0");
  }
  return out;
}

DoseGrid accumulate_dose(std::span<const DwellSource> sources, const GridGeometry& grid, const DoseKernel& kernel,
                         unsigned threads) {
  grid.validate();
  if (!(kernel.cutoff_radius_mm > 0.0)) fail(ErrorCode::InvalidArgument, "dose: cutoff radius must be positive");
  if (!(kernel.r_min_mm > 0.0)) fail(ErrorCode::InvalidArgument, "dose: r_min must be positive");
  for (const auto& s : sources) {
    if (!s.position.allFinite() || !std::isfinite(s.strength) || !std::isfinite(s.time)) {
      fail(ErrorCode::InvalidArgument, "dose: dwell sources must be finite");
    }
    if (s.strength < 0.0 || s.time < 0.0) fail(ErrorCode::InvalidArgument, "dose: strength and time must be >= 0");
  }

  DoseGrid out;
  out.grid = grid;
  out.dose.assign(grid.voxel_count(), 0.0);
  if (sources.empty()) return out;

  const double cutoff2 = kernel.cutoff_radius_mm * kernel.cutoff_radius_mm;
  const double rmin2 = kernel.r_min_mm * kernel.r_min_mm;

  struct Prepared {
    Vec3 position;
    double weight;
    std::array<int, 3> lo, hi;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(sources.size());
  for (const auto& s : sources) {
    Prepared p{s.position, s.strength * s.time, {}, {}};
    const Vec3 c = grid.continuous_index(s.position);
    bool empty = false;
    for (int a = 0; a < 3; ++a) {
      const double reach = kernel.cutoff_radius_mm / grid.spacing[a];
      const double lo = std::max(0.0, std::ceil(c[a] - reach - 1e-9));
      const double hi = std::min(static_cast<double>(grid.dims[a] - 1), std::floor(c[a] + reach + 1e-9));
      if (lo > hi) empty = true;
      p.lo[a] = static_cast<int>(lo);
      p.hi[a] = static_cast<int>(hi);
    }
    if (!empty) prepared.push_back(p);
  }

  // Along a row, r²(i) = a + i·(b + i·c) with a = |row start - source|².
  const Vec3 ex = grid.orientation.col(0) * grid.spacing[0];
  const Vec3 ey = grid.orientation.col(1) * grid.spacing[1];
  const Vec3 ez = grid.orientation.col(2) * grid.spacing[2];
  const double c = ex.squaredNorm();
  auto slab = [&](int k0, int k1) {
    for (const auto& s : prepared) {
      const int kb = std::max(k0, s.lo[2]), ke = std::min(k1, s.hi[2] + 1);
      for (int k = kb; k < ke; ++k) {
        for (int j = s.lo[1]; j <= s.hi[1]; ++j) {
          const Vec3 row = grid.origin + static_cast<double>(j) * ey + static_cast<double>(k) * ez - s.position;
          const double a = row.squaredNorm();
          const double b = 2.0 * row.dot(ex);
          double* dst = out.dose.data() + grid.index(0, j, k);
          for (int i = s.lo[0]; i <= s.hi[0]; ++i) {
            const double x = static_cast<double>(i);
            const double r2 = a + x * (b + x * c);
            if (r2 > cutoff2) continue;
            dst[i] += s.weight / std::max(r2, rmin2);
          }
        }
      }
    }
  };

  unsigned n = threads != 0 ? threads : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(grid.dims[2]));
  if (n <= 1) {
    slab(0, grid.dims[2]);
    return out;
  }
  std::vector<std::thread> pool;
  const int per = (grid.dims[2] + static_cast<int>(n) - 1) / static_cast<int>(n);
  for (int k0 = 0; k0 < grid.dims[2]; k0 += per) pool.emplace_back(slab, k0, std::min(grid.dims[2], k0 + per));
  for (auto& t : pool) t.join();
  return out;
}

double DvhCurve::volume_at(double dose_gy) const {
  // doses are descending; count the prefix with dose >= dose_gy
  const auto it = std::partition_point(doses.begin(), doses.end(), [&](double d) { return d >= dose_gy; });
  return static_cast<double>(it - doses.begin()) * voxel_cc;
}

std::vector<DvhPoint> DvhCurve::cumulative() const {
  const double total = static_cast<double>(doses.size()) * voxel_cc;
  std::vector<DvhPoint> out;
  auto point = [&](double d, std::size_t count) {
    const double v = static_cast<double>(count) * voxel_cc;
    out.push_back({d, v, total > 0.0 ? 100.0 * v / total : 0.0});
  };
  for (std::size_t n = 0; n < doses.size(); ++n) {
    if (n + 1 == doses.size() || doses[n + 1] != doses[n]) point(doses[n], n + 1);
  }
  if (out.empty() || out.back().dose_gy > 0.0) point(0.0, doses.size());
  std::reverse(out.begin(), out.end());
  return out;
}

DvhCurve dvh(const DoseGrid& dose, const LabelMap& labels, const StructureKind& kind) {
  if (!(dose.grid == labels.grid)) fail(ErrorCode::InvalidArgument, "dvh: dose and label grids differ");
  if (!labels.has(kind)) fail(ErrorCode::NotFound, "dvh: structure " + kind.name() + " is absent");
  const auto m = labels.mask(kind);
  DvhCurve curve;
  curve.structure = kind;
  curve.voxel_cc = labels.grid.voxel_volume_cc();
  for (std::size_t n = 0; n < m.size(); ++n) {
    if (m[n]) curve.doses.push_back(dose.dose[n]);
  }
  if (curve.doses.empty()) fail(ErrorCode::NotFound, "dvh: structure " + kind.name() + " has no voxels");
  std::sort(curve.doses.begin(), curve.doses.end(), std::greater<>());
  for (std::size_t n = 0; n < curve.doses.size(); ++n) curve.volume_cc += curve.voxel_cc;
  return curve;
}

DoseMetric metric_dxcc(const DvhCurve& curve, double x_cc) {
  if (!(x_cc > 0.0)) fail(ErrorCode::InvalidArgument, "Dxcc: volume must be positive");
  if (curve.doses.empty()) fail(ErrorCode::InvalidArgument, "Dxcc: empty curve");
  double acc = 0.0;
  for (double d : curve.doses) {
    acc += curve.voxel_cc;
    if (acc >= x_cc) return {d, false};
  }
  return {curve.doses.back(), true};
}

DoseMetric metric_d_percent(const DvhCurve& curve, double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) fail(ErrorCode::InvalidArgument, "D%: percent must be in (0, 100]");
  return metric_dxcc(curve, percent / 100.0 * curve.volume_cc);
}

double prescription_total(double ebrt_gy, int n_fractions, double fraction_gy) {
  if (!(ebrt_gy >= 0.0) || n_fractions < 0 || !(fraction_gy >= 0.0)) {
    fail(ErrorCode::InvalidArgument, "prescription: values must be non-negative");
  }
  return ebrt_gy + n_fractions * fraction_gy;
}

void ConstraintSet::validate() const {
  auto range = [](const DoseRange& r, const char* name) {
    if (!(r.lo >= 0.0 && r.hi >= r.lo)) fail(ErrorCode::Validation, std::string("constraints: bad range ") + name);
  };
  range(hrctv_total_gy, "hrctv_total_gy");
  range(ebrt_gy, "ebrt_gy");
  range(fraction_dose_gy, "fraction_dose_gy");
  if (!(bladder_d2cc_gy >= 0.0 && rectum_sigmoid_d2cc_gy >= 0.0 && small_bowel_d2cc_gy >= 0.0)) {
    fail(ErrorCode::Validation, "constraints: D2cc limits must be non-negative");
  }
  if (fractions_min < 0 || fractions_max < fractions_min) fail(ErrorCode::Validation, "constraints: bad fraction range");
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "PASS";
    case Verdict::Fail: return "FAIL";
    case Verdict::NotEvaluable: return "NOT_EVALUABLE";
    case Verdict::Info: return "INFO";
  }
  return "?";
}

namespace {

std::optional<DvhCurve> curve_if_present(const DoseGrid& dose, const LabelMap& labels, const StructureKind& kind) {
  if (!labels.has(kind)) return std::nullopt;
  const auto m = labels.mask(kind);
  if (std::none_of(m.begin(), m.end(), [](auto v) { return v != 0; })) return std::nullopt;
  return dvh(dose, labels, kind);
}

}  // namespace

std::vector<VerdictRow> check_constraints(const DoseGrid& dose, const LabelMap& labels, const ConstraintSet& rx,
                                          double ebrt_gy, int n_fractions) {
  rx.validate();
  if (!(dose.grid == labels.grid)) fail(ErrorCode::InvalidArgument, "constraints: dose and label grids differ");
  std::vector<VerdictRow> rows;

  {
    VerdictRow row;
    row.structure = "HR_CTV";
    row.metric = "D90";
    row.limit_range_gy = rx.hrctv_total_gy;
    if (auto c = curve_if_present(dose, labels, StructureTag::HR_CTV)) {
      const DoseMetric m = metric_d_percent(*c, 90.0);
      row.per_fraction_gy = m.dose_gy;
      row.value_gy = prescription_total(ebrt_gy, n_fractions, m.dose_gy);
      row.verdict = rx.hrctv_total_gy.contains(*row.value_gy) ? Verdict::Pass : Verdict::Fail;
    }
    rows.push_back(std::move(row));
  }

  const std::array<std::pair<StructureTag, double>, 3> oars{{
      {StructureTag::OAR_BLADDER, rx.bladder_d2cc_gy},
      {StructureTag::OAR_RECTUM_SIGMOID, rx.rectum_sigmoid_d2cc_gy},
      {StructureTag::OAR_SMALL_BOWEL, rx.small_bowel_d2cc_gy},
  }};
  std::vector<std::pair<StructureKind, DvhCurve>> present;
  for (const auto& [tag, limit] : oars) {
    const StructureKind kind(tag);
    VerdictRow row;
    row.structure = kind.name();
    row.metric = "D2cc";
    row.limit_gy = limit;
    if (auto c = curve_if_present(dose, labels, kind)) {
      const DoseMetric m = metric_dxcc(*c, 2.0);
      row.per_fraction_gy = m.dose_gy;
      row.undersized = m.undersized;
      row.value_gy = prescription_total(ebrt_gy, n_fractions, m.dose_gy);
      row.verdict = *row.value_gy <= limit ? Verdict::Pass : Verdict::Fail;
      present.emplace_back(kind, std::move(*c));
    }
    rows.push_back(std::move(row));
  }
  for (const auto& [kind, curve] : present) {
    VerdictRow row;
    row.structure = kind.name();
    row.metric = "D0.1cc";
    const DoseMetric m = metric_dxcc(curve, 0.1);
    row.per_fraction_gy = m.dose_gy;
    row.undersized = m.undersized;
    row.value_gy = prescription_total(ebrt_gy, n_fractions, m.dose_gy);
    row.verdict = Verdict::Info;
    rows.push_back(std::move(row));
  }
  return rows;
}

bool has_failures(std::span<const VerdictRow> rows) {
  return std::any_of(rows.begin(), rows.end(), [](const VerdictRow& r) { return r.verdict == Verdict::Fail; });
}

std::vector<std::string> check_course(const ConstraintSet& rx, double ebrt_gy, int n_fractions, double fraction_gy) {
  std::vector<std::string> out;
  if (!rx.ebrt_gy.contains(ebrt_gy)) out.push_back("EBRT dose outside the configured range");
  if (n_fractions < rx.fractions_min || n_fractions > rx.fractions_max) {
    out.push_back("fraction count outside the configured range");
  }
  if (!rx.fraction_dose_gy.contains(fraction_gy)) out.push_back("fraction dose outside the configured range");
  return out;
}

}  // namespace brachy
