#pragma once

#include "brachy/volume.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace brachy {

struct DwellSource {
  Vec3 position = Vec3::Zero();
  double strength = 1.0;  // Gy·mm² per unit time
  double time = 1.0;
};

/// Absorbed dose per brachytherapy fraction, one value per voxel.
struct DoseGrid {
  GridGeometry grid;
  std::vector<double> dose;

  double at(int i, int j, int k) const { return dose[grid.index(i, j, k)]; }
  double max() const;
  /// float32 SVOL view with modality "DOSE".
  ScalarVolume to_volume() const;
  static DoseGrid from_volume(const ScalarVolume& vol);
};

struct DoseKernel {
  double cutoff_radius_mm = 150.0;
  /// Distances below this are clamped, keeping dose finite at a source.
  double r_min_mm = 0.5;
};

/// Isotropic inverse-square point-source superposition:
/// dose(v) = Σ strength·time / max(r, r_min)² over sources with r <= cutoff.
/// Work is split over z-slabs; each voxel sums its sources in input order, so
/// the result does not depend on `threads`.
DoseGrid accumulate_dose(std::span<const DwellSource> sources, const GridGeometry& grid, const DoseKernel& kernel = {},
                         unsigned threads = 0);

struct DvhPoint {
  double dose_gy;
  double volume_cc;
  double percent;
};

struct DvhCurve {
  StructureKind structure;
  /// Exact per-voxel doses, hottest first.
  std::vector<double> doses;
  double voxel_cc = 0.0;
  /// Sum of voxel volumes in sweep order.
  double volume_cc = 0.0;

  /// Volume receiving at least `dose_gy`.
  double volume_at(double dose_gy) const;
  /// One point per distinct dose level, plus the zero-dose point.
  std::vector<DvhPoint> cumulative() const;
};

DvhCurve dvh(const DoseGrid& dose, const LabelMap& labels, const StructureKind& kind);

struct DoseMetric {
  double dose_gy = 0.0;
  /// The structure is smaller than the requested volume; dose is the structure minimum.
  bool undersized = false;
};

/// Minimum dose to the hottest `x_cc` of the structure: the dose of the voxel
/// at which the accumulated hottest-first volume first reaches `x_cc`.
DoseMetric metric_dxcc(const DvhCurve& curve, double x_cc);
/// Same sweep with x = percent / 100 · volume.
DoseMetric metric_d_percent(const DvhCurve& curve, double percent);

/// External-beam dose plus the brachytherapy fractions, as physical dose.
double prescription_total(double ebrt_gy, int n_fractions, double fraction_gy);

struct DoseRange {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct ConstraintSet {
  DoseRange hrctv_total_gy{80.0, 90.0};
  double bladder_d2cc_gy = 90.0;
  double rectum_sigmoid_d2cc_gy = 70.0;
  double small_bowel_d2cc_gy = 55.0;
  DoseRange ebrt_gy{40.0, 50.0};
  int fractions_min = 3;
  int fractions_max = 5;
  DoseRange fraction_dose_gy{5.5, 7.0};

  void validate() const;
};

enum class Verdict { Pass, Fail, NotEvaluable, Info };
std::string_view to_string(Verdict v);

struct VerdictRow {
  std::string structure;
  std::string metric;
  /// Course total: EBRT plus fractions times the per-fraction metric.
  std::optional<double> value_gy;
  std::optional<double> per_fraction_gy;
  std::optional<double> limit_gy;          // upper limit rows
  std::optional<DoseRange> limit_range_gy;  // target range rows
  Verdict verdict = Verdict::NotEvaluable;
  bool undersized = false;
};

/// Rows, in order: HR_CTV D90 (total vs target range), then D2cc for bladder,
/// rectum/sigmoid and small bowel (total vs upper limit), then informational
/// D0.1cc rows for the organs that are present.
std::vector<VerdictRow> check_constraints(const DoseGrid& dose, const LabelMap& labels, const ConstraintSet& rx,
                                          double ebrt_gy, int n_fractions);

bool has_failures(std::span<const VerdictRow> rows);

/// Advisories for a course outside the configured EBRT, fraction-count or
/// fraction-dose ranges.
std::vector<std::string> check_course(const ConstraintSet& rx, double ebrt_gy, int n_fractions, double fraction_gy);

}  // namespace brachy
