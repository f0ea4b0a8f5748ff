#pragma once

#include "brachy/dosimetry.hpp"
#include "brachy/planning.hpp"

#include <string>
#include <vector>

namespace brachy {

struct CourseSpec {
  double ebrt_gy = 45.0;
  int n_fractions = 5;
  double fraction_gy = 7.0;

  void validate() const;
  bool operator==(const CourseSpec&) const = default;
};

struct ReplanConfig {
  /// strength·time of every dwell position, Gy·mm² per fraction.
  double dwell_weight = 700.0;
  DoseKernel kernel;
  ConstraintSet constraints;
  CourseSpec course;
  unsigned threads = 0;
};

/// One source per dwell position of every active needle, in needle order.
std::vector<DwellSource> plan_sources(const NeedlePlan& plan, double dwell_weight);

struct StructureMetrics {
  std::string structure;
  double volume_cc = 0.0;
  double max_gy = 0.0;
  DoseMetric d90;
  DoseMetric d2cc;
  DoseMetric d0_1cc;
};

struct ReplanResult {
  DoseGrid dose;
  std::size_t dwell_count = 0;
  std::vector<StructureMetrics> metrics;
  std::vector<VerdictRow> verdicts;
  std::vector<std::string> advisories;
};

/// Dose on the label grid, per-structure metrics, constraint verdicts and
/// course advisories for one plan.
ReplanResult replan(const NeedlePlan& plan, const LabelMap& labels, const ReplanConfig& cfg);

/// Dwell weight giving an HR-CTV D90 of `d90_per_fraction_gy` for `plan`.
/// Dose is linear in the weight, so one unit-weight evaluation suffices.
double calibrate_dwell_weight(const NeedlePlan& plan, const LabelMap& labels, double d90_per_fraction_gy,
                              const DoseKernel& kernel = {});

}  // namespace brachy
