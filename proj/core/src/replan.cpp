#include "brachy/replan.hpp"

#include <cmath>

namespace brachy {

void CourseSpec::validate() const {
  if (!(ebrt_gy >= 0.0) || !std::isfinite(ebrt_gy)) fail(ErrorCode::Validation, "course: ebrt_gy must be >= 0");
  if (n_fractions < 1) fail(ErrorCode::Validation, "course: n_fractions must be >= 1");
  if (!(fraction_gy >= 0.0) || !std::isfinite(fraction_gy)) {
    fail(ErrorCode::Validation, "course: fraction_gy must be >= 0");
  }
}

std::vector<DwellSource> plan_sources(const NeedlePlan& plan, double dwell_weight) {
  if (!(dwell_weight >= 0.0) || !std::isfinite(dwell_weight)) {
    fail(ErrorCode::InvalidArgument, "dwell weight must be finite and >= 0");
  }
  std::vector<DwellSource> out;
  for (const Needle* n : plan.active_needles()) {
    for (const Vec3& p : dwell_positions(plan, n->hole_id)) out.push_back({p, dwell_weight, 1.0});
  }
  return out;
}

ReplanResult replan(const NeedlePlan& plan, const LabelMap& labels, const ReplanConfig& cfg) {
  cfg.course.validate();
  cfg.constraints.validate();
  ReplanResult r;
  const auto sources = plan_sources(plan, cfg.dwell_weight);
  r.dwell_count = sources.size();
  r.dose = accumulate_dose(sources, labels.grid, cfg.kernel, cfg.threads);

  for (const auto& [code, kind] : labels.legend) {
    DvhCurve curve;
    try {
      curve = dvh(r.dose, labels, kind);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NotFound) continue;
      throw;
    }
    StructureMetrics m;
    m.structure = kind.name();
    m.volume_cc = curve.volume_cc;
    m.max_gy = curve.doses.front();
    m.d90 = metric_d_percent(curve, 90.0);
    m.d2cc = metric_dxcc(curve, 2.0);
    m.d0_1cc = metric_dxcc(curve, 0.1);
    r.metrics.push_back(std::move(m));
  }
  r.verdicts = check_constraints(r.dose, labels, cfg.constraints, cfg.course.ebrt_gy, cfg.course.n_fractions);
  r.advisories = check_course(cfg.constraints, cfg.course.ebrt_gy, cfg.course.n_fractions, cfg.course.fraction_gy);
  return r;
}

double calibrate_dwell_weight(const NeedlePlan& plan, const LabelMap& labels, double d90_per_fraction_gy,
                              const DoseKernel& kernel) {
  if (!(d90_per_fraction_gy > 0.0)) fail(ErrorCode::InvalidArgument, "calibration target must be positive");
  const auto sources = plan_sources(plan, 1.0);
  if (sources.empty()) fail(ErrorCode::State, "calibration needs at least one active needle");
  const DoseGrid dose = accumulate_dose(sources, labels.grid, kernel);
  const DoseMetric d90 = metric_d_percent(dvh(dose, labels, StructureTag::HR_CTV), 90.0);
  if (!(d90.dose_gy > 0.0)) fail(ErrorCode::Degenerate, "HR-CTV receives no dose from this plan");
  return d90_per_fraction_gy / d90.dose_gy;
}

}  // namespace brachy
