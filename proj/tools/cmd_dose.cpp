#include "cli.hpp"

#include <iomanip>
#include <iostream>

namespace brachy::cli {

namespace {

void print_verdicts(std::ostream& os, const Json& rows) {
  os << std::left << std::setw(22) << "STRUCTURE" << std::setw(8) << "METRIC" << std::setw(12) << "TOTAL_GY"
     << std::setw(12) << "FRACTION_GY" << std::setw(16) << "LIMIT_GY" << "VERDICT\n";
  for (const auto& r : rows) {
    os << std::setw(22) << r["structure"].get<std::string>() << std::setw(8) << r["metric"].get<std::string>()
       << std::setw(12) << format_gy(r["value_gy"]) << std::setw(12) << format_gy(r["per_fraction_gy"])
       << std::setw(16) << format_gy(r["limit_gy"]) << r["verdict"].get<std::string>()
       << (r.value("undersized", false) ? " (undersized)" : "") << "\n";
  }
}

}  // namespace

void add_dose_commands(CLI::App& app, Context& ctx) {
  {
    struct Opts {
      std::string plan, grid, output;
      double dwell_weight = 700.0;
      unsigned threads = 0;
      DoseKernel kernel;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("dose", "Point-source dose of a needle plan on a label or image grid");
    cmd->add_option("--plan", o->plan, "Plan JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--grid", o->grid, "SVOL file whose grid receives the dose")->required()->check(CLI::ExistingFile);
    cmd->add_option("--dwell-weight", o->dwell_weight, "strength x time per dwell position (Gy mm^2)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--cutoff", o->kernel.cutoff_radius_mm, "Kernel cutoff radius (mm)")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", o->threads, "Worker threads (0 = hardware)");
    cmd->add_option("-o,--output", o->output, "Dose SVOL")->required();
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const NeedlePlan plan = plan_from_json(read_json_file(o->plan));
        const ScalarVolume grid = load_volume(o->grid);
        const auto sources = plan_sources(plan, o->dwell_weight);
        const DoseGrid dose = accumulate_dose(sources, grid.grid, o->kernel, o->threads);
        save_volume(dose.to_volume(), o->output);
        emit(ctx, {{"dwell_count", sources.size()}, {"max_gy", dose.max()}});
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string dose, labels;
      std::vector<std::string> structures;
      bool curves = false;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("dvh", "Cumulative DVH and D90, D2cc, D0.1cc per structure");
    cmd->add_option("--dose", o->dose, "Dose SVOL (Gy per fraction)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--labels", o->labels, "Label map")->required()->check(CLI::ExistingFile);
    cmd->add_option("--structure", o->structures, "Structure name; repeatable (default: every labeled structure)");
    cmd->add_flag("--curves", o->curves, "Include the cumulative curve points");
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const DoseGrid dose = DoseGrid::from_volume(load_volume(o->dose));
        const LabelMap labels = load_label_map(o->labels);
        std::vector<StructureKind> kinds;
        if (o->structures.empty()) {
          for (const auto& [code, k] : labels.legend) kinds.push_back(k);
        } else {
          for (const auto& s : o->structures) kinds.push_back(StructureKind::parse(s));
        }
        Json rows = Json::array();
        for (const auto& k : kinds) {
          if (!labels.has(k)) fail(ErrorCode::NotFound, "labels have no structure '" + k.name() + "'");
          const DvhCurve c = dvh(dose, labels, k);
          Json row = {{"structure", k.name()},
                      {"volume_cc", c.volume_cc},
                      {"max_gy", c.doses.empty() ? 0.0 : c.doses.front()},
                      {"d90", to_json(metric_d_percent(c, 90.0))},
                      {"d2cc", to_json(metric_dxcc(c, 2.0))},
                      {"d0_1cc", to_json(metric_dxcc(c, 0.1))}};
          if (o->curves) row["points"] = to_json(c)["points"];
          rows.push_back(row);
        }
        emit(ctx, {{"structures", rows}}, [&](std::ostream& os) {
          os << std::left << std::setw(22) << "STRUCTURE" << std::setw(12) << "VOLUME_CC" << std::setw(10) << "MAX"
             << std::setw(10) << "D90" << std::setw(10) << "D2cc" << "D0.1cc\n";
          os << std::fixed << std::setprecision(3);
          for (const auto& r : rows)
            os << std::setw(22) << r["structure"].get<std::string>() << std::setw(12) << r["volume_cc"].get<double>()
               << std::setw(10) << r["max_gy"].get<double>() << std::setw(10) << r["d90"]["dose_gy"].get<double>()
               << std::setw(10) << r["d2cc"]["dose_gy"].get<double>() << r["d0_1cc"]["dose_gy"].get<double>() << "\n";
        });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string dose, labels;
      CourseSpec course;
      bool strict = false;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("check", "Course totals against the HR-CTV aim and organ D2cc limits");
    cmd->add_option("--dose", o->dose, "Dose SVOL (Gy per fraction)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--labels", o->labels, "Label map")->required()->check(CLI::ExistingFile);
    cmd->add_option("--ebrt", o->course.ebrt_gy, "External-beam dose (Gy)");
    cmd->add_option("--fractions", o->course.n_fractions, "Brachytherapy fractions");
    cmd->add_option("--fraction-dose", o->course.fraction_gy, "Prescribed dose per fraction (Gy)");
    cmd->add_flag("--strict", o->strict, "Exit 1 when any constraint fails");
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        o->course.validate();
        const ConstraintSet rx;
        const DoseGrid dose = DoseGrid::from_volume(load_volume(o->dose));
        const LabelMap labels = load_label_map(o->labels);
        const auto rows = check_constraints(dose, labels, rx, o->course.ebrt_gy, o->course.n_fractions);
        const auto advisories = check_course(rx, o->course.ebrt_gy, o->course.n_fractions, o->course.fraction_gy);
        const Json verdicts = to_json(std::span<const VerdictRow>(rows));
        const bool failed = has_failures(rows);
        emit(ctx,
             {{"course", to_json(o->course)},
              {"prescription_total_gy",
               prescription_total(o->course.ebrt_gy, o->course.n_fractions, o->course.fraction_gy)},
              {"verdicts", verdicts},
              {"has_failures", failed},
              {"advisories", advisories}},
             [&](std::ostream& os) {
               print_verdicts(os, verdicts);
               for (const auto& a : advisories) os << "advisory: " << a << "\n";
             });
        if (o->strict && failed) {
          for (const auto& r : verdicts)
            if (r["verdict"] == "FAIL")
              std::cerr << "FAIL " << r["structure"].get<std::string>() << " " << r["metric"].get<std::string>()
                        << " " << format_gy(r["value_gy"]) << " Gy (limit " << format_gy(r["limit_gy"]) << ")\n";
          return kExitDomain;
        }
        return kExitOk;
      };
    });
  }
}

}  // namespace brachy::cli
