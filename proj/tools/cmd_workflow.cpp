#include "cli.hpp"

#include "brachy/file_io.hpp"
#include "brachy/phantom.hpp"
#include "brachy/workstation.hpp"

#include <iomanip>
#include <iostream>

namespace brachy::cli {

namespace {

namespace fs = std::filesystem;

void print_case(std::ostream& os, const Json& s) {
  os << "case " << s["case_id"].get<std::string>() << ": " << s["stage"].get<std::string>() << ", "
     << s["eligibility"].get<std::string>() << "\n";
  if (!s["device"]["selected"].is_null()) os << "device: " << s["device"]["selected"].get<std::string>() << "\n";
  if (!s["active_registration"].is_null())
    os << "registration: " << s["active_registration"]["filename"].get<std::string>() << "\n";
  if (!s["active_plan"].is_null()) os << "plan: " << s["active_plan"]["filename"].get<std::string>() << "\n";
  if (s.contains("last_replan") && !s["last_replan"].is_null()) {
    const Json& r = s["last_replan"];
    os << "dose: " << r["dwell_count"] << " dwells, max " << format_gy(r["max_gy"]) << " Gy/fraction, "
       << (r["has_failures"].get<bool>() ? "FAILING" : "passing") << "\n";
  }
}

void print_replan(std::ostream& os, const Json& r) {
  if (r["verdicts"].is_null()) {
    os << "plan " << r["plan_ref"]["filename"].get<std::string>() << " (no labels, dose not computed)\n";
    return;
  }
  os << "plan " << r["plan_ref"]["filename"].get<std::string>() << ", " << r["dwell_count"] << " dwells\n";
  for (const auto& v : r["verdicts"])
    os << "  " << std::left << std::setw(20) << v["structure"].get<std::string>() << std::setw(8)
       << v["metric"].get<std::string>() << std::setw(10) << format_gy(v["value_gy"]) << v["verdict"].get<std::string>()
       << "\n";
  for (const auto& a : r["advisories"]) os << "  advisory: " << a.get<std::string>() << "\n";
}

}  // namespace

void add_workflow_commands(CLI::App& app, Context& ctx) {
  {
    struct Opts {
      std::string out;
      PhantomSpec spec;
      double d90 = 7.5;
      double dwell_step = 5.0;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("phantom", "Write a synthetic pelvis phantom with a reference plan");
    cmd->add_option("-o,--output", o->out, "Output directory")->required();
    cmd->add_option("--dims", o->spec.dims, "Voxels per axis")->check(CLI::Range(16, 256));
    cmd->add_option("--spacing", o->spec.spacing_mm, "Isotropic spacing (mm)")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o->spec.seed, "Noise seed");
    cmd->add_option("--noise", o->spec.noise_sd, "T2 noise standard deviation")->check(CLI::NonNegativeNumber);
    cmd->add_option("--d90", o->d90, "HR-CTV D90 per fraction used to calibrate the dwell weight (Gy)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--dwell-step", o->dwell_step, "Reference plan dwell step (mm)")->check(CLI::PositiveNumber);
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const Phantom ph = make_phantom(o->spec);
        const NeedlePlan plan = reference_plan(ph, o->dwell_step);
        const double weight = calibrate_dwell_weight(plan, ph.labels, o->d90);
        const fs::path dir = o->out;
        fs::create_directories(dir);
        save_volume(ph.t2, dir / "t2.svol");
        save_label_map(ph.labels, dir / "labels.svol");
        write_file_atomic(dir / "device.stl", serialize_stl(ph.device.mesh, StlFormat::Binary));
        write_json_file(dir / "landmarks.json", to_json(ph.landmarks));
        write_json_file(dir / "registration.json", {{"schema", kJsonSchema}, {"transform", to_json(ph.registration)}});
        write_json_file(dir / "plan.json", to_json(plan));
        write_json_file(dir / "plan_config.json", to_json(plan.config));
        Json edits = Json::array();
        for (const Needle* n : plan.active_needles()) {
          edits.push_back({{"hole_id", n->hole_id}, {"action", "set_depth"}, {"value", n->depth_mm}});
          if (n->dwell_step_mm != plan.config.default_dwell_step_mm)
            edits.push_back({{"hole_id", n->hole_id}, {"action", "set_dwell_step"}, {"value", n->dwell_step_mm}});
          edits.push_back({{"hole_id", n->hole_id}, {"action", "activate"}});
        }
        write_json_file(dir / "edits.json", edits);
        const Json info = {{"schema", kJsonSchema},
                           {"dims", o->spec.dims},
                           {"spacing_mm", o->spec.spacing_mm},
                           {"seed", o->spec.seed},
                           {"device_id", ph.device.id},
                           {"active_needles", plan.active_needles().size()},
                           {"d90_per_fraction_gy", o->d90},
                           {"dwell_weight", weight}};
        write_json_file(dir / "phantom.json", info);
        emit(ctx, info);
        return kExitOk;
      };
    });
  }

  auto* group = app.add_subcommand("case", "Drive a case through the workflow on a local archive");
  group->require_subcommand(1);
  auto data = std::make_shared<std::string>("brachy-data");
  group->add_option("--data", *data, "Archive directory")->envname("BRACHY_DATA_DIR");
  auto workstation = [data] {
    fs::create_directories(*data);
    return std::make_shared<Workstation>(*data);
  };

  {
    struct Opts {
      std::string id, calibration;
      CourseSpec course;
      double dwell_weight = 0.0;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("create", "Create a case in ARRIVAL");
    cmd->add_option("case_id", o->id)->required();
    cmd->add_option("--ebrt", o->course.ebrt_gy, "External-beam dose (Gy)");
    cmd->add_option("--fractions", o->course.n_fractions, "Brachytherapy fractions");
    cmd->add_option("--fraction-dose", o->course.fraction_gy, "Dose per fraction (Gy)");
    auto* w = cmd->add_option("--dwell-weight", o->dwell_weight, "Dwell weight (Gy mm^2)")->check(CLI::PositiveNumber);
    cmd->add_option("--calibration", o->calibration, "phantom.json carrying a calibrated dwell_weight")
        ->check(CLI::ExistingFile)
        ->excludes(w);
    cmd->callback([o, &ctx, workstation] {
      ctx.action = [o, &ctx, workstation] {
        Json body = {{"case_id", o->id}, {"course", to_json(o->course)}};
        if (o->dwell_weight > 0.0) body["dwell_weight"] = o->dwell_weight;
        if (!o->calibration.empty()) body["dwell_weight"] = read_json_file(o->calibration).at("dwell_weight");
        const Json s = workstation()->create_case(body);
        emit(ctx, s, [&](std::ostream& os) { print_case(os, s); });
        return kExitOk;
      };
    });
  }
  {
    auto id = std::make_shared<std::string>();
    auto* cmd = group->add_subcommand("show", "Print the case state");
    cmd->add_option("case_id", *id)->required();
    cmd->callback([id, &ctx, workstation] {
      ctx.action = [id, &ctx, workstation] {
        const Json s = workstation()->get_case(*id);
        emit(ctx, s, [&](std::ostream& os) { print_case(os, s); });
        return kExitOk;
      };
    });
  }
  {
    auto* cmd = group->add_subcommand("list", "List cases");
    cmd->callback([&ctx, workstation] {
      ctx.action = [&ctx, workstation] {
        const Json l = workstation()->list_cases();
        emit(ctx, l, [&](std::ostream& os) {
          for (const auto& c : l["cases"])
            os << c["case_id"].get<std::string>() << "  " << c["stage"].get<std::string>() << "\n";
        });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string id, file, stage = "PRE", kind = "VOLUME", protocol = "T2";
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("upload", "Archive a stage-tagged SVOL volume or label map");
    cmd->add_option("case_id", o->id)->required();
    cmd->add_option("file", o->file)->required()->check(CLI::ExistingFile);
    cmd->add_option("--stage", o->stage)->check(CLI::IsMember({"PRE", "INTRA", "POST"}));
    cmd->add_option("--kind", o->kind)->check(CLI::IsMember({"VOLUME", "LABELS"}));
    cmd->add_option("--protocol", o->protocol, "MR protocol for spacing advisories")
        ->check(CLI::IsMember({"T1", "T2"}));
    cmd->callback([o, &ctx, workstation] {
      ctx.action = [o, &ctx, workstation] {
        const Json r = workstation()->upload(o->id, parse_plan_stage(o->stage), parse_artifact_kind(o->kind),
                                             read_file(o->file), o->protocol == "T1" ? MrProtocol::T1 : MrProtocol::T2);
        emit(ctx, r, [&](std::ostream& os) {
          os << "stored " << r["ref"]["filename"].get<std::string>() << "\n";
          for (const auto& a : r["advisories"]) os << "advisory: " << a["message"].get<std::string>() << "\n";
        });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string id, to, device, registration, plan_config;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("advance", "Move the case along the workflow graph");
    cmd->add_option("case_id", o->id)->required();
    cmd->add_option("stage", o->to, "Target stage")->required();
    cmd->add_option("--device", o->device, "Device id when entering PREPLAN");
    cmd->add_option("--registration", o->registration, "Initial device registration JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--plan-config", o->plan_config, "PlanConfig JSON for the new plan")->check(CLI::ExistingFile);
    cmd->callback([o, &ctx, workstation] {
      ctx.action = [o, &ctx, workstation] {
        Json body = {{"to", o->to}};
        if (!o->device.empty()) body["device_id"] = o->device;
        if (!o->registration.empty()) body["registration"] = to_json(read_transform(o->registration));
        if (!o->plan_config.empty()) body["plan_config"] = read_json_file(o->plan_config);
        const Json r = workstation()->advance(o->id, body);
        emit(ctx, r, [&](std::ostream& os) { os << "stage " << r["stage"].get<std::string>() << "\n"; });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string id, decision;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("eligibility", "Record the eligibility decision (DIAGNOSIS only)");
    cmd->add_option("case_id", o->id)->required();
    cmd->add_option("decision", o->decision)->required()->check(CLI::IsMember({"eligible", "ineligible"}));
    cmd->callback([o, &ctx, workstation] {
      ctx.action = [o, &ctx, workstation] {
        const Json r = workstation()->set_eligibility(o->id, {{"eligible", o->decision == "eligible"}});
        emit(ctx, r, [&](std::ostream& os) { print_case(os, r); });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string id, select, registration, plan_config;
      std::vector<std::string> candidates;
      DepthRange range;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("compare", "Compare candidate devices and optionally select one");
    cmd->add_option("case_id", o->id)->required();
    cmd->add_option("--candidates", o->candidates, "Device ids")->required()->delimiter(',');
    cmd->add_option("--select", o->select, "Selected device id (enters PREPLAN)");
    cmd->add_option("--registration", o->registration, "Device registration JSON")->check(CLI::ExistingFile);
    cmd->add_option("--plan-config", o->plan_config, "PlanConfig JSON for the new plan")->check(CLI::ExistingFile);
    cmd->add_option("--min-depth", o->range.min_mm, "Minimum insertion depth (mm)");
    cmd->add_option("--max-depth", o->range.max_mm, "Maximum insertion depth (mm)");
    cmd->callback([o, &ctx, workstation] {
      ctx.action = [o, &ctx, workstation] {
        Json body = {{"candidates", o->candidates},
                     {"depth_range", {{"min_mm", o->range.min_mm}, {"max_mm", o->range.max_mm}}}};
        if (!o->select.empty()) body["selected"] = o->select;
        if (!o->registration.empty()) body["registration"] = to_json(read_transform(o->registration));
        if (!o->plan_config.empty()) body["plan_config"] = read_json_file(o->plan_config);
        const Json r = workstation()->compare_devices(o->id, body);
        emit(ctx, r, [&](std::ostream& os) {
          for (const auto& rep : r["reports"])
            os << rep["device_id"].get<std::string>() << ": " << rep["feasible_holes"] << " feasible holes of "
               << rep["rows"].size() << "\n";
          os << "stage " << r["stage"].get<std::string>() << "\n";
        });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string id, landmarks, structure = "TEMPLATE";
      bool icp = false;
      std::size_t samples = 3000;
      std::uint64_t seed = 1;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("register", "Register the selected device from landmarks");
    cmd->add_option("case_id", o->id)->required();
    cmd->add_option("--landmarks", o->landmarks)->required()->check(CLI::ExistingFile);
    cmd->add_flag("--icp", o->icp, "Refine with ICP against a labeled structure surface");
    cmd->add_option("--structure", o->structure, "ICP target structure");
    cmd->add_option("--samples", o->samples, "Model surface samples")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o->seed, "Surface sampling seed");
    cmd->callback([o, &ctx, workstation] {
      ctx.action = [o, &ctx, workstation] {
        Json body = {{"landmarks", read_json_file(o->landmarks)}, {"target_structure", o->structure}};
        if (o->icp) body["icp"] = {{"samples", o->samples}, {"seed", o->seed}};
        const Json r = workstation()->register_device(o->id, body);
        emit(ctx, r, [&](std::ostream& os) {
          os << "stored " << r["ref"]["filename"].get<std::string>() << ", landmark rms "
             << r["landmark_rms"].get<double>() << " mm\n";
          if (r.contains("replan") && !r["replan"]["dose"].is_null()) print_replan(os, r["replan"]["dose"]);
        });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string id, hole, action, edits;
      double value = 0.0;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = group->add_subcommand("edit", "Apply needle edits, replanning after each");
    cmd->add_option("case_id", o->id)->required();
    auto* hole = cmd->add_option("--hole", o->hole, "Hole id");
    cmd->add_option("--action", o->action)
        ->check(CLI::IsMember({"set_depth", "activate", "deactivate", "set_dwell_step"}))
        ->needs(hole);
    cmd->add_option("--value", o->value, "Depth or dwell step (mm)");
    cmd->add_option("--edits", o->edits, "JSON array of edits")->check(CLI::ExistingFile)->excludes(hole);
    cmd->callback([o, &ctx, workstation] {
      if (o->edits.empty() && (o->hole.empty() || o->action.empty()))
        throw CLI::RequiredError("--hole and --action, or --edits");
      ctx.action = [o, &ctx, workstation] {
        Json edits = Json::array();
        if (!o->edits.empty()) {
          edits = read_json_file(o->edits);
          if (!edits.is_array()) fail(ErrorCode::Parse, "edits file must hold an array");
        } else {
          edits.push_back({{"hole_id", o->hole}, {"action", o->action}, {"value", o->value}});
        }
        auto ws = workstation();
        Json last;
        for (const auto& e : edits) last = ws->edit_plan(o->id, e);
        emit(ctx, last, [&](std::ostream& os) {
          os << edits.size() << " edit(s) applied\n";
          print_replan(os, last);
        });
        return kExitOk;
      };
    });
  }
  {
    auto id = std::make_shared<std::string>();
    auto* cmd = group->add_subcommand("followup", "Follow-up overlay bundle: POST volume, device, registration");
    cmd->add_option("case_id", *id)->required();
    cmd->callback([id, &ctx, workstation] {
      ctx.action = [id, &ctx, workstation] {
        const Json r = workstation()->followup(*id);
        emit(ctx, r, [&](std::ostream& os) {
          if (!r["complete"].get<bool>()) {
            os << "incomplete, missing:";
            for (const auto& m : r["missing"]) os << " " << m.get<std::string>();
            os << "\n";
            return;
          }
          for (const auto& ref : r["refs"]) os << ref["filename"].get<std::string>() << "\n";
        });
        return r["complete"].get<bool>() ? kExitOk : kExitDomain;
      };
    });
  }
}

}  // namespace brachy::cli
