#include "cli.hpp"

#include "brachy/file_io.hpp"
#include "brachy/segmentation.hpp"

#include <algorithm>
#include <iomanip>
#include <iostream>

namespace brachy::cli {

namespace {

bool looks_like_svol(const std::vector<std::uint8_t>& bytes) {
  static const std::string magic = "svol ";
  return bytes.size() >= magic.size() && std::equal(magic.begin(), magic.end(), bytes.begin());
}

Json inspect_svol(const std::vector<std::uint8_t>& bytes) {
  const ScalarVolume vol = parse_volume(bytes);
  Json j = {{"kind", "svol"},
            {"dims", vol.grid.dims},
            {"spacing", to_json(vol.grid.spacing)},
            {"origin", to_json(vol.grid.origin)},
            {"dtype", std::string(to_string(vol.dtype))},
            {"modality", vol.modality},
            {"voxels", vol.voxels.size()}};
  if (!vol.voxels.empty()) {
    const auto [lo, hi] = std::minmax_element(vol.voxels.begin(), vol.voxels.end());
    j["min"] = *lo;
    j["max"] = *hi;
  }
  if (vol.dtype == VoxelType::UInt8) {
    try {
      const LabelMap labels = parse_label_map(bytes);
      Json structures = Json::array();
      for (const auto& [code, kind] : labels.legend)
        structures.push_back({{"code", code}, {"name", kind.name()}, {"volume_cc", structure_volume_cc(labels, kind)}});
      j["structures"] = structures;
    } catch (const Error&) {
      // plain uint8 image without a legend
    }
  }
  return j;
}

}  // namespace

void add_geometry_commands(CLI::App& app, Context& ctx) {
  {
    struct Opts {
      std::string input, output, to = "binary";
      bool permissive = false;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("convert", "Convert STL between binary and ASCII, or inspect an SVOL file");
    cmd->add_option("input", o->input, "STL or SVOL file")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--output", o->output, "Output STL path");
    cmd->add_option("--to", o->to, "Output STL format")->check(CLI::IsMember({"binary", "ascii"}));
    cmd->add_flag("--permissive", o->permissive, "Accept degenerate triangles");
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const auto bytes = read_file(o->input);
        if (looks_like_svol(bytes)) {
          if (!o->output.empty()) throw CLI::ValidationError("--output", "SVOL files can only be inspected");
          emit(ctx, inspect_svol(bytes));
          return kExitOk;
        }
        const TriangleMesh mesh = parse_stl(bytes, {o->permissive});
        Json j = {{"kind", "stl"},
                  {"name", mesh.name},
                  {"triangles", mesh.triangles.size()},
                  {"vertices", mesh.vertices.size()},
                  {"flagged_normals", mesh.flagged_normals.size()},
                  {"surface_area_mm2", mesh.surface_area()}};
        if (!o->output.empty()) {
          const StlFormat fmt = o->to == "ascii" ? StlFormat::Ascii : StlFormat::Binary;
          write_file_atomic(o->output, serialize_stl(mesh, fmt));
          j["output_format"] = o->to;
        }
        emit(ctx, j);
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string landmarks, device = "template-6x6", device_spec, model, target_labels, structure = "TEMPLATE",
                                target_points, output;
      bool icp = false;
      std::size_t samples = 3000;
      std::uint64_t seed = 1;
      IcpConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("register", "Rigid device registration from landmarks, optionally refined by ICP");
    cmd->add_option("--landmarks", o->landmarks, "JSON with model_points and image_points")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_flag("--icp", o->icp, "Refine with point-to-point ICP");
    cmd->add_option("--device", o->device, "Catalog device id for the ICP model cloud");
    cmd->add_option("--device-spec", o->device_spec, "TemplateSpec JSON instead of a catalog id")
        ->check(CLI::ExistingFile);
    cmd->add_option("--model", o->model, "STL surface for the ICP model cloud")->check(CLI::ExistingFile);
    cmd->add_option("--target-labels", o->target_labels, "Label map providing the ICP target surface")
        ->check(CLI::ExistingFile);
    cmd->add_option("--structure", o->structure, "Structure whose surface is the ICP target");
    cmd->add_option("--target-points", o->target_points, "JSON array of target points")->check(CLI::ExistingFile);
    cmd->add_option("--samples", o->samples, "Model surface samples")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o->seed, "Surface sampling seed");
    cmd->add_option("--max-iterations", o->cfg.max_iterations, "ICP iteration cap")->check(CLI::PositiveNumber);
    cmd->add_option("--tolerance", o->cfg.rms_change_tol, "Stop when RMS changes less than this (mm)");
    cmd->add_option("--trim", o->cfg.outlier_trim_fraction, "Fraction of worst pairs dropped per iteration")
        ->check(CLI::Range(0.0, 0.9));
    cmd->add_option("-o,--output", o->output, "Write the result JSON here");
    cmd->callback([o, &ctx] {
      if (o->icp && o->target_labels.empty() && o->target_points.empty())
        throw CLI::RequiredError("--icp needs --target-labels or --target-points");
      ctx.action = [o, &ctx] {
        const LandmarkPairs pairs = landmarks_from_json(read_json_file(o->landmarks));
        const RigidTransform init = fit_landmarks(pairs);
        const double rms = rms_residual(init, pairs.model_points, pairs.image_points);
        Json out = {{"schema", kJsonSchema}, {"transform", to_json(init)}, {"landmark_rms", rms}, {"icp", nullptr}};
        if (o->icp) {
          o->cfg.validate();
          const TriangleMesh surface =
              o->model.empty() ? resolve_device(o->device, o->device_spec).mesh : load_stl(o->model);
          const PointCloud model = sample_surface(surface, o->samples, o->seed);
          PointCloud target;
          if (!o->target_points.empty()) {
            for (const auto& p : read_json_file(o->target_points)) target.push_back(vec3_from_json(p));
          } else {
            const LabelMap labels = load_label_map(o->target_labels);
            const StructureKind kind = StructureKind::parse(o->structure);
            if (!labels.has(kind)) fail(ErrorCode::Validation, "labels have no structure '" + o->structure + "'");
            target = surface_cloud(labels, kind);
          }
          const IcpReport report = icp_refine(model, target, init, o->cfg);
          out["transform"] = to_json(report.transform);
          out["icp"] = to_json(report);
        }
        if (!o->output.empty()) write_json_file(o->output, out);
        emit(ctx, out, [&](std::ostream& os) {
          const auto m = transform_from_json(out["transform"]).to_row_major();
          os << std::setprecision(9);
          for (int r = 0; r < 3; ++r)
            os << m[4 * r] << " " << m[4 * r + 1] << " " << m[4 * r + 2] << " " << m[4 * r + 3] << "\n";
          os << "landmark_rms: " << rms << "\n";
          if (!out["icp"].is_null())
            os << "icp: " << out["icp"]["iterations_used"] << " iterations, final_rms "
               << out["icp"]["final_rms"].get<double>() << ", converged " << out["icp"]["converged"] << "\n";
        });
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string labels, registration, device = "template-6x6", device_spec;
      DepthRange range;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("feasibility", "Per-hole reachability of the HR-CTV through a template");
    cmd->add_option("--labels", o->labels, "Label map (SVOL)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--registration", o->registration, "Device-to-image transform JSON")->check(CLI::ExistingFile);
    cmd->add_option("--device", o->device, "Catalog device id");
    cmd->add_option("--device-spec", o->device_spec, "TemplateSpec JSON")->check(CLI::ExistingFile);
    cmd->add_option("--min-depth", o->range.min_mm, "Minimum insertion depth (mm)");
    cmd->add_option("--max-depth", o->range.max_mm, "Maximum insertion depth (mm)");
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const TemplateModel device = resolve_device(o->device, o->device_spec);
        const RigidTransform t = o->registration.empty() ? RigidTransform::identity() : read_transform(o->registration);
        const FeasibilityReport report = evaluate_feasibility(device, t, load_label_map(o->labels), o->range);
        emit(ctx, to_json(report), [&](std::ostream& os) {
          os << "device " << report.device_id << ": " << report.feasible_holes << " feasible of " << report.rows.size()
             << " holes\n";
          os << std::fixed << std::setprecision(1);
          os << std::left << std::setw(6) << "HOLE" << std::setw(10) << "FEASIBLE" << std::setw(12) << "MIN_DEPTH"
             << std::setw(12) << "MAX_USEFUL" << "OAR_HITS\n";
          for (const auto& r : report.rows) {
            os << std::setw(6) << r.hole_id << std::setw(10) << (r.feasible ? "yes" : "no") << std::setw(12)
               << (r.min_depth_to_target ? std::to_string(*r.min_depth_to_target).substr(0, 6) : "-") << std::setw(12)
               << r.max_useful_depth;
            for (const auto& h : r.oar_hits) os << h.kind.name() << "@" << h.depth_mm << " ";
            os << "\n";
          }
        });
        return kExitOk;
      };
    });
  }
}

}  // namespace brachy::cli
