#include "cli.hpp"

#include "brachy/segmentation.hpp"

namespace brachy::cli {

namespace {

Json structure_table(const LabelMap& labels) {
  Json out = Json::array();
  for (const auto& [code, kind] : labels.legend)
    out.push_back({{"code", code}, {"name", kind.name()}, {"volume_cc", structure_volume_cc(labels, kind)}});
  return out;
}

}  // namespace

void add_contour_commands(CLI::App& app, Context& ctx) {
  {
    struct Opts {
      std::string volume, seeds, output;
      int max_passes = 500;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("growcut", "Seeded cellular-automaton segmentation");
    cmd->add_option("--volume", o->volume, "Intensity volume (SVOL)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seeds", o->seeds, "Seed label map (SVOL); code 0 is unlabeled")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("-o,--output", o->output, "Output label map")->required();
    cmd->add_option("--max-passes", o->max_passes, "Pass limit")->check(CLI::PositiveNumber);
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const GrowCutResult r = growcut_run(load_volume(o->volume), load_label_map(o->seeds), o->max_passes);
        save_label_map(r.labels, o->output);
        emit(ctx, {{"passes", r.passes}, {"converged", r.converged}, {"structures", structure_table(r.labels)}});
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string labels, source = "HR_CTV", target = "IR_CTV", extension, output;
      double margin_mm = 10.0;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("expand-margin", "Grow a structure by a Euclidean margin into unlabeled voxels");
    cmd->add_option("--labels", o->labels, "Label map (SVOL)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--source", o->source, "Structure to expand");
    cmd->add_option("--target", o->target, "Structure receiving the margin");
    cmd->add_option("--margin", o->margin_mm, "Margin (mm)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--extension", o->extension, "Label map whose nonzero voxels join the target")
        ->check(CLI::ExistingFile);
    cmd->add_option("-o,--output", o->output, "Output label map")->required();
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const LabelMap labels = load_label_map(o->labels);
        std::vector<std::uint8_t> ext;
        if (!o->extension.empty()) {
          const LabelMap e = load_label_map(o->extension);
          if (!(e.grid == labels.grid)) fail(ErrorCode::Validation, "extension grid differs from the label grid");
          ext = e.voxels;
        }
        const LabelMap out = expand_margin(labels, StructureKind::parse(o->source), StructureKind::parse(o->target),
                                           o->margin_mm, ext.empty() ? nullptr : &ext);
        save_label_map(out, o->output);
        emit(ctx, {{"structures", structure_table(out)}});
        return kExitOk;
      };
    });
  }
}

}  // namespace brachy::cli
