#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  using namespace brachy::cli;
  CLI::App app{"Image-guided interstitial brachytherapy planning tools", "brachy"};
  app.set_version_flag("--version", "brachy 0.1.0");
  app.require_subcommand(1);
  Context ctx;
  app.add_flag("--json", ctx.globals.json, "Machine-readable JSON on stdout");

  add_geometry_commands(app, ctx);
  add_contour_commands(app, ctx);
  add_dose_commands(app, ctx);
  add_network_commands(app, ctx);
  add_workflow_commands(app, ctx);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  if (!ctx.action) return kExitUsage;
  try {
    return ctx.action();
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const brachy::Error& e) {
    std::cerr << "error [" << brachy::to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
}
