#pragma once

#include "brachy/serialization.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>

namespace brachy::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

struct Globals {
  bool json = false;
};

/// The parsed subcommand's work; runs after CLI11 finishes so errors map to exit codes.
using Action = std::function<int()>;

struct Context {
  Globals globals;
  Action action;
};

/// Prints `j` with its schema tag when --json is set, otherwise `text` (or a
/// generic key: value listing).
void emit(const Context& ctx, Json j, const std::function<void(std::ostream&)>& text = {});
void print_flat(std::ostream& os, const Json& j, const std::string& prefix = {});

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
std::string format_gy(const Json& v);

void add_geometry_commands(CLI::App& app, Context& ctx);   // convert, register, feasibility
void add_contour_commands(CLI::App& app, Context& ctx);    // growcut, expand-margin
void add_dose_commands(CLI::App& app, Context& ctx);       // dose, dvh, check
void add_network_commands(CLI::App& app, Context& ctx);    // serve, igtl-send, igtl-recv
void add_workflow_commands(CLI::App& app, Context& ctx);   // phantom, case

}  // namespace brachy::cli

namespace brachy::cli {

/// Accepts a bare transform document or any document with a "transform" member.
RigidTransform read_transform(const std::filesystem::path& path);
/// Catalog id, or a TemplateSpec JSON file when `spec_file` is set.
TemplateModel resolve_device(const std::string& id, const std::string& spec_file);

}  // namespace brachy::cli
