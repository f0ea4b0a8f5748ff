#include "cli.hpp"

#include "brachy/file_io.hpp"

#include <iomanip>
#include <iostream>
#include <sstream>

namespace brachy::cli {

void print_flat(std::ostream& os, const Json& j, const std::string& prefix) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (k == "schema") continue;
      print_flat(os, v, prefix.empty() ? k : prefix + "." + k);
    }
    return;
  }
  if (j.is_array()) {
    const bool scalars = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
    if (scalars && j.size() <= 16) {
      os << prefix << ": " << j.dump() << "\n";
    } else if (scalars) {
      os << prefix << ": [" << j.size() << " values]\n";
    } else {
      for (std::size_t i = 0; i < j.size(); ++i) print_flat(os, j[i], prefix + "[" + std::to_string(i) + "]");
    }
    return;
  }
  os << prefix << ": " << (j.is_string() ? j.get<std::string>() : j.dump()) << "\n";
}

void emit(const Context& ctx, Json j, const std::function<void(std::ostream&)>& text) {
  if (ctx.globals.json) {
    if (j.is_object() && !j.contains("schema")) j["schema"] = kJsonSchema;
    std::cout << dump(j);
  } else if (text) {
    text(std::cout);
  } else {
    print_flat(std::cout, j);
  }
  std::cout.flush();
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) { write_file_atomic(path, dump(j)); }

std::string format_gy(const Json& v) {
  if (v.is_null()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  if (v.is_array()) {
    os << "[" << v[0].get<double>() << ", " << v[1].get<double>() << "]";
  } else {
    os << v.get<double>();
  }
  return os.str();
}

}  // namespace brachy::cli

#include "brachy/workstation.hpp"

namespace brachy::cli {

RigidTransform read_transform(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  if (j.is_object() && j.contains("transform")) return transform_from_json(j.at("transform"));
  return transform_from_json(j);
}

TemplateModel resolve_device(const std::string& id, const std::string& spec_file) {
  if (!spec_file.empty()) return make_template(template_spec_from_json(read_json_file(spec_file)));
  return make_template(DeviceCatalog::defaults().get(id));
}

}  // namespace brachy::cli
