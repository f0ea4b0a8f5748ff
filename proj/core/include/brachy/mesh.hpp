#pragma once

#include "brachy/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace brachy {

struct TriangleMesh {
  std::string name;
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  /// One normal per triangle, as stored in the source file or computed on construction.
  std::vector<Vec3> normals;
  /// Triangles whose stored normal differs from the right-hand-rule normal by more than 1e-3.
  std::vector<std::size_t> flagged_normals;

  bool empty() const { return triangles.empty(); }
  Vec3 corner(std::size_t tri, int c) const { return vertices[triangles[tri][c]]; }
  Vec3 winding_normal(std::size_t tri) const;
  double area(std::size_t tri) const;
  double surface_area() const;

  /// Throws on out-of-range indices, or on degenerate triangles unless `permissive`.
  void validate(bool permissive = false) const;
};

enum class StlFormat { Binary, Ascii };

struct StlLoadOptions {
  bool permissive = false;
};

inline constexpr double kDegenerateArea = 1e-9;  // mm^2

/// Parses binary or ASCII STL (auto-detected). Vertices are welded on exact
/// coordinate equality, numbered in order of first use.
TriangleMesh parse_stl(std::span<const std::uint8_t> bytes, const StlLoadOptions& options = {});
std::vector<std::uint8_t> serialize_stl(const TriangleMesh& mesh, StlFormat format);

TriangleMesh load_stl(const std::filesystem::path& path, const StlLoadOptions& options = {});
void save_stl(const TriangleMesh& mesh, const std::filesystem::path& path, StlFormat format);

/// Accumulates triangles with float-precision coordinates and exact welding,
/// so that the built mesh survives a binary STL round trip unchanged.
class MeshBuilder {
 public:
  explicit MeshBuilder(std::string name = {}) : name_(std::move(name)) {}

  void add_triangle(const Vec3& a, const Vec3& b, const Vec3& c);
  void add_quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    add_triangle(a, b, c);
    add_triangle(a, c, d);
  }
  TriangleMesh build() const;

 private:
  std::string name_;
  std::vector<std::array<Vec3, 3>> soup_;
};

struct Hole {
  std::string id;
  int row = 0;
  int col = 0;
  Vec3 position = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

std::string hole_label(int row, int col);

struct TemplateSpec {
  std::string id = "template-6x6";
  int rows = 6;
  int cols = 6;
  double pitch_mm = 10.0;
  double margin_mm = 10.0;
  double thickness_mm = 15.0;
  double hole_radius_mm = 1.0;
  int ring_segments = 16;
};

/// Perineal template plate. The patient-facing face lies in the local z = 0
/// plane, the plate occupies -thickness <= z <= 0, and needles advance along +z.
struct TemplateModel {
  std::string id;
  TemplateSpec spec;
  TriangleMesh mesh;
  std::vector<Hole> holes;
  Vec3 face_normal = Vec3::UnitZ();
  double plate_thickness = 0.0;
  double pitch = 0.0;

  const Hole* find_hole(const std::string& hole_id) const;
  const Hole& hole(const std::string& hole_id) const;
  void validate() const;
};

TemplateModel make_template(const TemplateSpec& spec);

struct ObturatorSpec {
  double radius_mm = 10.0;
  double length_mm = 100.0;
  int segments = 32;
};

struct ObturatorModel {
  TriangleMesh mesh;
  Vec3 axis_origin = Vec3::Zero();
  Vec3 axis_direction = Vec3::UnitZ();
  double radius = 0.0;
};

/// Capped cylinder starting at the origin and extending along +z.
ObturatorModel make_obturator(const ObturatorSpec& spec);

struct SurfaceSample {
  Vec3 point;
  std::size_t triangle;
};

/// Area-weighted uniform samples on the surface; deterministic for a seed.
std::vector<SurfaceSample> sample_surface_with_source(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);
PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

}  // namespace brachy
