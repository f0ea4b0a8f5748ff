#pragma once

#include "brachy/common.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace brachy {

/// Regular voxel lattice placed in patient space.
///
/// Voxel (i, j, k) has its center at `origin + orientation * (spacing ∘ (i, j, k))`.
/// Orientation columns are the world directions of the i, j and k axes.
/// Storage order is x-fastest, then y, then z.
struct GridGeometry {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  Mat3 orientation = Mat3::Identity();

  std::size_t voxel_count() const;
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  Vec3 voxel_center(int i, int j, int k) const;
  /// Fractional (i, j, k) of a world point; integers land on voxel centers.
  Vec3 continuous_index(const Vec3& world) const;
  double voxel_volume_cc() const;

  /// Throws ErrorCode::Validation naming the first violated invariant.
  void validate() const;

  bool operator==(const GridGeometry& other) const;
};

enum class VoxelType : std::uint8_t { UInt8 = 1, Int16 = 2, Float32 = 3 };

std::string_view to_string(VoxelType type);
std::size_t element_size(VoxelType type);

struct ScalarVolume {
  GridGeometry grid;
  VoxelType dtype = VoxelType::Float32;
  std::string modality = "MR-T2";
  /// Values of every dtype are held as float; uint8 and int16 convert exactly.
  std::vector<float> voxels;

  float at(int i, int j, int k) const { return voxels[grid.index(i, j, k)]; }
  void validate() const;
};

enum class StructureTag : std::uint8_t {
  GTV,
  HR_CTV,
  IR_CTV,
  OAR_BLADDER,
  OAR_RECTUM_SIGMOID,
  OAR_SMALL_BOWEL,
  OTHER,
};

struct StructureKind {
  StructureTag tag = StructureTag::OTHER;
  std::string other_name;

  StructureKind() = default;
  StructureKind(StructureTag t) : tag(t) {}  // NOLINT(google-explicit-constructor)
  static StructureKind other(std::string name);
  /// Canonical names ("HR_CTV", ...) map to their tag; anything else is OTHER.
  static StructureKind parse(std::string_view name);

  std::string name() const;
  bool is_oar() const;

  bool operator==(const StructureKind& other) const = default;
  auto operator<=>(const StructureKind& other) const = default;
};

/// True when `inner` is nested inside `outer` by clinical definition
/// (GTV within HR-CTV within IR-CTV). A kind contains itself.
bool structure_contains(const StructureKind& outer, const StructureKind& inner);

struct LabelMap {
  GridGeometry grid;
  std::string modality = "LABELS";
  std::vector<std::uint8_t> voxels;
  std::map<std::uint8_t, StructureKind> legend;

  std::uint8_t at(int i, int j, int k) const { return voxels[grid.index(i, j, k)]; }
  std::optional<std::uint8_t> code_of(const StructureKind& kind) const;
  /// Returns the existing code for `kind`, or assigns the lowest free one.
  std::uint8_t ensure_code(const StructureKind& kind);
  bool has(const StructureKind& kind) const { return code_of(kind).has_value(); }

  /// Voxels belonging to `kind`, nested structures included (an IR-CTV mask
  /// covers voxels coded HR-CTV and GTV).
  std::vector<std::uint8_t> mask(const StructureKind& kind) const;

  void validate() const;

  static LabelMap empty_like(const GridGeometry& grid);
};

enum class MrProtocol { T1, T2 };

struct Advisory {
  std::string field;
  std::string message;
};

/// Checks through-plane spacing (slice thickness plus gap) against the
/// imaging protocol. Never throws.
std::vector<Advisory> validate_protocol(const ScalarVolume& vol, MrProtocol protocol);

double voxel_volume_cc(const ScalarVolume& vol);

// SVOL v1 codec.
ScalarVolume parse_volume(std::span<const std::uint8_t> bytes);
LabelMap parse_label_map(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_volume(const ScalarVolume& vol);
std::vector<std::uint8_t> serialize_label_map(const LabelMap& labels);

ScalarVolume load_volume(const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path);
void save_volume(const ScalarVolume& vol, const std::filesystem::path& path);
void save_label_map(const LabelMap& labels, const std::filesystem::path& path);

struct SlicePlane {
  Vec3 origin = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  std::array<double, 2> extent{1.0, 1.0};
  std::array<int, 2> resolution{1, 1};

  double pixel_size_u() const { return extent[0] / resolution[0]; }
  double pixel_size_v() const { return extent[1] / resolution[1]; }
  Vec3 sample_point(int i, int j) const { return origin + u * (pixel_size_u() * i) + v * (pixel_size_v() * j); }
  void validate() const;

  /// Plane through the voxel centers of slice `index` along grid axis `axis`
  /// (0 = sagittal, 1 = coronal, 2 = axial in an identity-oriented grid),
  /// one pixel per voxel.
  static SlicePlane grid_aligned(const GridGeometry& grid, int axis, int index);
  /// Plane through `center` with the given normal. The in-plane u axis is
  /// `u_hint` projected off the normal.
  static SlicePlane oblique(const Vec3& center, const Vec3& normal, const Vec3& u_hint,
                            std::array<double, 2> extent, std::array<int, 2> resolution);
};

enum class Interpolation { Nearest, Trilinear };

struct Image2D {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int i, int j) const { return pixels[static_cast<std::size_t>(j) * width + i]; }
};

inline constexpr double kSliceFillValue = 0.0;

Image2D extract_slice(const ScalarVolume& vol, const SlicePlane& plane, Interpolation interp);
/// Samples one world point; returns kSliceFillValue outside the grid.
double sample_volume(const ScalarVolume& vol, const Vec3& world, Interpolation interp);

}  // namespace brachy
