#include "brachy/volume.hpp"

#include "brachy/file_io.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace brachy {

namespace {

constexpr double kOrthoTolerance = 1e-6;
constexpr double kEdgeTolerance = 1e-6;  // index units

constexpr std::string_view kStructureNames[] = {
    "GTV", "HR_CTV", "IR_CTV", "OAR_BLADDER", "OAR_RECTUM_SIGMOID", "OAR_SMALL_BOWEL",
};

void check_orthonormal_columns(const Mat3& m, const std::string& what) {
  for (int c = 0; c < 3; ++c) {
    const double n = m.col(c).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > kOrthoTolerance) {
      fail(ErrorCode::Validation, what + ": column " + std::to_string(c) + " is not unit length");
    }
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      if (std::abs(m.col(a).dot(m.col(b))) > kOrthoTolerance) {
        fail(ErrorCode::Validation, what + ": columns " + std::to_string(a) + " and " + std::to_string(b) +
                                        " are not orthogonal");
      }
    }
  }
}

}  // namespace

std::size_t GridGeometry::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
}

Vec3 GridGeometry::voxel_center(int i, int j, int k) const {
  return origin + orientation * Vec3(spacing.x() * i, spacing.y() * j, spacing.z() * k);
}

Vec3 GridGeometry::continuous_index(const Vec3& world) const {
  Vec3 local = orientation.transpose() * (world - origin);
  return local.cwiseQuotient(spacing);
}

double GridGeometry::voxel_volume_cc() const { return spacing.x() * spacing.y() * spacing.z() / 1000.0; }

void GridGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) fail(ErrorCode::Validation, "dims: axis " + std::to_string(a) + " must be positive");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      fail(ErrorCode::Validation, "spacing: axis " + std::to_string(a) + " must be positive and finite");
    }
    if (!std::isfinite(origin[a])) fail(ErrorCode::Validation, "origin: non-finite coordinate");
  }
  check_orthonormal_columns(orientation, "orient");
}

bool GridGeometry::operator==(const GridGeometry& other) const {
  return dims == other.dims && spacing == other.spacing && origin == other.origin && orientation == other.orientation;
}

std::string_view to_string(VoxelType type) {
  switch (type) {
    case VoxelType::UInt8: return "uint8";
    case VoxelType::Int16: return "int16";
    case VoxelType::Float32: return "float32";
  }
  return "?";
}

std::size_t element_size(VoxelType type) {
  switch (type) {
    case VoxelType::UInt8: return 1;
    case VoxelType::Int16: return 2;
    case VoxelType::Float32: return 4;
  }
  return 0;
}

void ScalarVolume::validate() const {
  grid.validate();
  if (voxels.size() != grid.voxel_count()) {
    fail(ErrorCode::Validation, "voxels: count " + std::to_string(voxels.size()) + " does not match dims product " +
                                    std::to_string(grid.voxel_count()));
  }
}

// ---------------------------------------------------------------------------
// Structures

StructureKind StructureKind::other(std::string name) {
  StructureKind k;
  k.tag = StructureTag::OTHER;
  k.other_name = std::move(name);
  return k;
}

StructureKind StructureKind::parse(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kStructureNames); ++i) {
    if (name == kStructureNames[i]) return StructureKind(static_cast<StructureTag>(i));
  }
  return other(std::string(name));
}

std::string StructureKind::name() const {
  if (tag == StructureTag::OTHER) return other_name;
  return std::string(kStructureNames[static_cast<std::size_t>(tag)]);
}

bool StructureKind::is_oar() const {
  return tag == StructureTag::OAR_BLADDER || tag == StructureTag::OAR_RECTUM_SIGMOID ||
         tag == StructureTag::OAR_SMALL_BOWEL;
}

bool structure_contains(const StructureKind& outer, const StructureKind& inner) {
  if (outer == inner) return true;
  if (outer.tag == StructureTag::IR_CTV) return inner.tag == StructureTag::HR_CTV || inner.tag == StructureTag::GTV;
  if (outer.tag == StructureTag::HR_CTV) return inner.tag == StructureTag::GTV;
  return false;
}

std::optional<std::uint8_t> LabelMap::code_of(const StructureKind& kind) const {
  for (const auto& [code, k] : legend) {
    if (k == kind) return code;
  }
  return std::nullopt;
}

std::uint8_t LabelMap::ensure_code(const StructureKind& kind) {
  if (auto code = code_of(kind)) return *code;
  for (int c = 1; c < 256; ++c) {
    auto code = static_cast<std::uint8_t>(c);
    if (!legend.contains(code)) {
      legend.emplace(code, kind);
      return code;
    }
  }
  fail(ErrorCode::Range, "label legend is full");
}

std::vector<std::uint8_t> LabelMap::mask(const StructureKind& kind) const {
  std::array<bool, 256> member{};
  for (const auto& [code, k] : legend) member[code] = structure_contains(kind, k);
  std::vector<std::uint8_t> out(voxels.size());
  for (std::size_t n = 0; n < voxels.size(); ++n) out[n] = member[voxels[n]] ? 1 : 0;
  return out;
}

void LabelMap::validate() const {
  grid.validate();
  if (voxels.size() != grid.voxel_count()) fail(ErrorCode::Validation, "voxels: count does not match dims product");
  std::array<bool, 256> seen{};
  for (auto v : voxels) seen[v] = true;
  for (int c = 1; c < 256; ++c) {
    if (seen[c] && !legend.contains(static_cast<std::uint8_t>(c))) {
      fail(ErrorCode::Validation, "label: code " + std::to_string(c) + " has no legend entry");
    }
  }
  for (auto it = legend.begin(); it != legend.end(); ++it) {
    if (it->first == 0) fail(ErrorCode::Validation, "label: code 0 is reserved for background");
    for (auto jt = std::next(it); jt != legend.end(); ++jt) {
      if (it->second == jt->second) fail(ErrorCode::Validation, "label: structure " + it->second.name() + " listed twice");
    }
  }
}

LabelMap LabelMap::empty_like(const GridGeometry& grid) {
  LabelMap out;
  out.grid = grid;
  out.voxels.assign(grid.voxel_count(), 0);
  return out;
}

// ---------------------------------------------------------------------------
// Protocol checks

std::vector<Advisory> validate_protocol(const ScalarVolume& vol, MrProtocol protocol) {
  std::vector<Advisory> out;
  const double through_plane = vol.grid.spacing.z();
  const std::string found = detail::format_number(through_plane);
  if (protocol == MrProtocol::T1) {
    if (std::abs(through_plane - 3.0) > kOrthoTolerance) {
      out.push_back({"spacing", "T1 slice thickness expected 3 mm with no gap; found " + found + " mm"});
    }
  } else {
    if (through_plane < 4.0 - kOrthoTolerance || through_plane > 6.0 + kOrthoTolerance) {
      out.push_back({"spacing", "T2 slice thickness expected 4-5 mm with 0-1 mm gap (4-6 mm combined); found " +
                                    found + " mm"});
    }
  }
  return out;
}

double voxel_volume_cc(const ScalarVolume& vol) { return vol.grid.voxel_volume_cc(); }

// ---------------------------------------------------------------------------
// SVOL v1

namespace {

struct SvolHeader {
  GridGeometry grid;
  VoxelType dtype = VoxelType::Float32;
  std::string modality;
  std::map<std::uint8_t, StructureKind> legend;
  std::size_t payload_offset = 0;
};

[[noreturn]] void header_error(const std::string& field, const std::string& detail) {
  fail(ErrorCode::Format, "svol header field '" + field + "': " + detail);
}

template <typename T, std::size_t N>
std::array<T, N> parse_fields(const std::vector<std::string_view>& tok, const std::string& field) {
  if (tok.size() != N + 1) header_error(field, "expected " + std::to_string(N) + " values");
  std::array<T, N> out{};
  for (std::size_t n = 0; n < N; ++n) {
    if (!detail::parse_number(tok[n + 1], out[n])) header_error(field, "cannot parse '" + std::string(tok[n + 1]) + "'");
  }
  return out;
}

SvolHeader parse_header(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto end = text.find("\n\n");
  if (end == std::string_view::npos) header_error("header", "missing blank line terminating the header");

  SvolHeader h;
  h.payload_offset = end + 2;
  bool have_dims = false, have_spacing = false, have_origin = false, have_orient = false, have_dtype = false,
       have_modality = false;

  std::size_t pos = 0;
  int line_no = 0;
  while (pos < end + 1) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    auto tok = detail::split_ws(line);
    if (line_no++ == 0) {
      if (tok.size() != 2 || tok[0] != "svol" || tok[1] != "1") header_error("svol", "expected magic line 'svol 1'");
      continue;
    }
    if (tok.empty()) header_error("header", "unexpected empty line");
    const std::string key(tok[0]);
    if (key == "dims") {
      auto d = parse_fields<long long, 3>(tok, key);
      for (int a = 0; a < 3; ++a) {
        if (d[a] <= 0 || d[a] > (1LL << 30)) header_error(key, "dimensions must be positive");
        h.grid.dims[a] = static_cast<int>(d[a]);
      }
      have_dims = true;
    } else if (key == "spacing") {
      auto s = parse_fields<double, 3>(tok, key);
      for (int a = 0; a < 3; ++a) {
        if (!(s[a] > 0.0) || !std::isfinite(s[a])) header_error(key, "spacing must be positive and finite");
      }
      h.grid.spacing = Vec3(s[0], s[1], s[2]);
      have_spacing = true;
    } else if (key == "origin") {
      auto o = parse_fields<double, 3>(tok, key);
      h.grid.origin = Vec3(o[0], o[1], o[2]);
      if (!h.grid.origin.allFinite()) header_error(key, "non-finite coordinate");
      have_origin = true;
    } else if (key == "orient") {
      auto r = parse_fields<double, 9>(tok, key);
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) h.grid.orientation(row, col) = r[row * 3 + col];
      }
      try {
        check_orthonormal_columns(h.grid.orientation, "orient");
      } catch (const Error& e) {
        header_error(key, e.what());
      }
      have_orient = true;
    } else if (key == "dtype") {
      if (tok.size() != 2) header_error(key, "expected one value");
      if (tok[1] == "float32") h.dtype = VoxelType::Float32;
      else if (tok[1] == "uint8") h.dtype = VoxelType::UInt8;
      else if (tok[1] == "int16") h.dtype = VoxelType::Int16;
      else header_error(key, "unsupported type '" + std::string(tok[1]) + "'");
      have_dtype = true;
    } else if (key == "modality") {
      auto rest = detail::trim(line.substr(line.find("modality") + 8));
      if (rest.empty()) header_error(key, "missing tag");
      h.modality = std::string(rest);
      have_modality = true;
    } else if (key == "label") {
      if (tok.size() != 3) header_error(key, "expected 'label CODE NAME'");
      int code = 0;
      if (!detail::parse_number(tok[1], code) || code < 1 || code > 255) header_error(key, "code must be 1..255");
      auto c = static_cast<std::uint8_t>(code);
      if (h.legend.contains(c)) header_error(key, "duplicate code " + std::to_string(code));
      h.legend.emplace(c, StructureKind::parse(tok[2]));
    } else {
      header_error(key, "unknown field");
    }
  }
  if (!have_dims) header_error("dims", "missing");
  if (!have_spacing) header_error("spacing", "missing");
  if (!have_origin) header_error("origin", "missing");
  if (!have_orient) header_error("orient", "missing");
  if (!have_dtype) header_error("dtype", "missing");
  if (!have_modality) header_error("modality", "missing");
  return h;
}

std::span<const std::uint8_t> checked_payload(std::span<const std::uint8_t> bytes, const SvolHeader& h) {
  const std::size_t expected = h.grid.voxel_count() * element_size(h.dtype);
  const std::size_t available = bytes.size() - h.payload_offset;
  if (available < expected) {
    fail(ErrorCode::Truncation, "svol payload truncated: expected " + std::to_string(expected) + " bytes, found " +
                                    std::to_string(available));
  }
  if (available > expected) {
    fail(ErrorCode::Format, "svol payload: " + std::to_string(available - expected) + " trailing bytes");
  }
  return bytes.subspan(h.payload_offset, expected);
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void store_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) std::reverse(b, b + sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

std::string header_text(const GridGeometry& g, VoxelType dtype, const std::string& modality,
                        const std::map<std::uint8_t, StructureKind>* legend) {
  using detail::format_number;
  std::ostringstream os;
  os << "svol 1\n";
  os << "dims " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n';
  os << "spacing " << format_number(g.spacing.x()) << ' ' << format_number(g.spacing.y()) << ' '
     << format_number(g.spacing.z()) << '\n';
  os << "origin " << format_number(g.origin.x()) << ' ' << format_number(g.origin.y()) << ' '
     << format_number(g.origin.z()) << '\n';
  os << "orient";
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) os << ' ' << format_number(g.orientation(row, col));
  }
  os << '\n';
  os << "dtype " << to_string(dtype) << '\n';
  os << "modality " << modality << '\n';
  if (legend) {
    for (const auto& [code, kind] : *legend) os << "label " << static_cast<int>(code) << ' ' << kind.name() << '\n';
  }
  os << '\n';
  return os.str();
}

void check_modality(const std::string& modality) {
  if (detail::trim(modality).empty() || modality.find('\n') != std::string::npos ||
      detail::trim(modality) != modality) {
    fail(ErrorCode::Validation, "modality: tag must be a non-empty single line without surrounding whitespace");
  }
}

}  // namespace

ScalarVolume parse_volume(std::span<const std::uint8_t> bytes) {
  SvolHeader h = parse_header(bytes);
  auto payload = checked_payload(bytes, h);
  ScalarVolume vol;
  vol.grid = h.grid;
  vol.dtype = h.dtype;
  vol.modality = h.modality;
  const std::size_t n = h.grid.voxel_count();
  vol.voxels.resize(n);
  const std::uint8_t* p = payload.data();
  switch (h.dtype) {
    case VoxelType::Float32:
      for (std::size_t i = 0; i < n; ++i) vol.voxels[i] = load_le<float>(p + 4 * i);
      break;
    case VoxelType::Int16:
      for (std::size_t i = 0; i < n; ++i) vol.voxels[i] = static_cast<float>(load_le<std::int16_t>(p + 2 * i));
      break;
    case VoxelType::UInt8:
      for (std::size_t i = 0; i < n; ++i) vol.voxels[i] = static_cast<float>(p[i]);
      break;
  }
  return vol;
}

LabelMap parse_label_map(std::span<const std::uint8_t> bytes) {
  SvolHeader h = parse_header(bytes);
  if (h.dtype != VoxelType::UInt8) header_error("dtype", "label maps must be uint8");
  auto payload = checked_payload(bytes, h);
  LabelMap labels;
  labels.grid = h.grid;
  labels.modality = h.modality;
  labels.legend = std::move(h.legend);
  labels.voxels.assign(payload.begin(), payload.end());
  labels.validate();
  return labels;
}

std::vector<std::uint8_t> serialize_volume(const ScalarVolume& vol) {
  vol.validate();
  check_modality(vol.modality);
  const std::string head = header_text(vol.grid, vol.dtype, vol.modality, nullptr);
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(out.size() + vol.voxels.size() * element_size(vol.dtype));
  for (float v : vol.voxels) {
    switch (vol.dtype) {
      case VoxelType::Float32: store_le(out, v); break;
      case VoxelType::Int16: {
        if (!(v >= -32768.0f && v <= 32767.0f) || v != std::nearbyint(v)) {
          fail(ErrorCode::Validation, "voxels: value not representable as int16");
        }
        store_le(out, static_cast<std::int16_t>(v));
        break;
      }
      case VoxelType::UInt8: {
        if (!(v >= 0.0f && v <= 255.0f) || v != std::nearbyint(v)) {
          fail(ErrorCode::Validation, "voxels: value not representable as uint8");
        }
        out.push_back(static_cast<std::uint8_t>(v));
        break;
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> serialize_label_map(const LabelMap& labels) {
  labels.validate();
  check_modality(labels.modality);
  for (const auto& [code, kind] : labels.legend) {
    const auto name = kind.name();
    if (name.empty() || detail::split_ws(name).size() != 1 || name.find('\n') != std::string::npos) {
      fail(ErrorCode::Validation, "label: structure name must be a single token");
    }
  }
  const std::string head = header_text(labels.grid, VoxelType::UInt8, labels.modality, &labels.legend);
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), labels.voxels.begin(), labels.voxels.end());
  return out;
}

ScalarVolume load_volume(const std::filesystem::path& path) { return parse_volume(read_file(path)); }

LabelMap load_label_map(const std::filesystem::path& path) { return parse_label_map(read_file(path)); }

void save_volume(const ScalarVolume& vol, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_volume(vol));
}

void save_label_map(const LabelMap& labels, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_label_map(labels));
}

// ---------------------------------------------------------------------------
// Slicing

void SlicePlane::validate() const {
  Mat3 m;
  m.col(0) = u;
  m.col(1) = v;
  m.col(2) = normal;
  check_orthonormal_columns(m, "slice plane");
  if (resolution[0] <= 0 || resolution[1] <= 0) fail(ErrorCode::Validation, "slice plane: resolution must be positive");
  if (!(extent[0] > 0.0) || !(extent[1] > 0.0)) fail(ErrorCode::Validation, "slice plane: extent must be positive");
}

SlicePlane SlicePlane::grid_aligned(const GridGeometry& grid, int axis, int index) {
  if (axis < 0 || axis > 2) fail(ErrorCode::InvalidArgument, "slice axis must be 0, 1 or 2");
  if (index < 0 || index >= grid.dims[axis]) fail(ErrorCode::Range, "slice index outside the grid");
  const int a = (axis + 1) % 3;
  const int b = (axis + 2) % 3;
  // Keep u, v in increasing index order of the remaining axes.
  const int ua = std::min(a, b);
  const int vb = std::max(a, b);
  SlicePlane p;
  std::array<int, 3> ijk{0, 0, 0};
  ijk[axis] = index;
  p.origin = grid.voxel_center(ijk[0], ijk[1], ijk[2]);
  p.u = grid.orientation.col(ua);
  p.v = grid.orientation.col(vb);
  p.normal = p.u.cross(p.v);
  p.resolution = {grid.dims[ua], grid.dims[vb]};
  p.extent = {grid.dims[ua] * grid.spacing[ua], grid.dims[vb] * grid.spacing[vb]};
  return p;
}

SlicePlane SlicePlane::oblique(const Vec3& center, const Vec3& normal, const Vec3& u_hint,
                               std::array<double, 2> extent, std::array<int, 2> resolution) {
  SlicePlane p;
  p.normal = normal.normalized();
  Vec3 u = u_hint - p.normal * p.normal.dot(u_hint);
  if (u.norm() < 1e-9) fail(ErrorCode::Degenerate, "slice plane: u hint is parallel to the normal");
  p.u = u.normalized();
  p.v = p.normal.cross(p.u);
  p.extent = extent;
  p.resolution = resolution;
  p.origin = center - p.u * (0.5 * extent[0]) - p.v * (0.5 * extent[1]);
  p.validate();
  return p;
}

double sample_volume(const ScalarVolume& vol, const Vec3& world, Interpolation interp) {
  const GridGeometry& g = vol.grid;
  const Vec3 c = g.continuous_index(world);
  if (interp == Interpolation::Nearest) {
    std::array<int, 3> n{};
    for (int a = 0; a < 3; ++a) {
      const double r = std::floor(c[a] + 0.5);
      if (!(r >= 0.0) || r > g.dims[a] - 1) return kSliceFillValue;
      n[a] = static_cast<int>(r);
    }
    return vol.at(n[0], n[1], n[2]);
  }

  std::array<int, 3> lo{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double x = c[a];
    if (!(x >= -kEdgeTolerance) || x > g.dims[a] - 1 + kEdgeTolerance) return kSliceFillValue;
    if (g.dims[a] == 1) {
      lo[a] = 0;
      frac[a] = 0.0;
      continue;
    }
    const int i0 = std::clamp(static_cast<int>(std::floor(x)), 0, g.dims[a] - 2);
    lo[a] = i0;
    frac[a] = std::clamp(x - i0, 0.0, 1.0);
  }
  auto value = [&](int di, int dj, int dk) -> double {
    const int i = std::min(lo[0] + di, g.dims[0] - 1);
    const int j = std::min(lo[1] + dj, g.dims[1] - 1);
    const int k = std::min(lo[2] + dk, g.dims[2] - 1);
    return vol.at(i, j, k);
  };
  const double fx = frac[0], fy = frac[1], fz = frac[2];
  const double c00 = value(0, 0, 0) * (1 - fx) + value(1, 0, 0) * fx;
  const double c10 = value(0, 1, 0) * (1 - fx) + value(1, 1, 0) * fx;
  const double c01 = value(0, 0, 1) * (1 - fx) + value(1, 0, 1) * fx;
  const double c11 = value(0, 1, 1) * (1 - fx) + value(1, 1, 1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

Image2D extract_slice(const ScalarVolume& vol, const SlicePlane& plane, Interpolation interp) {
  plane.validate();
  Image2D img;
  img.width = plane.resolution[0];
  img.height = plane.resolution[1];
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int j = 0; j < img.height; ++j) {
    for (int i = 0; i < img.width; ++i) {
      img.pixels[static_cast<std::size_t>(j) * img.width + i] = sample_volume(vol, plane.sample_point(i, j), interp);
    }
  }
  return img;
}

}  // namespace brachy
