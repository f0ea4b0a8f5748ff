#include "brachy/mesh.hpp"

#include "brachy/file_io.hpp"
#include "text_format.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace brachy {

namespace {

constexpr std::size_t kHeaderBytes = 80;
constexpr std::size_t kFacetBytes = 50;
constexpr double kNormalTolerance = 1e-3;

using FloatKey = std::array<std::uint32_t, 3>;

struct FloatKeyHash {
  std::size_t operator()(const FloatKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : k) {
      h ^= v;
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

FloatKey key_of(const Vec3& p) {
  return {std::bit_cast<std::uint32_t>(static_cast<float>(p.x())),
          std::bit_cast<std::uint32_t>(static_cast<float>(p.y())),
          std::bit_cast<std::uint32_t>(static_cast<float>(p.z()))};
}

Vec3 to_float_precision(const Vec3& p) {
  return Vec3(static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()));
}

Vec3 right_hand_normal(const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 n = (b - a).cross(c - a);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

/// Welds a facet soup into an indexed mesh, numbering vertices by first use.
class Welder {
 public:
  std::uint32_t add(const Vec3& p) {
    auto [it, inserted] = index_.try_emplace(key_of(p), static_cast<std::uint32_t>(vertices_.size()));
    if (inserted) vertices_.push_back(p);
    return it->second;
  }
  std::vector<Vec3> take() { return std::move(vertices_); }

 private:
  std::unordered_map<FloatKey, std::uint32_t, FloatKeyHash> index_;
  std::vector<Vec3> vertices_;
};

void flag_normals(TriangleMesh& mesh) {
  mesh.flagged_normals.clear();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if ((mesh.normals[t] - mesh.winding_normal(t)).norm() > kNormalTolerance) mesh.flagged_normals.push_back(t);
  }
}

template <typename T>
T read_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void write_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

bool looks_ascii(std::span<const std::uint8_t> bytes) {
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), std::min<std::size_t>(bytes.size(), 512));
  text = detail::trim(text);
  while (!text.empty() && (text.front() == '\n')) text.remove_prefix(1);
  return text.substr(0, 5) == "solid";
}

TriangleMesh parse_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + 4) {
    fail(ErrorCode::Truncation, "binary STL shorter than its 84-byte header");
  }
  const std::uint32_t count = read_le<std::uint32_t>(bytes.data() + kHeaderBytes);
  const std::size_t expected = kHeaderBytes + 4 + static_cast<std::size_t>(count) * kFacetBytes;
  if (bytes.size() < expected) {
    const std::size_t present = (bytes.size() - kHeaderBytes - 4) / kFacetBytes;
    fail(ErrorCode::Truncation, "binary STL declares " + std::to_string(count) + " facets but only " +
                                    std::to_string(present) + " are present");
  }
  if (bytes.size() > expected) {
    fail(ErrorCode::Format, "binary STL declares " + std::to_string(count) + " facets but carries " +
                                std::to_string(bytes.size() - expected) + " extra bytes");
  }

  TriangleMesh mesh;
  const char* header = reinterpret_cast<const char*>(bytes.data());
  mesh.name.assign(header, strnlen(header, kHeaderBytes));
  Welder welder;
  mesh.triangles.reserve(count);
  mesh.normals.reserve(count);
  for (std::uint32_t f = 0; f < count; ++f) {
    const std::uint8_t* p = bytes.data() + kHeaderBytes + 4 + static_cast<std::size_t>(f) * kFacetBytes;
    float v[12];
    for (int n = 0; n < 12; ++n) {
      v[n] = read_le<float>(p + 4 * n);
      if (!std::isfinite(v[n])) fail(ErrorCode::Parse, "non-finite coordinate in facet " + std::to_string(f));
    }
    mesh.normals.emplace_back(v[0], v[1], v[2]);
    std::array<std::uint32_t, 3> tri{};
    for (int c = 0; c < 3; ++c) tri[c] = welder.add(Vec3(v[3 + 3 * c], v[4 + 3 * c], v[5 + 3 * c]));
    mesh.triangles.push_back(tri);
  }
  mesh.vertices = welder.take();
  return mesh;
}

class AsciiReader {
 public:
  explicit AsciiReader(std::string_view text) : text_(text) {}

  std::string_view next() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  std::string rest_of_line() {
    const std::size_t nl = text_.find('\n', pos_);
    const std::size_t end = nl == std::string_view::npos ? text_.size() : nl;
    std::string out(detail::trim(text_.substr(pos_, end - pos_)));
    pos_ = end;
    return out;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

TriangleMesh parse_ascii(std::span<const std::uint8_t> bytes) {
  AsciiReader in(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (in.next() != "solid") fail(ErrorCode::Format, "ASCII STL must begin with 'solid'");
  TriangleMesh mesh;
  mesh.name = in.rest_of_line();
  Welder welder;

  auto expect = [&](std::string_view word, std::size_t facet) {
    auto tok = in.next();
    if (tok != word) {
      fail(ErrorCode::Format, "ASCII STL facet " + std::to_string(facet) + ": expected '" + std::string(word) +
                                  "', found '" + std::string(tok) + "'");
    }
  };
  auto number = [&](std::size_t facet) {
    auto tok = in.next();
    float v = 0.0f;
    if (!detail::parse_number(tok, v) || !std::isfinite(v)) {
      fail(ErrorCode::Parse, "ASCII STL facet " + std::to_string(facet) + ": bad coordinate '" + std::string(tok) + "'");
    }
    return static_cast<double>(v);
  };

  for (std::size_t facet = 0;; ++facet) {
    auto tok = in.next();
    if (tok == "endsolid") break;
    if (tok.empty()) fail(ErrorCode::Truncation, "ASCII STL ended without 'endsolid'");
    if (tok != "facet") {
      fail(ErrorCode::Format, "ASCII STL facet " + std::to_string(facet) + ": expected 'facet', found '" +
                                  std::string(tok) + "'");
    }
    expect("normal", facet);
    const double nx = number(facet), ny = number(facet), nz = number(facet);
    mesh.normals.emplace_back(nx, ny, nz);
    expect("outer", facet);
    expect("loop", facet);
    std::array<std::uint32_t, 3> tri{};
    for (int c = 0; c < 3; ++c) {
      expect("vertex", facet);
      const double x = number(facet), y = number(facet), z = number(facet);
      tri[c] = welder.add(Vec3(x, y, z));
    }
    expect("endloop", facet);
    expect("endfacet", facet);
    mesh.triangles.push_back(tri);
  }
  mesh.vertices = welder.take();
  return mesh;
}

void append_ascii_vec(std::ostringstream& os, const Vec3& v) {
  os << detail::format_number(static_cast<float>(v.x())) << ' ' << detail::format_number(static_cast<float>(v.y()))
     << ' ' << detail::format_number(static_cast<float>(v.z()));
}

}  // namespace

Vec3 TriangleMesh::winding_normal(std::size_t tri) const {
  return right_hand_normal(corner(tri, 0), corner(tri, 1), corner(tri, 2));
}

double TriangleMesh::area(std::size_t tri) const {
  return 0.5 * (corner(tri, 1) - corner(tri, 0)).cross(corner(tri, 2) - corner(tri, 0)).norm();
}

double TriangleMesh::surface_area() const {
  double total = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) total += area(t);
  return total;
}

void TriangleMesh::validate(bool permissive) const {
  if (normals.size() != triangles.size()) fail(ErrorCode::Validation, "mesh: one normal per triangle required");
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (auto idx : triangles[t]) {
      if (idx >= vertices.size()) fail(ErrorCode::Validation, "mesh: triangle " + std::to_string(t) + " index out of range");
    }
    if (!permissive && area(t) <= kDegenerateArea) {
      fail(ErrorCode::Validation, "mesh: triangle " + std::to_string(t) + " is degenerate");
    }
  }
}

TriangleMesh parse_stl(std::span<const std::uint8_t> bytes, const StlLoadOptions& options) {
  bool binary = true;
  if (bytes.size() >= kHeaderBytes + 4) {
    const std::uint32_t count = read_le<std::uint32_t>(bytes.data() + kHeaderBytes);
    const bool size_matches = bytes.size() == kHeaderBytes + 4 + static_cast<std::size_t>(count) * kFacetBytes;
    binary = size_matches || !looks_ascii(bytes);
  } else {
    binary = !looks_ascii(bytes);
  }
  TriangleMesh mesh = binary ? parse_binary(bytes) : parse_ascii(bytes);
  mesh.validate(options.permissive);
  flag_normals(mesh);
  return mesh;
}

std::vector<std::uint8_t> serialize_stl(const TriangleMesh& mesh, StlFormat format) {
  mesh.validate(true);
  std::vector<std::uint8_t> out;
  if (format == StlFormat::Binary) {
    out.reserve(kHeaderBytes + 4 + mesh.triangles.size() * kFacetBytes);
    std::array<std::uint8_t, kHeaderBytes> header{};
    std::memcpy(header.data(), mesh.name.data(), std::min(mesh.name.size(), kHeaderBytes));
    out.insert(out.end(), header.begin(), header.end());
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(mesh.triangles.size()));
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      const Vec3& n = mesh.normals[t];
      for (int a = 0; a < 3; ++a) write_le<float>(out, static_cast<float>(n[a]));
      for (int c = 0; c < 3; ++c) {
        const Vec3 p = mesh.corner(t, c);
        for (int a = 0; a < 3; ++a) write_le<float>(out, static_cast<float>(p[a]));
      }
      write_le<std::uint16_t>(out, 0);
    }
    return out;
  }

  std::string name = mesh.name;
  std::replace(name.begin(), name.end(), '\n', ' ');
  std::ostringstream os;
  os << "solid " << name << '\n';
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    os << "  facet normal ";
    append_ascii_vec(os, mesh.normals[t]);
    os << "\n    outer loop\n";
    for (int c = 0; c < 3; ++c) {
      os << "      vertex ";
      append_ascii_vec(os, mesh.corner(t, c));
      os << '\n';
    }
    os << "    endloop\n  endfacet\n";
  }
  os << "endsolid " << name << '\n';
  const std::string text = os.str();
  out.assign(text.begin(), text.end());
  return out;
}

TriangleMesh load_stl(const std::filesystem::path& path, const StlLoadOptions& options) {
  return parse_stl(read_file(path), options);
}

void save_stl(const TriangleMesh& mesh, const std::filesystem::path& path, StlFormat format) {
  write_file_atomic(path, serialize_stl(mesh, format));
}

// ---------------------------------------------------------------------------
// Construction

void MeshBuilder::add_triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
  soup_.push_back({to_float_precision(a), to_float_precision(b), to_float_precision(c)});
}

TriangleMesh MeshBuilder::build() const {
  TriangleMesh mesh;
  mesh.name = name_;
  Welder welder;
  for (const auto& tri : soup_) {
    if ((tri[1] - tri[0]).cross(tri[2] - tri[0]).norm() * 0.5 <= kDegenerateArea) continue;
    mesh.triangles.push_back({welder.add(tri[0]), welder.add(tri[1]), welder.add(tri[2])});
    mesh.normals.push_back(to_float_precision(right_hand_normal(tri[0], tri[1], tri[2])));
  }
  mesh.vertices = welder.take();
  flag_normals(mesh);
  return mesh;
}

namespace {

/// Adds a triangle, flipping its winding if needed so the right-hand normal
/// points along `outward`.
void add_facing(MeshBuilder& b, const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& outward) {
  if ((p1 - p0).cross(p2 - p0).dot(outward) >= 0.0) {
    b.add_triangle(p0, p1, p2);
  } else {
    b.add_triangle(p0, p2, p1);
  }
}

struct PolarPoint {
  double angle;
  Vec3 point;
};

/// Lattice points on the boundary of cell [xs[a0], xs[a1]] x [ys[b0], ys[b1]],
/// sorted by angle around `center` in [0, 2π). Neighboring cells read the
/// same lattice entries, so shared edges weld exactly.
std::vector<PolarPoint> cell_loop(const std::vector<double>& xs, const std::vector<double>& ys, int a0, int a1, int b0,
                                  int b1, const Vec3& center, double z) {
  std::vector<PolarPoint> loop;
  auto add = [&](int a, int b) {
    const Vec3 p(xs[a], ys[b], z);
    double angle = std::atan2(p.y() - center.y(), p.x() - center.x());
    if (angle < 0.0) angle += 2.0 * std::numbers::pi;
    loop.push_back({angle, p});
  };
  for (int a = a0; a < a1; ++a) add(a, b0);
  for (int b = b0; b < b1; ++b) add(a1, b);
  for (int a = a1; a > a0; --a) add(a, b1);
  for (int b = b1; b > b0; --b) add(a0, b);
  std::sort(loop.begin(), loop.end(), [](const PolarPoint& l, const PolarPoint& r) { return l.angle < r.angle; });
  return loop;
}

/// Triangulates the band between an inner ring and an outer loop, both
/// sorted by angle and both starting at angle 0.
void stitch_band(MeshBuilder& b, const std::vector<PolarPoint>& inner, const std::vector<PolarPoint>& outer,
                 const Vec3& outward) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const std::size_t n = inner.size(), m = outer.size();
  std::size_t i = 0, o = 0;
  while (i < n || o < m) {
    const double next_inner = i + 1 < n ? inner[i + 1].angle : kTwoPi;
    const double next_outer = o + 1 < m ? outer[o + 1].angle : kTwoPi;
    const Vec3& a = inner[i % n].point;
    const Vec3& c = outer[o % m].point;
    if (i == n || (o < m && next_outer <= next_inner)) {
      add_facing(b, a, c, outer[(o + 1) % m].point, outward);
      ++o;
    } else {
      add_facing(b, a, c, inner[(i + 1) % n].point, outward);
      ++i;
    }
  }
}

}  // namespace

std::string hole_label(int row, int col) {
  std::string letters;
  for (int r = row + 1; r > 0; r = (r - 1) / 26) letters.insert(letters.begin(), static_cast<char>('A' + (r - 1) % 26));
  return letters + std::to_string(col + 1);
}

const Hole* TemplateModel::find_hole(const std::string& hole_id) const {
  for (const auto& h : holes) {
    if (h.id == hole_id) return &h;
  }
  return nullptr;
}

const Hole& TemplateModel::hole(const std::string& hole_id) const {
  const Hole* h = find_hole(hole_id);
  if (!h) fail(ErrorCode::NotFound, "unknown template hole '" + hole_id + "'");
  return *h;
}

void TemplateModel::validate() const {
  std::set<std::string> ids;
  for (const auto& h : holes) {
    if (!ids.insert(h.id).second) fail(ErrorCode::Validation, "template: duplicate hole id " + h.id);
    if ((h.direction - face_normal).norm() > 1e-6) fail(ErrorCode::Validation, "template: hole " + h.id + " direction");
    if (!holes.empty() && std::abs((h.position - holes.front().position).dot(face_normal)) > 1e-3) {
      fail(ErrorCode::Validation, "template: hole " + h.id + " is off the face plane");
    }
  }
}

TemplateModel make_template(const TemplateSpec& spec) {
  if (spec.rows < 1 || spec.cols < 1) fail(ErrorCode::InvalidArgument, "template needs at least one row and column");
  if (!(spec.pitch_mm > 0.0)) fail(ErrorCode::InvalidArgument, "template pitch must be positive");
  if (!(spec.thickness_mm > 0.0) || spec.margin_mm < 0.0) fail(ErrorCode::InvalidArgument, "template plate dimensions");
  if (!(spec.hole_radius_mm > 0.0) || spec.hole_radius_mm >= spec.pitch_mm / 2.0) {
    fail(ErrorCode::InvalidArgument, "template hole radius must be positive and below half the pitch");
  }
  if (spec.ring_segments < 3) fail(ErrorCode::InvalidArgument, "template hole rings need at least 3 segments");

  TemplateModel model;
  model.id = spec.id;
  model.spec = spec;
  model.face_normal = Vec3::UnitZ();
  model.plate_thickness = spec.thickness_mm;
  model.pitch = spec.pitch_mm;

  const double pitch = spec.pitch_mm;
  const double t = spec.thickness_mm;
  std::vector<double> ring_angles(static_cast<std::size_t>(spec.ring_segments));
  for (int k = 0; k < spec.ring_segments; ++k) ring_angles[k] = 2.0 * std::numbers::pi * k / spec.ring_segments;

  // Face lattice: each cell edge is split into `sub` pieces.
  const int sub = std::max(1, spec.ring_segments / 4);
  std::vector<double> xs(static_cast<std::size_t>(spec.cols * sub + 1));
  std::vector<double> ys(static_cast<std::size_t>(spec.rows * sub + 1));
  for (std::size_t a = 0; a < xs.size(); ++a) xs[a] = (static_cast<double>(a) / sub - spec.cols / 2.0) * pitch;
  for (std::size_t b = 0; b < ys.size(); ++b) ys[b] = (static_cast<double>(b) / sub - spec.rows / 2.0) * pitch;

  MeshBuilder builder(spec.id);
  const Vec3 down(0, 0, -t);
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const Vec3 center((c - (spec.cols - 1) / 2.0) * pitch, ((spec.rows - 1) / 2.0 - r) * pitch, 0.0);
      model.holes.push_back({hole_label(r, c), r, c, center, model.face_normal});

      const int a0 = c * sub, b0 = (spec.rows - 1 - r) * sub;
      for (double z : {0.0, -t}) {
        std::vector<PolarPoint> ring;
        for (double a : ring_angles) {
          ring.push_back({a, center + Vec3(spec.hole_radius_mm * std::cos(a), spec.hole_radius_mm * std::sin(a), z)});
        }
        const Vec3 outward = z == 0.0 ? Vec3::UnitZ() : Vec3(-Vec3::UnitZ());
        stitch_band(builder, ring, cell_loop(xs, ys, a0, a0 + sub, b0, b0 + sub, center, z), outward);
      }
      // Hole wall; the material's outward normal points at the hole axis.
      for (int k = 0; k < spec.ring_segments; ++k) {
        const double a0r = ring_angles[k];
        const double a1r = ring_angles[(k + 1) % spec.ring_segments];
        const Vec3 p0 = center + Vec3(spec.hole_radius_mm * std::cos(a0r), spec.hole_radius_mm * std::sin(a0r), 0.0);
        const Vec3 p1 = center + Vec3(spec.hole_radius_mm * std::cos(a1r), spec.hole_radius_mm * std::sin(a1r), 0.0);
        const Vec3 mid = 0.5 * (p0 + p1);
        const Vec3 inward = Vec3(center.x() - mid.x(), center.y() - mid.y(), 0.0);
        add_facing(builder, p0, p1, p1 + down, inward);
        add_facing(builder, p0, p1 + down, p0 + down, inward);
      }
    }
  }

  // Frame between the hole grid and the plate border, split along the lattice
  // lines so it meets the cells without T-junctions.
  std::vector<double> fx = xs, fy = ys;
  if (spec.margin_mm > 0.0) {
    fx.insert(fx.begin(), xs.front() - spec.margin_mm);
    fx.push_back(xs.back() + spec.margin_mm);
    fy.insert(fy.begin(), ys.front() - spec.margin_mm);
    fy.push_back(ys.back() + spec.margin_mm);
    const int off = 1;
    const int nx = static_cast<int>(fx.size()) - 1, ny = static_cast<int>(fy.size()) - 1;
    for (int b = 0; b < ny; ++b) {
      for (int a = 0; a < nx; ++a) {
        const bool inner = a >= off && a < nx - off && b >= off && b < ny - off;
        if (inner) continue;
        for (double z : {0.0, -t}) {
          const Vec3 outward = z == 0.0 ? Vec3::UnitZ() : Vec3(-Vec3::UnitZ());
          const Vec3 p00(fx[a], fy[b], z), p10(fx[a + 1], fy[b], z), p11(fx[a + 1], fy[b + 1], z), p01(fx[a], fy[b + 1], z);
          add_facing(builder, p00, p10, p11, outward);
          add_facing(builder, p00, p11, p01, outward);
        }
      }
    }
  }
  // Side walls along every border lattice segment.
  std::vector<Vec3> border;
  const int nx = static_cast<int>(fx.size()) - 1, ny = static_cast<int>(fy.size()) - 1;
  for (int a = 0; a < nx; ++a) border.emplace_back(fx[a], fy[0], 0.0);
  for (int b = 0; b < ny; ++b) border.emplace_back(fx[nx], fy[b], 0.0);
  for (int a = nx; a > 0; --a) border.emplace_back(fx[a], fy[ny], 0.0);
  for (int b = ny; b > 0; --b) border.emplace_back(fx[0], fy[b], 0.0);
  for (std::size_t n = 0; n < border.size(); ++n) {
    const Vec3& p = border[n];
    const Vec3& q = border[(n + 1) % border.size()];
    const Vec3 edge = q - p;
    const Vec3 side_out(edge.y(), -edge.x(), 0.0);  // border runs counter-clockwise
    add_facing(builder, p, q, q + down, side_out);
    add_facing(builder, p, q + down, p + down, side_out);
  }

  model.mesh = builder.build();
  model.validate();
  return model;
}

ObturatorModel make_obturator(const ObturatorSpec& spec) {
  if (!(spec.radius_mm > 0.0) || !(spec.length_mm > 0.0) || spec.segments < 3) {
    fail(ErrorCode::InvalidArgument, "obturator needs positive radius, length and at least 3 segments");
  }
  ObturatorModel model;
  model.radius = spec.radius_mm;
  MeshBuilder builder("obturator");
  const Vec3 top(0, 0, spec.length_mm);
  for (int k = 0; k < spec.segments; ++k) {
    const double a0 = 2.0 * std::numbers::pi * k / spec.segments;
    const double a1 = 2.0 * std::numbers::pi * (k + 1) / spec.segments;
    const Vec3 p0 = spec.radius_mm * Vec3(std::cos(a0), std::sin(a0), 0.0);
    const Vec3 p1 = spec.radius_mm * Vec3(std::cos(a1), std::sin(a1), 0.0);
    const Vec3 radial = (p0 + p1).normalized();
    add_facing(builder, p0, p1, p1 + top, radial);
    add_facing(builder, p0, p1 + top, p0 + top, radial);
    add_facing(builder, Vec3::Zero(), p0, p1, Vec3(-Vec3::UnitZ()));
    add_facing(builder, top, p0 + top, p1 + top, Vec3::UnitZ());
  }
  model.mesh = builder.build();
  return model;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<SurfaceSample> sample_surface_with_source(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) fail(ErrorCode::InvalidArgument, "cannot sample an empty mesh");
  if (n == 0) fail(ErrorCode::InvalidArgument, "sample count must be at least 1");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.area(t);
    cumulative[t] = total;
  }
  if (!(total > 0.0)) fail(ErrorCode::Degenerate, "mesh has zero surface area");

  std::mt19937_64 rng(seed);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<SurfaceSample> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    const double r1 = std::sqrt(uniform());
    const double r2 = uniform();
    const Vec3 a = mesh.corner(t, 0), b = mesh.corner(t, 1), c = mesh.corner(t, 2);
    out.push_back({(1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c, t});
  }
  return out;
}

PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  auto samples = sample_surface_with_source(mesh, n, seed);
  PointCloud out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.point);
  return out;
}

}  // namespace brachy
