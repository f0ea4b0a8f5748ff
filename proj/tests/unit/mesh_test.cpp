#include "brachy/mesh.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>

using namespace brachy;

namespace {

TriangleMesh tetrahedron() {
  MeshBuilder b("tetra");
  const Vec3 o(0, 0, 0), x(1, 0, 0), y(0, 1, 0), z(0, 0, 1);
  b.add_triangle(o, y, x);
  b.add_triangle(o, x, z);
  b.add_triangle(o, z, y);
  b.add_triangle(x, y, z);
  return b.build();
}

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint8_t b[4];
  std::memcpy(b, &f, 4);
  out.insert(out.end(), b, b + 4);
}

std::vector<std::uint8_t> binary_stl(std::uint32_t declared, const std::vector<std::array<float, 12>>& facets) {
  std::vector<std::uint8_t> out(80, 0);
  for (int s = 0; s < 4; ++s) out.push_back(static_cast<std::uint8_t>(declared >> (8 * s)));
  for (const auto& f : facets) {
    for (float v : f) put_f32(out, v);
    out.push_back(0);
    out.push_back(0);
  }
  return out;
}

void expect_same_mesh(const TriangleMesh& a, const TriangleMesh& b, double tol) {
  ASSERT_EQ(a.vertices.size(), b.vertices.size());
  ASSERT_EQ(a.triangles, b.triangles);
  for (std::size_t n = 0; n < a.vertices.size(); ++n) EXPECT_LE((a.vertices[n] - b.vertices[n]).norm(), tol);
}

}  // namespace

TEST(Stl, BinaryTetrahedronWelds) {
  const TriangleMesh m = parse_stl(serialize_stl(tetrahedron(), StlFormat::Binary));
  EXPECT_EQ(m.triangles.size(), 4u);
  EXPECT_EQ(m.vertices.size(), 4u);
  EXPECT_TRUE(m.flagged_normals.empty());
}

TEST(Stl, HandWrittenAsciiMatchesBinary) {
  const std::string ascii =
      "solid tetra\n"
      "facet normal 0 0 -1\n outer loop\n  vertex 0 0 0\n  vertex 0 1 0\n  vertex 1 0 0\n endloop\nendfacet\n"
      "facet normal 0 -1 0\n outer loop\n  vertex 0 0 0\n  vertex 1 0 0\n  vertex 0 0 1\n endloop\nendfacet\n"
      "facet normal -1 0 0\n outer loop\n  vertex 0 0 0\n  vertex 0 0 1\n  vertex 0 1 0\n endloop\nendfacet\n"
      "facet normal 0.57735026 0.57735026 0.57735026\n outer loop\n  vertex 1 0 0\n  vertex 0 1 0\n  vertex 0 0 1\n"
      " endloop\nendfacet\nendsolid tetra\n";
  const TriangleMesh a = parse_stl(to_bytes(ascii));
  const TriangleMesh b = parse_stl(serialize_stl(tetrahedron(), StlFormat::Binary));
  expect_same_mesh(a, b, 0.0);
  EXPECT_TRUE(a.flagged_normals.empty());
}

TEST(Stl, DeclaredCountBeyondPayloadIsTruncation) {
  std::vector<std::array<float, 12>> facets(9, {0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0});
  try {
    parse_stl(binary_stl(10, facets));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Truncation);
  }
}

TEST(Stl, NonFiniteCoordinateNamesFacet) {
  std::vector<std::array<float, 12>> facets(3, {0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0});
  facets[2][5] = std::nanf("");
  try {
    parse_stl(binary_stl(3, facets));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parse);
    EXPECT_NE(std::string(e.what()).find("facet 2"), std::string::npos);
  }
  const std::string ascii =
      "solid x\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 inf\nvertex 0 1 0\nendloop\nendfacet\nendsolid\n";
  try {
    parse_stl(to_bytes(ascii));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parse);
    EXPECT_NE(std::string(e.what()).find("facet 0"), std::string::npos);
  }
}

TEST(Stl, DegenerateRejectedUnlessPermissive) {
  std::vector<std::array<float, 12>> facets{{0, 0, 1, 0, 0, 0, 1, 0, 0, 2, 0, 0}};
  EXPECT_THROW(parse_stl(binary_stl(1, facets)), Error);
  StlLoadOptions opt;
  opt.permissive = true;
  EXPECT_EQ(parse_stl(binary_stl(1, facets), opt).triangles.size(), 1u);
}

TEST(Stl, WrongStoredNormalIsFlagged) {
  std::vector<std::array<float, 12>> facets{{1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0}};
  const TriangleMesh m = parse_stl(binary_stl(1, facets));
  ASSERT_EQ(m.flagged_normals.size(), 1u);
}

TEST(Stl, RoundTrips) {
  const TriangleMesh t = tetrahedron();
  const auto bin = serialize_stl(t, StlFormat::Binary);
  const TriangleMesh b = parse_stl(bin);
  expect_same_mesh(t, b, 0.0);
  EXPECT_EQ(serialize_stl(b, StlFormat::Binary), bin);
  expect_same_mesh(t, parse_stl(serialize_stl(t, StlFormat::Ascii)), 1e-6);
}

TEST(Stl, EmptyMesh) {
  TriangleMesh empty;
  const auto bin = serialize_stl(empty, StlFormat::Binary);
  EXPECT_EQ(bin.size(), 84u);
  EXPECT_TRUE(parse_stl(bin).empty());
  EXPECT_TRUE(parse_stl(serialize_stl(empty, StlFormat::Ascii)).empty());
}

TEST(Stl, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "brachy_mesh_test";
  std::filesystem::create_directories(dir);
  const TriangleMesh m = make_template({}).mesh;
  save_stl(m, dir / "t.stl", StlFormat::Binary);
  save_stl(m, dir / "t_ascii.stl", StlFormat::Ascii);
  expect_same_mesh(m, load_stl(dir / "t.stl"), 0.0);
  expect_same_mesh(load_stl(dir / "t.stl"), load_stl(dir / "t_ascii.stl"), 1e-6);
  std::filesystem::remove_all(dir);
}

TEST(Template, SingleHoleAtCenter) {
  TemplateSpec spec;
  spec.rows = spec.cols = 1;
  const TemplateModel t = make_template(spec);
  ASSERT_EQ(t.holes.size(), 1u);
  EXPECT_EQ(t.holes[0].id, "A1");
  EXPECT_EQ(t.holes[0].position, Vec3::Zero());
}

TEST(Template, SixBySixGrid) {
  const TemplateModel t = make_template({});
  EXPECT_EQ(t.holes.size(), 36u);
  EXPECT_EQ((t.hole("A1").position - t.hole("A6").position).norm(), 50.0);
  for (const auto& h : t.holes) {
    double nearest = INFINITY;
    for (const auto& g : t.holes) {
      if (&g != &h) nearest = std::min(nearest, (g.position - h.position).norm());
    }
    EXPECT_EQ(nearest, 10.0) << h.id;
    EXPECT_EQ(h.direction, t.face_normal);
  }
  t.validate();
  t.mesh.validate();
  EXPECT_TRUE(t.mesh.flagged_normals.empty());
}

TEST(Template, LabelsAndCoplanarity) {
  TemplateSpec spec;
  spec.rows = 2;
  spec.cols = 3;
  const TemplateModel t = make_template(spec);
  std::set<std::string> ids;
  for (const auto& h : t.holes) {
    ids.insert(h.id);
    EXPECT_LE(std::abs(h.position.z()), 1e-3);
  }
  EXPECT_EQ(ids, (std::set<std::string>{"A1", "A2", "A3", "B1", "B2", "B3"}));
  EXPECT_EQ(hole_label(26, 0), "AA1");
}

TEST(Template, MeshIsClosed) {
  // every undirected edge of a closed, consistently wound surface is used by exactly two triangles in opposite directions
  const TemplateModel t = make_template({});
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& tri : t.mesh.triangles) {
    for (int e = 0; e < 3; ++e) ++directed[{tri[e], tri[(e + 1) % 3]}];
  }
  for (const auto& [edge, count] : directed) {
    EXPECT_EQ(count, 1);
    EXPECT_EQ(directed.count({edge.second, edge.first}), 1u);
  }
}

TEST(Obturator, Geometry) {
  const ObturatorModel o = make_obturator({});
  EXPECT_EQ(o.radius, 10.0);
  o.mesh.validate();
  for (const auto& v : o.mesh.vertices) {
    EXPECT_LE(std::hypot(v.x(), v.y()), 10.0 + 1e-5);
    EXPECT_GE(v.z(), 0.0);
    EXPECT_LE(v.z(), 100.0);
  }
}

TEST(Sampling, SingleTriangleContainment) {
  MeshBuilder b;
  b.add_triangle(Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 3, 0));
  const TriangleMesh m = b.build();
  for (const Vec3& p : sample_surface(m, 100, 11)) {
    EXPECT_EQ(p.z(), 0.0);
    EXPECT_GE(p.x(), -1e-12);
    EXPECT_GE(p.y(), -1e-12);
    EXPECT_LE(p.x() / 4 + p.y() / 3, 1.0 + 1e-12);
  }
}

TEST(Sampling, AreaWeightedBinomial) {
  MeshBuilder b;
  b.add_triangle(Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0));    // area 1
  b.add_triangle(Vec3(10, 0, 0), Vec3(16, 0, 0), Vec3(10, 1, 0));  // area 3
  const TriangleMesh m = b.build();
  const auto samples = sample_surface_with_source(m, 4000, 2024);
  std::size_t first = 0;
  for (const auto& s : samples) first += s.triangle == 0;
  const double sigma = std::sqrt(4000 * 0.25 * 0.75);
  EXPECT_LE(std::abs(static_cast<double>(first) - 1000.0), 5 * sigma);
}

TEST(Sampling, DeterministicAndOnSurface) {
  const TriangleMesh m = make_template({}).mesh;
  const auto a = sample_surface_with_source(m, 500, 5);
  const auto b = sample_surface_with_source(m, 500, 5);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(a[n].point, b[n].point);
    const Vec3 p0 = m.corner(a[n].triangle, 0);
    const Vec3 nrm = m.winding_normal(a[n].triangle);
    EXPECT_LE(std::abs((a[n].point - p0).dot(nrm)), 1e-9);
  }
  EXPECT_THROW(sample_surface(TriangleMesh{}, 1, 0), Error);
}
