#include "brachy/planning.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace brachy;

namespace {

std::shared_ptr<const TemplateModel> single_hole() {
  TemplateSpec spec;
  spec.rows = spec.cols = 1;
  return std::make_shared<const TemplateModel>(make_template(spec));
}

// 1 mm grid covering x, y in [-5, 5] and z in [0, 80].
LabelMap column_phantom() {
  GridGeometry g;
  g.dims = {11, 11, 81};
  g.origin = Vec3(-5, -5, 0);
  return LabelMap::empty_like(g);
}

void fill_slab(LabelMap& m, const StructureKind& kind, int z0, int z1) {
  const auto code = m.ensure_code(kind);
  for (int k = z0; k < z1; ++k) {
    for (int j = 0; j < m.grid.dims[1]; ++j) {
      for (int i = 0; i < m.grid.dims[0]; ++i) m.voxels[m.grid.index(i, j, k)] = code;
    }
  }
}

NeedlePlan active_plan(double depth, const RigidTransform& reg = RigidTransform::identity()) {
  NeedlePlan plan = NeedlePlan::for_device(single_hole(), reg);
  plan = edit_needle(plan, "A1", NeedleEdit::activate());
  return edit_needle(plan, "A1", NeedleEdit::set_depth(depth));
}

}  // namespace

TEST(Trajectory, IdentityTranslationRotation) {
  const auto seg = trajectory(active_plan(50), "A1");
  EXPECT_EQ(seg.tip, Vec3(0, 0, 50));

  const auto shifted = trajectory(active_plan(50, RigidTransform::from_axis_angle(Vec3::UnitX(), 0, Vec3(10, 0, 0))), "A1");
  EXPECT_EQ(shifted.entry, Vec3(10, 0, 0));
  EXPECT_EQ(shifted.tip, Vec3(10, 0, 50));

  const auto turned = trajectory(active_plan(50, RigidTransform::from_axis_angle(Vec3::UnitX(), -std::numbers::pi / 2)), "A1");
  EXPECT_LT((turned.direction - Vec3(0, 1, 0)).norm(), 1e-9);
  EXPECT_LT((turned.tip - (turned.entry + 50 * Vec3(0, 1, 0))).norm(), 1e-9);
  EXPECT_NEAR((turned.tip - turned.entry).norm(), 50.0, 1e-9);
}

TEST(Trajectory, Errors) {
  const NeedlePlan plan = NeedlePlan::for_device(single_hole(), RigidTransform::identity());
  EXPECT_THROW(trajectory(plan, "Z9"), Error);
  try {
    trajectory(plan, "A1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::State);
  }
}

TEST(Trajectory, EquivariantUnderRegistration) {
  auto dev = std::make_shared<const TemplateModel>(make_template({}));
  const RigidTransform reg = RigidTransform::from_axis_angle(Vec3(1, 2, 0.5), 0.4, Vec3(3, -1, 7));
  const RigidTransform extra = RigidTransform::from_axis_angle(Vec3(0, 1, 1), -0.9, Vec3(-4, 2, 1));
  for (const auto& h : dev->holes) {
    const auto a = hole_trajectory(*dev, reg, h.id, 40);
    const auto b = hole_trajectory(*dev, compose(extra, reg), h.id, 40);
    EXPECT_LT((extra.apply(a.entry) - b.entry).norm(), 1e-9);
    EXPECT_LT((extra.apply(a.tip) - b.tip).norm(), 1e-9);
  }
}

TEST(Rays, OutsideGridIsEmpty) {
  LabelMap m = column_phantom();
  fill_slab(m, StructureTag::HR_CTV, 20, 30);
  TrajectorySegment seg;
  seg.entry = Vec3(100, 100, 0);
  seg.depth = 50;
  seg.tip = seg.entry + 50 * seg.direction;
  EXPECT_TRUE(ray_structure_intersections(seg, m, StructureTag::HR_CTV).empty());
}

TEST(Rays, SlabDepths) {
  // slab voxels 20..29 have centers 20..29, so the slab spans 19.5..29.5 mm
  LabelMap m = column_phantom();
  fill_slab(m, StructureTag::HR_CTV, 20, 30);
  const auto seg = hole_trajectory(*single_hole(), RigidTransform::identity(), "A1", 70);
  const auto iv = ray_structure_intersections(seg, m, StructureTag::HR_CTV);
  ASSERT_EQ(iv.size(), 1u);
  EXPECT_NEAR(iv[0].enter, 19.5, 0.5);
  EXPECT_NEAR(iv[0].exit, 29.5, 0.5);
}

TEST(Rays, TwoSlabsSortedAndConverging) {
  LabelMap m = column_phantom();
  fill_slab(m, StructureTag::OAR_BLADDER, 10, 14);
  const auto code = *m.code_of(StructureTag::OAR_BLADDER);
  for (int k = 40; k < 47; ++k) {
    for (int j = 0; j < 11; ++j) {
      for (int i = 0; i < 11; ++i) m.voxels[m.grid.index(i, j, k)] = code;
    }
  }
  const auto seg = hole_trajectory(*single_hole(), RigidTransform::identity(), "A1", 75);
  for (double step : {0.5, 0.25, 0.125}) {
    const auto coarse = ray_structure_intersections(seg, m, StructureTag::OAR_BLADDER, step);
    const auto fine = ray_structure_intersections(seg, m, StructureTag::OAR_BLADDER, step / 2);
    ASSERT_EQ(coarse.size(), 2u);
    ASSERT_EQ(fine.size(), 2u);
    EXPECT_LT(coarse[0].exit, coarse[1].enter);
    for (int n = 0; n < 2; ++n) {
      EXPECT_LT(std::abs(coarse[n].enter - fine[n].enter), step);
      EXPECT_LT(std::abs(coarse[n].exit - fine[n].exit), step);
    }
  }
}

TEST(Feasibility, TargetSlab) {
  LabelMap m = column_phantom();
  fill_slab(m, StructureTag::HR_CTV, 30, 40);
  const auto r = evaluate_feasibility(*single_hole(), RigidTransform::identity(), m, {0, 75});
  ASSERT_EQ(r.rows.size(), 1u);
  ASSERT_TRUE(r.rows[0].min_depth_to_target);
  EXPECT_NEAR(*r.rows[0].min_depth_to_target, 30, 0.5 + 0.25);
  EXPECT_LE(*r.rows[0].min_depth_to_target, r.rows[0].max_useful_depth);
  EXPECT_TRUE(r.rows[0].oar_hits.empty());
  EXPECT_EQ(r.feasible_holes, 1);
}

TEST(Feasibility, BladderInFront) {
  LabelMap m = column_phantom();
  fill_slab(m, StructureTag::OAR_BLADDER, 15, 20);
  fill_slab(m, StructureTag::HR_CTV, 30, 40);
  const auto r = evaluate_feasibility(*single_hole(), RigidTransform::identity(), m, {0, 75});
  ASSERT_EQ(r.rows[0].oar_hits.size(), 1u);
  EXPECT_EQ(r.rows[0].oar_hits[0].kind, StructureKind(StructureTag::OAR_BLADDER));
  EXPECT_NEAR(r.rows[0].oar_hits[0].depth_mm, 15, 0.75);
  EXPECT_EQ(r.feasible_holes, 0);
}

TEST(Feasibility, OarBeyondTargetIsHarmless) {
  LabelMap m = column_phantom();
  fill_slab(m, StructureTag::HR_CTV, 30, 40);
  fill_slab(m, StructureTag::OAR_RECTUM_SIGMOID, 50, 60);
  const auto r = evaluate_feasibility(*single_hole(), RigidTransform::identity(), m, {0, 75});
  EXPECT_TRUE(r.rows[0].oar_hits.empty());
  EXPECT_EQ(r.feasible_holes, 1);
}

TEST(Feasibility, MissingTarget) {
  LabelMap m = column_phantom();
  m.ensure_code(StructureTag::HR_CTV);
  EXPECT_THROW(evaluate_feasibility(*single_hole(), RigidTransform::identity(), m, {0, 75}), Error);
}

TEST(Feasibility, EnlargedTargetNeverLosesHoles) {
  auto dev = make_template({});
  GridGeometry g;
  g.dims = {80, 80, 90};
  g.origin = Vec3(-40, -40, 0);
  LabelMap small = LabelMap::empty_like(g);
  const auto hr = small.ensure_code(StructureTag::HR_CTV);
  const auto bl = small.ensure_code(StructureTag::OAR_BLADDER);
  for (int k = 0; k < 90; ++k) {
    for (int j = 0; j < 80; ++j) {
      for (int i = 0; i < 80; ++i) {
        const Vec3 p = g.voxel_center(i, j, k);
        if ((p - Vec3(0, 0, 50)).norm() < 14) small.voxels[g.index(i, j, k)] = hr;
        else if (p.x() > 12 && k > 20 && k < 30) small.voxels[g.index(i, j, k)] = bl;
      }
    }
  }
  LabelMap big = small;
  for (int k = 0; k < 90; ++k) {
    for (int j = 0; j < 80; ++j) {
      for (int i = 0; i < 80; ++i) {
        if ((g.voxel_center(i, j, k) - Vec3(0, 0, 50)).norm() < 22 && big.voxels[g.index(i, j, k)] == 0) {
          big.voxels[g.index(i, j, k)] = hr;
        }
      }
    }
  }
  const int a = evaluate_feasibility(dev, RigidTransform::identity(), small, {0, 85}).feasible_holes;
  const int b = evaluate_feasibility(dev, RigidTransform::identity(), big, {0, 85}).feasible_holes;
  EXPECT_GT(a, 0);
  EXPECT_GE(b, a);
}

TEST(Dwell, Positions) {
  NeedlePlan plan = active_plan(10);
  const auto p = dwell_positions(plan, "A1");
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0], Vec3(0, 0, 10));
  EXPECT_EQ(p[1], Vec3(0, 0, 5));
  EXPECT_EQ(p[2], Vec3(0, 0, 0));

  const auto zero = dwell_positions(active_plan(0), "A1");
  ASSERT_EQ(zero.size(), 1u);
  EXPECT_EQ(zero[0], Vec3::Zero());

  const auto short_needle = dwell_positions(edit_needle(active_plan(3), "A1", NeedleEdit::set_dwell_step(5)), "A1");
  ASSERT_EQ(short_needle.size(), 1u);
  EXPECT_EQ(short_needle[0], Vec3(0, 0, 3));

  for (double depth : {0.0, 4.9, 5.0, 7.5, 33.0, 120.0}) {
    for (double step : {2.5, 5.0, 7.0}) {
      NeedlePlan q = edit_needle(active_plan(depth), "A1", NeedleEdit::set_dwell_step(step));
      q.config.retract_margin_mm = 1.0;
      const auto expected = depth < 1.0 ? 1 : static_cast<std::size_t>(std::floor((depth - 1.0) / step)) + 1;
      EXPECT_EQ(dwell_positions(q, "A1").size(), expected);
    }
  }
}

TEST(Edit, LocalityInvolutionRange) {
  auto dev = std::make_shared<const TemplateModel>(make_template({}));
  const NeedlePlan base = NeedlePlan::for_device(dev, RigidTransform::identity());
  const NeedlePlan deeper = edit_needle(base, "C4", NeedleEdit::set_depth(40));
  for (std::size_t n = 0; n < base.needles.size(); ++n) {
    if (base.needles[n].hole_id == "C4") EXPECT_EQ(deeper.needles[n].depth_mm, 40.0);
    else EXPECT_EQ(deeper.needles[n], base.needles[n]);
  }
  const NeedlePlan on = edit_needle(base, "C4", NeedleEdit::activate());
  EXPECT_EQ(edit_needle(on, "C4", NeedleEdit::activate()).needles, on.needles);
  EXPECT_EQ(edit_needle(edit_needle(on, "C4", NeedleEdit::deactivate()), "C4", NeedleEdit::activate()).needles, on.needles);
  try {
    edit_needle(base, "C4", NeedleEdit::set_depth(-1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Range);
  }
  EXPECT_THROW(edit_needle(base, "C4", NeedleEdit::set_depth(200.5)), Error);
  EXPECT_THROW(edit_needle(base, "Q1", NeedleEdit::activate()), Error);
}
