#pragma once

#include "brachy/mesh.hpp"
#include "brachy/planning.hpp"
#include "brachy/registration.hpp"
#include "brachy/volume.hpp"

#include <cstdint>

namespace brachy {

/// Synthetic pelvis for tests, benchmarks and scripted runs. Image space:
/// x lateral, y anterior, z cranial; the template face sits below the target
/// and needles advance along +z.
struct PhantomSpec {
  int dims = 64;
  double spacing_mm = 2.0;
  std::uint64_t seed = 7;
  double noise_sd = 8.0;
  TemplateSpec device;
  /// Device -> image.
  RigidTransform registration{Mat3::Identity(), Vec3(0.0, 0.0, -10.0)};
  Vec3 target_center{0.0, 0.0, 45.0};
  double target_radius_mm = 20.0;
  double gtv_radius_mm = 9.0;
  /// Rectum axis runs along z at y = target_center.y - rectum_offset_mm.
  double rectum_offset_mm = 40.0;
  double rectum_radius_mm = 9.0;
  /// Label the template plate as the structure "TEMPLATE".
  bool device_structure = true;
};

struct Phantom {
  ScalarVolume t2;
  LabelMap labels;
  TemplateModel device;
  RigidTransform registration;
  /// Three non-collinear hole positions and their exact image positions.
  LandmarkPairs landmarks;
};

Phantom make_phantom(const PhantomSpec& spec = {});

/// Activates every hole whose feasibility row is feasible, at the depth where
/// its ray leaves the HR-CTV, with dwells restricted to the target by the
/// retract margin.
NeedlePlan reference_plan(const Phantom& phantom, double dwell_step_mm = 5.0);

}  // namespace brachy
