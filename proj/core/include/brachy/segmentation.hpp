#pragma once

#include "brachy/volume.hpp"

#include <cstdint>
#include <vector>

namespace brachy {

/// Painted seeds: code 0 is unlabeled, any legend code is a seed for that structure.
using SeedMap = LabelMap;

struct GrowCutResult {
  LabelMap labels;
  std::vector<double> strength;
  /// Passes that changed at least one cell.
  int passes = 0;
  /// True when a pass left every cell unchanged.
  bool converged = false;
};

/// Seeded cellular-automaton segmentation with synchronous 26-neighbor passes.
///
/// A labeled neighbor q captures cell p when g(|I(p) - I(q)|) * s(q) > s(p),
/// with g(d) = 1 - d / d_max and d_max the intensity range of the volume.
/// The captured cell takes q's label and strength g * s(q). When several
/// neighbors qualify, the largest attack wins and equal attacks go to the
/// lowest label code.
GrowCutResult growcut_run(const ScalarVolume& vol, const SeedMap& seeds, int max_passes);
LabelMap growcut(const ScalarVolume& vol, const SeedMap& seeds, int max_passes);

/// Labels every unlabeled voxel whose center lies within `margin_mm` of a
/// `source` voxel center (Euclidean, physical spacing) as `target`. Voxels
/// already carrying another label keep it, and earlier `target` voxels are
/// recomputed. Optional `extension` (one byte per voxel, nonzero = include)
/// is unioned into the target wherever the voxel is unlabeled.
LabelMap expand_margin(const LabelMap& labels, const StructureKind& source, const StructureKind& target,
                       double margin_mm, const std::vector<std::uint8_t>* extension = nullptr);

/// Patient-space centers of `kind` voxels with at least one face neighbor
/// outside the structure or outside the grid.
PointCloud surface_cloud(const LabelMap& labels, const StructureKind& kind);

/// Voxel count of `kind` (nested structures included) times the voxel volume; 0 when absent.
double structure_volume_cc(const LabelMap& labels, const StructureKind& kind);

}  // namespace brachy
