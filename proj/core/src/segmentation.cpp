#include "brachy/segmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace brachy {

namespace {

struct Offset {
  int di, dj, dk;
};

std::vector<Offset> neighborhood26() {
  std::vector<Offset> out;
  for (int dk = -1; dk <= 1; ++dk) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        if (di != 0 || dj != 0 || dk != 0) out.push_back({di, dj, dk});
      }
    }
  }
  return out;
}

constexpr std::array<Offset, 6> kFaceNeighbors{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

}  // namespace

GrowCutResult growcut_run(const ScalarVolume& vol, const SeedMap& seeds, int max_passes) {
  vol.validate();
  seeds.validate();
  if (!(vol.grid == seeds.grid)) fail(ErrorCode::InvalidArgument, "growcut: seed grid does not match the volume grid");
  if (max_passes < 0) fail(ErrorCode::InvalidArgument, "growcut: max_passes must be non-negative");
  std::set<std::uint8_t> seed_codes;
  for (auto c : seeds.voxels) {
    if (c != 0) seed_codes.insert(c);
  }
  if (seed_codes.size() < 2) fail(ErrorCode::InvalidArgument, "growcut: at least two distinct seed labels are required");

  const auto [lo, hi] = std::minmax_element(vol.voxels.begin(), vol.voxels.end());
  const double d_max = static_cast<double>(*hi) - static_cast<double>(*lo);

  GrowCutResult result;
  result.labels = seeds;
  std::vector<std::uint8_t>& label = result.labels.voxels;
  std::vector<double>& strength = result.strength;
  strength.assign(label.size(), 0.0);
  for (std::size_t n = 0; n < label.size(); ++n) strength[n] = label[n] != 0 ? 1.0 : 0.0;

  const GridGeometry& g = vol.grid;
  const auto offsets = neighborhood26();
  std::vector<std::uint8_t> next_label(label.size());
  std::vector<double> next_strength(label.size());

  for (int pass = 0; pass < max_passes; ++pass) {
    bool changed = false;
    for (int k = 0; k < g.dims[2]; ++k) {
      for (int j = 0; j < g.dims[1]; ++j) {
        for (int i = 0; i < g.dims[0]; ++i) {
          const std::size_t p = g.index(i, j, k);
          const double ip = vol.voxels[p];
          std::uint8_t best_label = label[p];
          double best_force = strength[p];
          bool captured = false;
          for (const auto& o : offsets) {
            const int ni = i + o.di, nj = j + o.dj, nk = k + o.dk;
            if (!g.contains(ni, nj, nk)) continue;
            const std::size_t q = g.index(ni, nj, nk);
            if (label[q] == 0) continue;
            const double gq = d_max > 0.0 ? 1.0 - std::abs(ip - static_cast<double>(vol.voxels[q])) / d_max : 1.0;
            const double force = gq * strength[q];
            if (force <= strength[p]) continue;
            if (!captured || force > best_force || (force == best_force && label[q] < best_label)) {
              best_force = force;
              best_label = label[q];
              captured = true;
            }
          }
          next_label[p] = best_label;
          next_strength[p] = best_force;
          if (captured && (best_label != label[p] || best_force != strength[p])) changed = true;
        }
      }
    }
    if (!changed) {
      result.converged = true;
      break;
    }
    label.swap(next_label);
    strength.swap(next_strength);
    ++result.passes;
  }
  return result;
}

LabelMap growcut(const ScalarVolume& vol, const SeedMap& seeds, int max_passes) {
  return growcut_run(vol, seeds, max_passes).labels;
}

LabelMap expand_margin(const LabelMap& labels, const StructureKind& source, const StructureKind& target,
                       double margin_mm, const std::vector<std::uint8_t>* extension) {
  labels.validate();
  if (!(margin_mm >= 0.0) || !std::isfinite(margin_mm)) fail(ErrorCode::InvalidArgument, "margin must be non-negative");
  if (!labels.has(source)) fail(ErrorCode::NotFound, "expand_margin: source structure " + source.name() + " is absent");
  if (source == target) fail(ErrorCode::InvalidArgument, "expand_margin: source and target must differ");
  if (extension && extension->size() != labels.voxels.size()) {
    fail(ErrorCode::InvalidArgument, "expand_margin: extension mask size does not match the grid");
  }

  const GridGeometry& g = labels.grid;
  const auto src = labels.mask(source);

  // Ball of voxel offsets within the margin.
  const double m2 = margin_mm * margin_mm;
  std::array<int, 3> reach{};
  for (int a = 0; a < 3; ++a) reach[a] = static_cast<int>(std::floor(margin_mm / g.spacing[a]));
  std::vector<Offset> ball;
  for (int dk = -reach[2]; dk <= reach[2]; ++dk) {
    for (int dj = -reach[1]; dj <= reach[1]; ++dj) {
      for (int di = -reach[0]; di <= reach[0]; ++di) {
        const double x = di * g.spacing.x(), y = dj * g.spacing.y(), z = dk * g.spacing.z();
        if (x * x + y * y + z * z <= m2) ball.push_back({di, dj, dk});
      }
    }
  }

  // The nearest source voxel to any outside voxel is a face-boundary voxel of
  // the source, so stamping the ball around boundary voxels is exact.
  std::vector<std::uint8_t> within(src.size(), 0);
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!src[g.index(i, j, k)]) continue;
        bool boundary = false;
        for (const auto& f : kFaceNeighbors) {
          const int ni = i + f.di, nj = j + f.dj, nk = k + f.dk;
          if (!g.contains(ni, nj, nk) || !src[g.index(ni, nj, nk)]) {
            boundary = true;
            break;
          }
        }
        if (!boundary) continue;
        for (const auto& o : ball) {
          const int ni = i + o.di, nj = j + o.dj, nk = k + o.dk;
          if (g.contains(ni, nj, nk)) within[g.index(ni, nj, nk)] = 1;
        }
      }
    }
  }

  LabelMap out = labels;
  const std::uint8_t code = out.ensure_code(target);
  for (auto& v : out.voxels) {
    if (v == code) v = 0;
  }
  for (std::size_t n = 0; n < out.voxels.size(); ++n) {
    if (out.voxels[n] != 0) continue;
    if (within[n] || (extension && (*extension)[n])) out.voxels[n] = code;
  }
  return out;
}

PointCloud surface_cloud(const LabelMap& labels, const StructureKind& kind) {
  if (!labels.has(kind)) fail(ErrorCode::NotFound, "surface_cloud: structure " + kind.name() + " is absent");
  const GridGeometry& g = labels.grid;
  const auto m = labels.mask(kind);
  PointCloud out;
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!m[g.index(i, j, k)]) continue;
        const bool boundary = std::any_of(kFaceNeighbors.begin(), kFaceNeighbors.end(), [&](const Offset& f) {
          const int ni = i + f.di, nj = j + f.dj, nk = k + f.dk;
          return !g.contains(ni, nj, nk) || !m[g.index(ni, nj, nk)];
        });
        if (boundary) out.push_back(g.voxel_center(i, j, k));
      }
    }
  }
  return out;
}

double structure_volume_cc(const LabelMap& labels, const StructureKind& kind) {
  if (!labels.has(kind)) return 0.0;
  const auto m = labels.mask(kind);
  const auto count = std::count(m.begin(), m.end(), std::uint8_t{1});
  return static_cast<double>(count) * labels.grid.voxel_volume_cc();
}

}  // namespace brachy
