#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "matchdet/geometry.hpp"
#include "matchdet/types.hpp"

namespace matchdet::synth {

/// Procedural scene parameters. Scenes are feature grids at stride 1:
/// background cells carry Gaussian noise, objects are rectangular regions
/// stamped with a per-class unit-norm signature plus per-cell jitter.
struct SceneSpec {
  int h = 16;
  int w = 16;
  int c = 16;
  int min_objects = 1;
  int max_objects = 3;
  int num_classes = 4;
  double noise_sigma = 0.1;
  /// Max corner perturbation as a fraction of min(h, w); must stay <= 0.25
  /// so the ground-truth homography is well conditioned.
  double warp_magnitude = 0.15;
  /// Per-cell jitter stamped over the object signature (its per-dimension
  /// standard deviation); gives object interiors a matchable fingerprint.
  double jitter_sigma = 0.25;
  int min_object_cells = 3;  // box side length range, in cells
  int max_object_cells = 6;
  std::uint64_t seed = 1;
};

/// One synthetic pair: target = warp(reference) + fresh noise, ground-truth
/// homography, boxes on both images, and derived coarse ground-truth
/// matches. boxes_t are the clamped hulls of the warped reference boxes;
/// objects warped fully out of view are dropped and counted.
struct SceneSample {
  FeatureGrid ref_grid;
  FeatureGrid tgt_grid;
  geo::Homography h_gt;
  std::vector<BBox> boxes_r;
  std::vector<BBox> boxes_t;
  std::vector<std::pair<int, int>> gt_matches;  // (target cell, reference cell)
  int dropped_boxes = 0;
};

/// Reference grid + boxes. Objects that cannot fit are skipped, so the box
/// count may be below the requested draw.
std::pair<FeatureGrid, std::vector<BBox>> generate_scene(const SceneSpec& spec,
                                                         std::uint64_t seed);

/// Warps a reference into a full sample. Corner perturbations are sampled
/// uniformly in +-warp_magnitude * min(h, w); degenerate (non-convex) corner
/// draws are resampled, at most 100 times.
SceneSample make_pair(const FeatureGrid& ref, std::span<const BBox> boxes_r,
                      const SceneSpec& spec, std::uint64_t seed);

/// generate_scene + make_pair with seeds derived from `seed`.
SceneSample generate_sample(const SceneSpec& spec, std::uint64_t seed);

/// Coarse ground-truth matches: a target cell pairs with the reference cell
/// nearest to its back-projected center when that distance is at most half a
/// cell and the relationship is mutual. Injective in both coordinates.
std::vector<std::pair<int, int>> derive_gt_matches(const geo::Homography& h_gt,
                                                   int h, int w, double stride);

}  // namespace matchdet::synth
