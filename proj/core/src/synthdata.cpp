#include "matchdet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "matchdet/rng.hpp"

namespace matchdet::synth {

namespace {

void validate(const SceneSpec& spec) {
  if (spec.h <= 0 || spec.w <= 0 || spec.c <= 0)
    throw std::invalid_argument("scene spec: non-positive grid shape");
  if (spec.min_objects < 0 || spec.max_objects < spec.min_objects)
    throw std::invalid_argument("scene spec: bad object count range");
  if (spec.warp_magnitude < 0.0 || spec.warp_magnitude > 0.25)
    throw std::invalid_argument("scene spec: warp_magnitude must be in [0, 0.25]");
  if (spec.num_classes < 1)
    throw std::invalid_argument("scene spec: need at least one class");
  if (spec.min_object_cells < 1 || spec.max_object_cells < spec.min_object_cells)
    throw std::invalid_argument("scene spec: bad object size range");
}

/// Per-class unit-norm signature, a deterministic function of (spec.seed,
/// class) so the same class looks alike across every sample of a dataset.
num::Matrix class_signature(const SceneSpec& spec, int class_id) {
  Rng rng(mix_seed(spec.seed ^ 0x5157ce5541434553ULL, class_id));
  num::Matrix sig(1, spec.c);
  double norm = 0.0;
  for (int i = 0; i < spec.c; ++i) {
    sig(0, i) = rng.normal();
    norm += sig(0, i) * sig(0, i);
  }
  norm = std::sqrt(norm);
  for (int i = 0; i < spec.c; ++i) sig(0, i) /= norm;
  return sig;
}

}  // namespace

std::pair<FeatureGrid, std::vector<BBox>> generate_scene(const SceneSpec& spec,
                                                         std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  FeatureGrid grid(spec.h, spec.w, spec.c);
  for (std::size_t i = 0; i < grid.values.size(); ++i)
    grid.values.data()[i] = spec.noise_sigma * rng.normal();

  int requested = spec.min_objects +
                  static_cast<int>(rng.below(spec.max_objects - spec.min_objects + 1));
  std::vector<BBox> boxes;
  for (int obj = 0; obj < requested; ++obj) {
    int side_range = spec.max_object_cells - spec.min_object_cells + 1;
    int bw = spec.min_object_cells + static_cast<int>(rng.below(side_range));
    int bh = spec.min_object_cells + static_cast<int>(rng.below(side_range));
    if (bw > spec.w || bh > spec.h) continue;  // cannot fit, recorded by count
    int x0 = static_cast<int>(rng.below(spec.w - bw + 1));
    int y0 = static_cast<int>(rng.below(spec.h - bh + 1));
    int class_id = 1 + static_cast<int>(rng.below(spec.num_classes));

    num::Matrix sig = class_signature(spec, class_id);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) {
        int cell = y * spec.w + x;
        for (int ch = 0; ch < spec.c; ++ch)
          grid.values(cell, ch) = sig(0, ch) + spec.jitter_sigma * rng.normal();
      }
    boxes.push_back({static_cast<double>(x0), static_cast<double>(y0),
                     static_cast<double>(x0 + bw), static_cast<double>(y0 + bh),
                     class_id});
  }
  return {std::move(grid), std::move(boxes)};
}

namespace {
bool convex_quad(const std::array<geo::Point, 4>& q) {
  // All consecutive cross products must share a sign.
  double sign = 0.0;
  for (int i = 0; i < 4; ++i) {
    const geo::Point& a = q[i];
    const geo::Point& b = q[(i + 1) % 4];
    const geo::Point& c = q[(i + 2) % 4];
    double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
    if (std::abs(cross) < 1e-9) return false;
    if (sign == 0.0)
      sign = cross;
    else if (sign * cross < 0.0)
      return false;
  }
  return true;
}
}  // namespace

SceneSample make_pair(const FeatureGrid& ref, std::span<const BBox> boxes_r,
                      const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  double width = ref.w, height = ref.h;  // stride 1: px == cells
  std::array<geo::Point, 4> src = {
      geo::Point{0, 0}, {width, 0}, {width, height}, {0, height}};

  geo::Homography h_gt;
  if (spec.warp_magnitude == 0.0) {
    h_gt = geo::Homography::identity();
  } else {
    double amp = spec.warp_magnitude * std::min(width, height);
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      std::array<geo::Point, 4> dst;
      for (int i = 0; i < 4; ++i)
        dst[i] = {src[i].x + rng.uniform(-amp, amp),
                  src[i].y + rng.uniform(-amp, amp)};
      if (!convex_quad(dst)) continue;
      std::array<geo::Correspondence, 4> corners;
      for (int i = 0; i < 4; ++i) corners[i] = {dst[i], src[i], 1.0};
      try {
        h_gt = geo::estimate_dlt(corners);
        found = true;
      } catch (const std::invalid_argument&) {
        continue;
      }
    }
    if (!found)
      throw std::runtime_error("make_pair: no valid corner perturbation in 100 tries");
  }

  SceneSample sample;
  sample.ref_grid = ref;
  sample.h_gt = h_gt;
  sample.boxes_r.assign(boxes_r.begin(), boxes_r.end());

  sample.tgt_grid = geo::warp_grid(ref, h_gt, 1.0, 0.0);
  Rng noise = rng.fork(0xa11ce);
  for (std::size_t i = 0; i < sample.tgt_grid.values.size(); ++i)
    sample.tgt_grid.values.data()[i] += spec.noise_sigma * noise.normal();

  // Target boxes: clamped axis-aligned hulls of the warped corners.
  for (const BBox& box : boxes_r) {
    geo::Point corners[4] = {{box.x1, box.y1}, {box.x2, box.y1},
                             {box.x2, box.y2}, {box.x1, box.y2}};
    double x1 = 1e30, y1 = 1e30, x2 = -1e30, y2 = -1e30;
    for (const geo::Point& corner : corners) {
      geo::Point mapped = geo::apply(h_gt, corner);
      x1 = std::min(x1, mapped.x);
      y1 = std::min(y1, mapped.y);
      x2 = std::max(x2, mapped.x);
      y2 = std::max(y2, mapped.y);
    }
    BBox mapped_box{std::clamp(x1, 0.0, width), std::clamp(y1, 0.0, height),
                    std::clamp(x2, 0.0, width), std::clamp(y2, 0.0, height),
                    box.class_id};
    if (mapped_box.valid())
      sample.boxes_t.push_back(mapped_box);
    else
      ++sample.dropped_boxes;  // fully out of view
  }

  sample.gt_matches = derive_gt_matches(h_gt, ref.h, ref.w, 1.0);
  return sample;
}

SceneSample generate_sample(const SceneSpec& spec, std::uint64_t seed) {
  auto [ref, boxes] = generate_scene(spec, mix_seed(seed, 0));
  return make_pair(ref, boxes, spec, mix_seed(seed, 1));
}

std::vector<std::pair<int, int>> derive_gt_matches(const geo::Homography& h_gt,
                                                   int h, int w, double stride) {
  geo::Homography inv = h_gt.inverse();
  std::vector<std::pair<int, int>> matches;
  double limit = 0.5 * stride;
  for (int ty = 0; ty < h; ++ty) {
    for (int tx = 0; tx < w; ++tx) {
      geo::Point tgt_center{(tx + 0.5) * stride, (ty + 0.5) * stride};
      geo::Point back;
      try {
        back = geo::apply(inv, tgt_center);
      } catch (const std::domain_error&) {
        continue;
      }
      int rx = static_cast<int>(std::floor(back.x / stride));
      int ry = static_cast<int>(std::floor(back.y / stride));
      if (rx < 0 || rx >= w || ry < 0 || ry >= h) continue;
      double dist = std::hypot(back.x - (rx + 0.5) * stride,
                               back.y - (ry + 0.5) * stride);
      if (dist > limit) continue;
      // Mutuality: the reference cell's forward projection must land nearest
      // to this target cell.
      geo::Point fwd;
      try {
        fwd = geo::apply(h_gt, {(rx + 0.5) * stride, (ry + 0.5) * stride});
      } catch (const std::domain_error&) {
        continue;
      }
      int fx = static_cast<int>(std::floor(fwd.x / stride));
      int fy = static_cast<int>(std::floor(fwd.y / stride));
      if (fx != tx || fy != ty) continue;
      matches.emplace_back(ty * w + tx, ry * w + rx);
    }
  }
  return matches;
}

}  // namespace matchdet::synth
