#include "matchdet/weightgen.hpp"

#include <cmath>
#include <stdexcept>

namespace matchdet::wgen {

namespace {
constexpr double kDiceSmooth = 1e-6;
}

std::string_view to_string(Setting setting) {
  switch (setting) {
    case Setting::kGtBoxR: return "gtboxr";
    case Setting::kPreBoxR: return "preboxr";
    case Setting::kNoBoxR: return "noboxr";
  }
  return "?";
}

Setting setting_from_string(std::string_view name) {
  if (name == "gtboxr") return Setting::kGtBoxR;
  if (name == "preboxr") return Setting::kPreBoxR;
  if (name == "noboxr") return Setting::kNoBoxR;
  throw std::invalid_argument("unknown setting: " + std::string(name));
}

WeightMap map_from_boxes(std::span<const BBox> boxes, int h, int w, double stride,
                         double emphasis) {
  if (emphasis < 0.0) throw std::invalid_argument("map_from_boxes: emphasis < 0");
  WeightMap map(h, w, 1.0);
  for (int y = 0; y < h; ++y) {
    double cy = (y + 0.5) * stride;
    for (int x = 0; x < w; ++x) {
      double cx = (x + 0.5) * stride;
      for (const BBox& box : boxes) {
        if (box.contains_strict(cx, cy)) {
          map.at(x, y) = 1.0 + emphasis;
          break;
        }
      }
    }
  }
  return map;
}

WeightMap map_from_mask(const SegMask& mask, double emphasis, double threshold) {
  if (emphasis < 0.0) throw std::invalid_argument("map_from_mask: emphasis < 0");
  WeightMap map(mask.h, mask.w, 1.0);
  for (int i = 0; i < mask.cells(); ++i)
    if (mask.probs[i] > threshold) map.values[i] = 1.0 + emphasis;
  return map;
}

DecoderParamIds register_decoder(ParamStore& store, std::string_view prefix,
                                 int channels, Rng& rng) {
  std::string p(prefix);
  DecoderParamIds ids;
  ids.w1 = store.add(p + ".w1", orthogonal_init(channels, channels, 0.1, rng));
  ids.b1 = store.add(p + ".b1", num::Matrix(1, channels));
  // Zero-initialized head: the decoder starts at probability 0.5 everywhere,
  // which thresholds to an all-background map.
  ids.w2 = store.add(p + ".w2", num::Matrix(channels, 1));
  ids.b2 = store.add(p + ".b2", num::Matrix(1, 1));
  return ids;
}

num::Var light_decoder(num::Tape& tape, num::Var features,
                       const BoundParams& params, const DecoderParamIds& ids) {
  num::Var hidden = tape.relu(
      tape.add_row_bias(tape.matmul(features, params[ids.w1]), params[ids.b1]));
  num::Var logits =
      tape.add_row_bias(tape.matmul(hidden, params[ids.w2]), params[ids.b2]);
  return tape.logistic(logits);
}

SegMask mask_from_values(const num::Matrix& probs, int h, int w) {
  if (probs.cols() != 1 || probs.rows() != h * w)
    throw std::invalid_argument("mask_from_values: expected (h*w) x 1 probabilities");
  SegMask mask(h, w);
  for (int i = 0; i < h * w; ++i) mask.probs[i] = probs(i, 0);
  return mask;
}

namespace {
// 1 - (2<p,g> + s) / (|p|^2 + |g|^2 + s); zero exactly when p == g.
num::Var dice_distance(num::Tape& tape, num::Var p, const num::Matrix& g) {
  num::Var gc = tape.constant(g);
  num::Var numer = tape.add_scalar(
      tape.scale(tape.sum(tape.hadamard(p, gc)), 2.0), kDiceSmooth);
  num::Var denom = tape.add_scalar(
      tape.add(tape.sum(tape.hadamard(p, p)), tape.sum(tape.hadamard(gc, gc))),
      kDiceSmooth);
  return tape.add_scalar(tape.neg(tape.div_positive(numer, denom)), 1.0);
}
}  // namespace

num::Var box_projection_loss(num::Tape& tape, num::Var mask_probs, int h, int w,
                             std::span<const BBox> boxes, double stride) {
  if (mask_probs.rows() != h * w || mask_probs.cols() != 1)
    throw std::invalid_argument("box_projection_loss: expected (h*w) x 1 mask");
  if (boxes.empty()) return tape.mean(mask_probs);  // push toward background

  WeightMap indicator = map_from_boxes(boxes, h, w, stride, 1.0);
  num::Matrix target(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) target(y, x) = indicator.at(x, y) > 1.0 ? 1.0 : 0.0;

  num::Var grid = tape.reshape(mask_probs, h, w);
  num::Var proj_x = tape.col_max(grid);                // 1 x w
  num::Var proj_y = tape.row_max(grid);                // h x 1
  num::Matrix target_x(1, w), target_y(h, 1);
  for (int x = 0; x < w; ++x) {
    double m = 0.0;
    for (int y = 0; y < h; ++y) m = std::max(m, target(y, x));
    target_x(0, x) = m;
  }
  for (int y = 0; y < h; ++y) {
    double m = 0.0;
    for (int x = 0; x < w; ++x) m = std::max(m, target(y, x));
    target_y(y, 0) = m;
  }
  return tape.add(dice_distance(tape, proj_x, target_x),
                  dice_distance(tape, proj_y, target_y));
}

std::pair<WeightMap, WeightMap> generate_wam_maps(Setting setting,
                                                  const WamMapInputs& inputs,
                                                  int h, int w, double stride,
                                                  double alpha1) {
  auto mask_map = [&](const SegMask* mask, const char* which) {
    if (!mask)
      throw std::invalid_argument(std::string("generate_wam_maps: missing ") + which);
    return map_from_mask(*mask, alpha1);
  };
  switch (setting) {
    case Setting::kGtBoxR: {
      if (!inputs.gt_boxes_r)
        throw std::invalid_argument("generate_wam_maps: missing gt reference boxes");
      return {mask_map(inputs.mask_t, "target mask"),
              map_from_boxes(*inputs.gt_boxes_r, h, w, stride, alpha1)};
    }
    case Setting::kPreBoxR: {
      if (!inputs.pred_boxes_r)
        throw std::invalid_argument("generate_wam_maps: missing predicted reference boxes");
      return {mask_map(inputs.mask_t, "target mask"),
              map_from_boxes(*inputs.pred_boxes_r, h, w, stride, alpha1)};
    }
    case Setting::kNoBoxR:
      return {mask_map(inputs.mask_t, "target mask"),
              mask_map(inputs.mask_r, "reference mask")};
  }
  throw std::logic_error("generate_wam_maps: unreachable");
}

std::pair<WeightMap, WeightMap> generate_wsam_maps(
    Setting setting, std::span<const BBox> boxes_r, const SegMask* mask_t,
    const SegMask* mask_r, const geo::Homography& h_prime, double alpha2, int h,
    int w, double stride) {
  if (setting == Setting::kNoBoxR) {
    if (!mask_t || !mask_r)
      throw std::invalid_argument("generate_wsam_maps: missing decoder masks");
    WeightMap m_t = map_from_mask(*mask_t, alpha2);
    WeightMap m_r = map_from_mask(*mask_r, alpha2);
    // Cross-view refinement from the pre-refinement maps; out-of-bounds
    // contributes no evidence (fill 0), so values stay >= 1.
    WeightMap warped_t = geo::warp_grid(m_t, h_prime.inverse(), stride, 0.0);
    WeightMap warped_r = geo::warp_grid(m_r, h_prime, stride, 0.0);
    WeightMap refined_r = m_r, refined_t = m_t;
    for (int i = 0; i < m_r.cells(); ++i) refined_r.values[i] += warped_t.values[i];
    for (int i = 0; i < m_t.cells(); ++i) refined_t.values[i] += warped_r.values[i];
    return {refined_t, refined_r};
  }
  WeightMap m_r = map_from_boxes(boxes_r, h, w, stride, alpha2);
  WeightMap m_t = geo::warp_grid(m_r, h_prime, stride, 1.0);
  return {m_t, m_r};
}

std::pair<WeightMap, WeightMap> box_filter_maps(std::span<const BBox> pred_boxes_t,
                                                const WeightMap& wsam_m_r,
                                                double beta, int h, int w,
                                                double stride) {
  if (beta < 0.0) throw std::invalid_argument("box_filter_maps: beta < 0");
  WeightMap m_t_hat = map_from_boxes(pred_boxes_t, h, w, stride, beta);
  WeightMap m_r_hat(wsam_m_r.h, wsam_m_r.w, 1.0);
  for (int i = 0; i < wsam_m_r.cells(); ++i)
    m_r_hat.values[i] = wsam_m_r.values[i] > 1.0 ? 1.0 + beta : 1.0;
  return {m_t_hat, m_r_hat};
}

}  // namespace matchdet::wgen
