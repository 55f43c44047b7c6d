#pragma once

#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "matchdet/geometry.hpp"
#include "matchdet/params.hpp"
#include "matchdet/tape.hpp"
#include "matchdet/types.hpp"

namespace matchdet::wgen {

/// Source of reference-image boxes at inference time.
enum class Setting { kGtBoxR, kPreBoxR, kNoBoxR };

std::string_view to_string(Setting setting);
Setting setting_from_string(std::string_view name);

/// Cells whose centers fall strictly inside any box get 1 + emphasis,
/// everything else stays at the background baseline 1.
WeightMap map_from_boxes(std::span<const BBox> boxes, int h, int w, double stride,
                         double emphasis);

/// Cells with probability strictly above `threshold` get 1 + emphasis.
WeightMap map_from_mask(const SegMask& mask, double emphasis,
                        double threshold = 0.5);

/// Per-cell two-layer perceptron (c -> c relu -> 1) + logistic. A stand-in
/// for a small convolutional decoder; receptive field is one cell.
struct DecoderParamIds {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
DecoderParamIds register_decoder(ParamStore& store, std::string_view prefix,
                                 int channels, Rng& rng);
num::Var light_decoder(num::Tape& tape, num::Var features,
                       const BoundParams& params, const DecoderParamIds& ids);

SegMask mask_from_values(const num::Matrix& probs, int h, int w);

/// Smoothed Dice distance between the mask's x/y max-projections and the
/// projections of the union-of-boxes indicator (the projection term of a
/// box-supervised segmentation loss). No boxes: mean mask probability.
num::Var box_projection_loss(num::Tape& tape, num::Var mask_probs, int h, int w,
                             std::span<const BBox> boxes, double stride);

struct WamMapInputs {
  const std::vector<BBox>* gt_boxes_r = nullptr;
  const std::vector<BBox>* pred_boxes_r = nullptr;
  const SegMask* mask_t = nullptr;
  const SegMask* mask_r = nullptr;
};

/// Weight maps (M_t, M_r) for the matcher-side attention under a setting.
/// Throws when the setting's required input is missing.
std::pair<WeightMap, WeightMap> generate_wam_maps(Setting setting,
                                                  const WamMapInputs& inputs,
                                                  int h, int w, double stride,
                                                  double alpha1);

/// Weight maps (M_t, M_r) for the detector-side attention. Box settings
/// warp M_r through the interim homography to obtain M_t; the no-box
/// setting refines both decoder maps with warped copies of each other
/// (simultaneous update from the pre-refinement values, warp fill 0).
std::pair<WeightMap, WeightMap> generate_wsam_maps(
    Setting setting, std::span<const BBox> boxes_r, const SegMask* mask_t,
    const SegMask* mask_r, const geo::Homography& h_prime, double alpha2, int h,
    int w, double stride);

/// Match-filter maps: M^t from predicted target boxes at emphasis beta,
/// M^r from the detector-side M_r with foreground re-assigned to 1 + beta.
std::pair<WeightMap, WeightMap> box_filter_maps(std::span<const BBox> pred_boxes_t,
                                                const WeightMap& wsam_m_r,
                                                double beta, int h, int w,
                                                double stride);

}  // namespace matchdet::wgen
