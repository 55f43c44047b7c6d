#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "matchdet/params.hpp"
#include "matchdet/tape.hpp"
#include "matchdet/types.hpp"

namespace matchdet::det {

/// Per-cell affine heads over the feature grid: class logits (C columns),
/// one objectness logit, and four log-offsets (left/top/right/bottom,
/// passed through exp at decode time to stay positive).
struct HeadParamIds {
  int w_cls = -1, b_cls = -1;
  int w_obj = -1, b_obj = -1;
  int w_reg = -1, b_reg = -1;
};
HeadParamIds register_head(ParamStore& store, std::string_view prefix,
                           int channels, int num_classes, Rng& rng);

struct HeadOutputs {
  num::Var class_logits;     // hw x C
  num::Var objectness;       // hw x 1 (logit)
  num::Var reg_log_offsets;  // hw x 4 (log l, t, r, b in px)
};
HeadOutputs det_head(num::Tape& tape, num::Var features, const BoundParams& params,
                     const HeadParamIds& ids);

/// Dense assignment: a cell is positive iff its center lies strictly inside
/// at least one box; overlaps resolve to the smallest-area box. Regression
/// targets are the pixel distances from the cell center to the box sides.
struct DenseTargets {
  int h = 0, w = 0;
  std::vector<int> positive;                   // 0/1 per cell
  std::vector<int> class_id;                   // valid for positives
  std::vector<std::array<double, 4>> offsets;  // l, t, r, b (positives)
  int num_positive = 0;
};
DenseTargets assign_targets(std::span<const BBox> boxes, int h, int w,
                            double stride);

/// Objectness BCE over all cells + class cross-entropy over positives +
/// lambda_reg * L1 on log-offsets over positives, each term averaged.
num::Var detection_loss(num::Tape& tape, const HeadOutputs& preds,
                        const DenseTargets& targets, double lambda_reg,
                        int num_classes);

struct Detection {
  BBox box;
  double score = 0.0;
};

/// Per-cell box decode followed by greedy class-wise NMS. Scores are
/// objectness times the best class probability; boxes are clamped to the
/// image bounds. Deterministic: ties order by cell index.
std::vector<Detection> decode_detections(const HeadOutputs& preds, int h, int w,
                                         double stride, double score_thresh,
                                         double nms_iou);

double iou(const BBox& a, const BBox& b);

struct ApResult {
  double ap = 0.0;    // mean over 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<double> per_threshold;
};

/// COCO-style 101-point interpolated AP with greedy score-sorted matching,
/// averaged over the classes present in the ground truth.
ApResult average_precision(std::span<const Detection> detections,
                           std::span<const BBox> ground_truth);

/// Multi-image accumulation: detections are matched within their image only.
class ApAccumulator {
 public:
  void add_image(std::vector<Detection> detections, std::vector<BBox> ground_truth);
  ApResult compute() const;

 private:
  struct ImageRecord {
    std::vector<Detection> detections;
    std::vector<BBox> ground_truth;
  };
  std::vector<ImageRecord> images_;
};

}  // namespace matchdet::det
