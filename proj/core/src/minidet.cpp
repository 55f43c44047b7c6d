#include "matchdet/minidet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace matchdet::det {

using num::Matrix;
using num::Tape;
using num::Var;

namespace {
constexpr double kLogEps = 1e-12;
}

HeadParamIds register_head(ParamStore& store, std::string_view prefix,
                           int channels, int num_classes, Rng& rng) {
  std::string p(prefix);
  HeadParamIds ids;
  ids.w_cls = store.add(p + ".w_cls", orthogonal_init(channels, num_classes, 0.1, rng));
  ids.b_cls = store.add(p + ".b_cls", Matrix(1, num_classes));
  ids.w_obj = store.add(p + ".w_obj", Matrix(channels, 1));
  ids.b_obj = store.add(p + ".b_obj", Matrix(1, 1));
  ids.w_reg = store.add(p + ".w_reg", Matrix(channels, 4));
  ids.b_reg = store.add(p + ".b_reg", Matrix(1, 4));
  return ids;
}

HeadOutputs det_head(Tape& tape, Var features, const BoundParams& params,
                     const HeadParamIds& ids) {
  auto head = [&](int w, int b) {
    return tape.add_row_bias(tape.matmul(features, params[w]), params[b]);
  };
  return {head(ids.w_cls, ids.b_cls), head(ids.w_obj, ids.b_obj),
          head(ids.w_reg, ids.b_reg)};
}

DenseTargets assign_targets(std::span<const BBox> boxes, int h, int w,
                            double stride) {
  DenseTargets targets;
  targets.h = h;
  targets.w = w;
  targets.positive.assign(h * w, 0);
  targets.class_id.assign(h * w, 0);
  targets.offsets.assign(h * w, {0, 0, 0, 0});
  for (int y = 0; y < h; ++y) {
    double cy = (y + 0.5) * stride;
    for (int x = 0; x < w; ++x) {
      double cx = (x + 0.5) * stride;
      const BBox* best = nullptr;
      for (const BBox& box : boxes) {
        if (!box.contains_strict(cx, cy)) continue;
        if (!best || box.area() < best->area()) best = &box;
      }
      if (!best) continue;
      int i = y * w + x;
      targets.positive[i] = 1;
      targets.class_id[i] = best->class_id;
      targets.offsets[i] = {cx - best->x1, cy - best->y1, best->x2 - cx,
                            best->y2 - cy};
      ++targets.num_positive;
    }
  }
  return targets;
}

Var detection_loss(Tape& tape, const HeadOutputs& preds,
                   const DenseTargets& targets, double lambda_reg,
                   int num_classes) {
  int cells = targets.h * targets.w;
  if (preds.objectness.rows() != cells)
    throw std::invalid_argument("detection_loss: cell count mismatch");

  // Objectness BCE over all cells.
  Matrix t(cells, 1), one_minus_t(cells, 1);
  for (int i = 0; i < cells; ++i) {
    t(i, 0) = targets.positive[i];
    one_minus_t(i, 0) = 1.0 - targets.positive[i];
  }
  Var p = tape.logistic(preds.objectness);
  Var log_p = tape.log(tape.add_scalar(p, kLogEps));
  Var log_q = tape.log(tape.add_scalar(tape.add_scalar(tape.neg(p), 1.0), kLogEps));
  Var bce = tape.neg(tape.mean(tape.add(tape.hadamard(log_p, tape.constant(t)),
                                        tape.hadamard(log_q, tape.constant(one_minus_t)))));
  Var loss = bce;

  if (targets.num_positive > 0) {
    // Class cross-entropy over positive cells.
    Matrix onehot(cells, num_classes);
    Matrix pos_mask(cells, 1);
    Matrix log_offset_targets(cells, 4);
    for (int i = 0; i < cells; ++i) {
      if (!targets.positive[i]) continue;
      pos_mask(i, 0) = 1.0;
      onehot(i, targets.class_id[i] - 1) = 1.0;
      for (int k = 0; k < 4; ++k)
        log_offset_targets(i, k) = std::log(std::max(targets.offsets[i][k], 1e-6));
    }
    Var log_probs =
        tape.log(tape.add_scalar(tape.softmax_rows(preds.class_logits), kLogEps));
    Var ce = tape.scale(tape.sum(tape.hadamard(log_probs, tape.constant(onehot))),
                        -1.0 / targets.num_positive);

    Var diff = tape.sub(preds.reg_log_offsets, tape.constant(log_offset_targets));
    Var l1 = tape.scale(
        tape.sum(tape.row_scale(tape.abs(diff), tape.constant(pos_mask))),
        lambda_reg / (4.0 * targets.num_positive));
    loss = tape.add(loss, tape.add(ce, l1));
  }
  return loss;
}

std::vector<Detection> decode_detections(const HeadOutputs& preds, int h, int w,
                                         double stride, double score_thresh,
                                         double nms_iou) {
  if (score_thresh < 0.0 || score_thresh > 1.0 || nms_iou < 0.0 || nms_iou > 1.0)
    throw std::invalid_argument("decode_detections: thresholds must be in [0, 1]");
  const Matrix& cls = preds.class_logits.value();
  const Matrix& obj = preds.objectness.value();
  const Matrix& reg = preds.reg_log_offsets.value();
  int cells = h * w;
  double width_px = w * stride, height_px = h * stride;

  std::vector<Detection> candidates;
  for (int i = 0; i < cells; ++i) {
    double objectness = 1.0 / (1.0 + std::exp(-obj(i, 0)));
    // Softmax over the class row.
    double mx = cls(i, 0);
    for (int k = 1; k < cls.cols(); ++k) mx = std::max(mx, cls(i, k));
    double denom = 0.0;
    int best = 0;
    for (int k = 0; k < cls.cols(); ++k) {
      denom += std::exp(cls(i, k) - mx);
      if (cls(i, k) > cls(i, best)) best = k;
    }
    double class_prob = std::exp(cls(i, best) - mx) / denom;
    double score = objectness * class_prob;
    if (score < score_thresh) continue;

    double cx = (i % w + 0.5) * stride, cy = (i / w + 0.5) * stride;
    BBox box;
    box.x1 = std::clamp(cx - std::exp(reg(i, 0)), 0.0, width_px);
    box.y1 = std::clamp(cy - std::exp(reg(i, 1)), 0.0, height_px);
    box.x2 = std::clamp(cx + std::exp(reg(i, 2)), 0.0, width_px);
    box.y2 = std::clamp(cy + std::exp(reg(i, 3)), 0.0, height_px);
    box.class_id = best + 1;
    if (!box.valid()) continue;
    candidates.push_back({box, score});
  }

  // Greedy class-wise NMS; candidates are cell-ordered, so sorting by score
  // with stable_sort keeps ties deterministic.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& candidate : candidates) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.box.class_id != candidate.box.class_id) continue;
      if (iou(k.box, candidate.box) >= nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

namespace {
struct FlatDetection {
  int image = 0;
  Detection det;
};
struct FlatBox {
  int image = 0;
  BBox box;
};

double ap_for_class_threshold(const std::vector<FlatDetection>& dets,
                              const std::vector<FlatBox>& gts, double thr) {
  if (gts.empty()) return 0.0;
  std::vector<bool> gt_matched(gts.size(), false);
  std::vector<int> tp_flags;
  tp_flags.reserve(dets.size());
  for (const FlatDetection& d : dets) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_matched[g] || gts[g].image != d.image) continue;
      double overlap = iou(d.det.box, gts[g].box);
      if (overlap > best_iou) {
        best = static_cast<int>(g);
        best_iou = overlap;
      }
    }
    if (best >= 0 && best_iou >= thr) {
      gt_matched[best] = true;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }
  // Precision/recall curve, then 101-point interpolation.
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (int flag : tp_flags) {
    flag ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / gts.size());
  }
  double ap = 0.0;
  for (int r = 0; r <= 100; ++r) {
    double level = r / 100.0;
    double best_prec = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k)
      if (recall[k] >= level) best_prec = std::max(best_prec, precision[k]);
    ap += best_prec;
  }
  return ap / 101.0;
}

ApResult evaluate(std::vector<FlatDetection> dets, const std::vector<FlatBox>& gts) {
  // Score-descending order shared by every class/threshold; stable so that
  // equal scores keep insertion order.
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
    return a.det.score > b.det.score;
  });
  std::set<int> classes;
  for (const FlatBox& g : gts) classes.insert(g.box.class_id);

  ApResult result;
  result.per_threshold.assign(10, 0.0);
  if (classes.empty()) return result;

  for (int t = 0; t < 10; ++t) {
    double thr = 0.50 + 0.05 * t;
    double total = 0.0;
    for (int cls : classes) {
      std::vector<FlatDetection> cls_dets;
      std::vector<FlatBox> cls_gts;
      for (const FlatDetection& d : dets)
        if (d.det.box.class_id == cls) cls_dets.push_back(d);
      for (const FlatBox& g : gts)
        if (g.box.class_id == cls) cls_gts.push_back(g);
      total += ap_for_class_threshold(cls_dets, cls_gts, thr);
    }
    result.per_threshold[t] = total / static_cast<double>(classes.size());
  }
  result.ap = std::accumulate(result.per_threshold.begin(),
                              result.per_threshold.end(), 0.0) / 10.0;
  result.ap50 = result.per_threshold[0];
  result.ap75 = result.per_threshold[5];
  return result;
}
}  // namespace

ApResult average_precision(std::span<const Detection> detections,
                           std::span<const BBox> ground_truth) {
  std::vector<FlatDetection> dets;
  std::vector<FlatBox> gts;
  for (const Detection& d : detections) dets.push_back({0, d});
  for (const BBox& g : ground_truth) gts.push_back({0, g});
  return evaluate(std::move(dets), gts);
}

void ApAccumulator::add_image(std::vector<Detection> detections,
                              std::vector<BBox> ground_truth) {
  images_.push_back({std::move(detections), std::move(ground_truth)});
}

ApResult ApAccumulator::compute() const {
  std::vector<FlatDetection> dets;
  std::vector<FlatBox> gts;
  for (std::size_t i = 0; i < images_.size(); ++i) {
    for (const Detection& d : images_[i].detections)
      dets.push_back({static_cast<int>(i), d});
    for (const BBox& g : images_[i].ground_truth)
      gts.push_back({static_cast<int>(i), g});
  }
  return evaluate(std::move(dets), gts);
}

}  // namespace matchdet::det
