#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "matchdet/types.hpp"

namespace matchdet::geo {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// 3x3 projective transform in pixel coordinates, mapping reference points
/// onto target points (p_t = H p_r). Stored row-major, normalized so that
/// h[8] = 1 when that entry is away from zero, Frobenius norm 1 otherwise.
class Homography {
 public:
  /// Identity transform.
  Homography();
  /// Throws std::invalid_argument when |det| <= 1e-12 or entries not finite.
  explicit Homography(const std::array<double, 9>& row_major);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);

  const std::array<double, 9>& coeffs() const { return h_; }
  double det() const;
  Homography inverse() const;
  /// this ∘ rhs (apply rhs first).
  Homography compose(const Homography& rhs) const;

 private:
  std::array<double, 9> h_;
};

/// Projective application; throws std::domain_error when the projected
/// w-coordinate is within 1e-12 of zero (point at infinity).
Point apply(const Homography& h, Point p);

/// A scored match between a target pixel location and a reference one.
struct Correspondence {
  Point target;
  Point reference;
  double score = 1.0;
};

/// Hartley-normalized direct linear transform from >= 4 correspondences.
/// Exact correspondences reproject within 1e-9 px. Throws on < 4 points or
/// a rank-deficient (collinear / degenerate) system.
Homography estimate_dlt(std::span<const Correspondence> corrs);

struct RansacOptions {
  int max_iters = 1000;
  double inlier_px = 3.0;
  double confidence = 0.999;  // adaptive early termination target
};

struct RansacResult {
  Homography model;
  std::vector<int> inliers;  // indices into the input span, ascending
};

/// Minimal-sample (4) RANSAC with a final DLT refit on the best consensus
/// set. Deterministic under seed. Throws when no model reaches 4 inliers.
RansacResult ransac_homography(std::span<const Correspondence> corrs,
                               const RansacOptions& options, std::uint64_t seed);

/// Mean Euclidean distance over the 4 image corners between est- and
/// gt-mapped corner positions.
double corner_error(const Homography& est, const Homography& gt, double width,
                    double height);

/// Area under the recall-vs-error curve up to `threshold`, normalized to
/// [0, 1]. Exact integral of the empirical step function: each error e <= t
/// contributes (t - e) / (n t). Failed estimations enter as +infinity.
/// Throws on an empty list.
double auc(std::span<const double> errors_px, double threshold_px);

/// Inverse bilinear warping of a cell grid living at `stride` px/cell:
/// each output cell center is mapped through the cell-space inverse of h
/// and sampled from the source; out-of-bounds taps read `fill`.
FeatureGrid warp_grid(const FeatureGrid& grid, const Homography& h, double stride,
                      double fill);
WeightMap warp_grid(const WeightMap& map, const Homography& h, double stride,
                    double fill = 1.0);

}  // namespace matchdet::geo
