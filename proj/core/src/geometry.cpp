#include "matchdet/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "matchdet/rng.hpp"

namespace matchdet::geo {

namespace {
constexpr double kDetFloor = 1e-12;
constexpr double kWFloor = 1e-12;

std::array<double, 9> normalized(std::array<double, 9> h) {
  double scale;
  if (std::abs(h[8]) > 1e-9) {
    scale = 1.0 / h[8];
  } else {
    double fro = 0.0;
    for (double v : h) fro += v * v;
    scale = 1.0 / std::sqrt(fro);
  }
  for (double& v : h) v *= scale;
  return h;
}

double det3(const std::array<double, 9>& h) {
  return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) +
         h[2] * (h[3] * h[7] - h[4] * h[6]);
}
}  // namespace

Homography::Homography() : h_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& row_major) {
  for (double v : row_major)
    if (!std::isfinite(v)) throw std::invalid_argument("homography: non-finite entry");
  if (std::abs(det3(row_major)) <= kDetFloor)
    throw std::invalid_argument("homography: singular matrix");
  h_ = normalized(row_major);
}

Homography Homography::translation(double tx, double ty) {
  return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
}

double Homography::det() const { return det3(h_); }

Homography Homography::inverse() const {
  const auto& h = h_;
  double d = det3(h);
  std::array<double, 9> inv = {
      (h[4] * h[8] - h[5] * h[7]) / d, (h[2] * h[7] - h[1] * h[8]) / d,
      (h[1] * h[5] - h[2] * h[4]) / d, (h[5] * h[6] - h[3] * h[8]) / d,
      (h[0] * h[8] - h[2] * h[6]) / d, (h[2] * h[3] - h[0] * h[5]) / d,
      (h[3] * h[7] - h[4] * h[6]) / d, (h[1] * h[6] - h[0] * h[7]) / d,
      (h[0] * h[4] - h[1] * h[3]) / d};
  return Homography(inv);
}

Homography Homography::compose(const Homography& rhs) const {
  const auto& a = h_;
  const auto& b = rhs.h_;
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out[r * 3 + c] =
          a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
  return Homography(out);
}

Point apply(const Homography& h, Point p) {
  const auto& m = h.coeffs();
  double w = m[6] * p.x + m[7] * p.y + m[8];
  if (std::abs(w) <= kWFloor)
    throw std::domain_error("homography apply: point maps to infinity");
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w,
          (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

namespace {
struct NormalizeResult {
  std::vector<Point> points;
  // Similarity transform T: normalized = T * p.
  double scale = 1.0;
  double cx = 0.0, cy = 0.0;
};

NormalizeResult hartley_normalize(std::span<const Correspondence> corrs,
                                  bool reference_side) {
  NormalizeResult out;
  out.points.reserve(corrs.size());
  double cx = 0.0, cy = 0.0;
  for (const auto& corr : corrs) {
    const Point& p = reference_side ? corr.reference : corr.target;
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(corrs.size());
  cy /= static_cast<double>(corrs.size());
  double mean_radius = 0.0;
  for (const auto& corr : corrs) {
    const Point& p = reference_side ? corr.reference : corr.target;
    mean_radius += std::hypot(p.x - cx, p.y - cy);
  }
  mean_radius /= static_cast<double>(corrs.size());
  double s = mean_radius > 1e-12 ? std::numbers::sqrt2 / mean_radius : 1.0;
  for (const auto& corr : corrs) {
    const Point& p = reference_side ? corr.reference : corr.target;
    out.points.push_back({s * (p.x - cx), s * (p.y - cy)});
  }
  out.scale = s;
  out.cx = cx;
  out.cy = cy;
  return out;
}
}  // namespace

Homography estimate_dlt(std::span<const Correspondence> corrs) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4)
    throw std::invalid_argument("estimate_dlt: at least 4 correspondences required");
  for (const auto& corr : corrs)
    if (!std::isfinite(corr.target.x) || !std::isfinite(corr.target.y) ||
        !std::isfinite(corr.reference.x) || !std::isfinite(corr.reference.y))
      throw std::invalid_argument("estimate_dlt: non-finite correspondence");

  NormalizeResult ref = hartley_normalize(corrs, /*reference_side=*/true);
  NormalizeResult tgt = hartley_normalize(corrs, /*reference_side=*/false);

  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    double x = ref.points[i].x, y = ref.points[i].y;
    double u = tgt.points[i].x, v = tgt.points[i].y;
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Two vanishing singular values mean the solution is not unique
  // (3 collinear points in a minimal sample, coincident points, ...).
  if (sv(7) <= 1e-9 * std::max(sv(0), 1.0))
    throw std::invalid_argument("estimate_dlt: degenerate configuration");
  Eigen::VectorXd hvec = svd.matrixV().col(8);

  // Denormalize: H = T_t^-1 * Hn * T_r.
  Eigen::Matrix3d hn;
  hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);
  Eigen::Matrix3d t_ref, t_tgt_inv;
  t_ref << ref.scale, 0, -ref.scale * ref.cx, 0, ref.scale, -ref.scale * ref.cy, 0, 0, 1;
  t_tgt_inv << 1.0 / tgt.scale, 0, tgt.cx, 0, 1.0 / tgt.scale, tgt.cy, 0, 0, 1;
  Eigen::Matrix3d h = t_tgt_inv * hn * t_ref;

  std::array<double, 9> coeffs;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) coeffs[r * 3 + c] = h(r, c);
  if (std::abs(det3(coeffs)) <= kDetFloor)
    throw std::invalid_argument("estimate_dlt: degenerate configuration");
  return Homography(coeffs);
}

namespace {
double reprojection_error(const Homography& h, const Correspondence& corr) {
  const auto& m = h.coeffs();
  double w = m[6] * corr.reference.x + m[7] * corr.reference.y + m[8];
  if (std::abs(w) <= kWFloor) return std::numeric_limits<double>::infinity();
  double u = (m[0] * corr.reference.x + m[1] * corr.reference.y + m[2]) / w;
  double v = (m[3] * corr.reference.x + m[4] * corr.reference.y + m[5]) / w;
  return std::hypot(u - corr.target.x, v - corr.target.y);
}
}  // namespace

RansacResult ransac_homography(std::span<const Correspondence> corrs,
                               const RansacOptions& options, std::uint64_t seed) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4)
    throw std::invalid_argument("ransac_homography: at least 4 correspondences required");

  Rng rng(mix_seed(seed, 0x9a7c));
  std::vector<int> best_inliers;
  int iters_needed = options.max_iters;
  std::array<Correspondence, 4> sample;
  std::array<int, 4> idx{};

  for (int iter = 0; iter < iters_needed; ++iter) {
    // Distinct 4-subset.
    for (int k = 0; k < 4;) {
      int candidate = static_cast<int>(rng.below(n));
      bool dup = false;
      for (int j = 0; j < k; ++j) dup |= idx[j] == candidate;
      if (!dup) idx[k++] = candidate;
    }
    for (int k = 0; k < 4; ++k) sample[k] = corrs[idx[k]];

    Homography model;
    try {
      model = estimate_dlt(std::span<const Correspondence>(sample));
    } catch (const std::invalid_argument&) {
      continue;  // degenerate minimal sample
    }

    std::vector<int> inliers;
    for (int i = 0; i < n; ++i)
      if (reprojection_error(model, corrs[i]) <= options.inlier_px)
        inliers.push_back(i);

    if (inliers.size() > best_inliers.size()) {
      best_inliers = std::move(inliers);
      // Standard adaptive bound on the number of iterations.
      double w = static_cast<double>(best_inliers.size()) / n;
      double p_outlier_free = w * w * w * w;
      if (p_outlier_free >= 1.0 - 1e-12) {
        iters_needed = iter + 1;
      } else if (p_outlier_free > 0.0) {
        double needed = std::log(1.0 - options.confidence) /
                        std::log(1.0 - p_outlier_free);
        iters_needed = std::min(options.max_iters,
                                std::max(iter + 1, static_cast<int>(needed) + 1));
      }
    }
  }

  if (best_inliers.size() < 4)
    throw std::runtime_error("ransac_homography: no consensus of >= 4 inliers");

  std::vector<Correspondence> support;
  support.reserve(best_inliers.size());
  for (int i : best_inliers) support.push_back(corrs[i]);
  RansacResult result;
  result.model = estimate_dlt(support);
  result.inliers = std::move(best_inliers);
  return result;
}

double corner_error(const Homography& est, const Homography& gt, double width,
                    double height) {
  const Point corners[4] = {{0, 0}, {width, 0}, {width, height}, {0, height}};
  double total = 0.0;
  for (const Point& corner : corners) {
    Point a = apply(est, corner);
    Point b = apply(gt, corner);
    total += std::hypot(a.x - b.x, a.y - b.y);
  }
  return total / 4.0;
}

double auc(std::span<const double> errors_px, double threshold_px) {
  if (errors_px.empty()) throw std::invalid_argument("auc: empty error list");
  if (threshold_px <= 0.0) throw std::invalid_argument("auc: threshold must be > 0");
  double area = 0.0;
  for (double e : errors_px) {
    if (std::isnan(e)) throw std::invalid_argument("auc: NaN error");
    if (e <= threshold_px) area += threshold_px - e;
  }
  return area / (threshold_px * static_cast<double>(errors_px.size()));
}

namespace {
// Shared inverse-bilinear kernel over a (h*w) x channels buffer.
void warp_cells(const double* src, double* dst, int h, int w, int channels,
                const Homography& homography, double stride, double fill) {
  // Cell-space homography: S H S^-1, S = diag(1/stride, 1/stride, 1).
  const auto& m = homography.coeffs();
  std::array<double, 9> cell_h = {m[0],          m[1],          m[2] / stride,
                                  m[3],          m[4],          m[5] / stride,
                                  m[6] * stride, m[7] * stride, m[8]};
  Homography inv = Homography(cell_h).inverse();
  const auto& q = inv.coeffs();

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double cx = x + 0.5, cy = y + 0.5;
      double wq = q[6] * cx + q[7] * cy + q[8];
      double* out = dst + (static_cast<std::size_t>(y) * w + x) * channels;
      if (std::abs(wq) <= kWFloor) {
        for (int ch = 0; ch < channels; ++ch) out[ch] = fill;
        continue;
      }
      double sx = (q[0] * cx + q[1] * cy + q[2]) / wq - 0.5;
      double sy = (q[3] * cx + q[4] * cy + q[5]) / wq - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      double fx = sx - x0, fy = sy - y0;
      double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
      double w01 = (1 - fx) * fy, w11 = fx * fy;
      auto tap = [&](int tx, int ty, int ch) -> double {
        if (tx < 0 || tx >= w || ty < 0 || ty >= h) return fill;
        return src[(static_cast<std::size_t>(ty) * w + tx) * channels + ch];
      };
      for (int ch = 0; ch < channels; ++ch)
        out[ch] = w00 * tap(x0, y0, ch) + w10 * tap(x0 + 1, y0, ch) +
                  w01 * tap(x0, y0 + 1, ch) + w11 * tap(x0 + 1, y0 + 1, ch);
    }
  }
}
}  // namespace

FeatureGrid warp_grid(const FeatureGrid& grid, const Homography& h, double stride,
                      double fill) {
  if (stride < 1.0) throw std::invalid_argument("warp_grid: stride must be >= 1");
  FeatureGrid out(grid.h, grid.w, grid.c);
  warp_cells(grid.values.data(), out.values.data(), grid.h, grid.w, grid.c, h,
             stride, fill);
  return out;
}

WeightMap warp_grid(const WeightMap& map, const Homography& h, double stride,
                    double fill) {
  if (stride < 1.0) throw std::invalid_argument("warp_grid: stride must be >= 1");
  WeightMap out(map.h, map.w);
  warp_cells(map.values.data(), out.values.data(), map.h, map.w, 1, h, stride,
             fill);
  return out;
}

}  // namespace matchdet::geo
