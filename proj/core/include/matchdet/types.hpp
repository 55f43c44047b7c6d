#pragma once

#include <vector>

#include "matchdet/matrix.hpp"

namespace matchdet {

// Cell indexing convention used everywhere: cell i = y * w + x (row-major),
// cell (x, y) center in pixels = ((x + 0.5) * stride, (y + 0.5) * stride).

/// Per-cell feature matrix at one pyramid level; row i = cell i.
struct FeatureGrid {
  int h = 0;
  int w = 0;
  int c = 0;
  num::Matrix values;  // (h*w) x c

  FeatureGrid() = default;
  FeatureGrid(int h_, int w_, int c_) : h(h_), w(w_), c(c_), values(h_ * w_, c_) {}
  FeatureGrid(int h_, int w_, num::Matrix m) : h(h_), w(w_), c(m.cols()), values(std::move(m)) {}
  int cells() const { return h * w; }
};

/// Per-cell positive emphasis field; 1 is the background baseline.
struct WeightMap {
  int h = 0;
  int w = 0;
  std::vector<double> values;  // h*w

  WeightMap() = default;
  WeightMap(int h_, int w_, double fill = 1.0) : h(h_), w(w_), values(h_ * w_, fill) {}
  int cells() const { return h * w; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * w + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * w + x]; }
  bool uniform_ones() const {
    for (double v : values)
      if (v != 1.0) return false;
    return true;
  }
};

/// Per-cell foreground probability in [0, 1].
struct SegMask {
  int h = 0;
  int w = 0;
  std::vector<double> probs;  // h*w

  SegMask() = default;
  SegMask(int h_, int w_, double fill = 0.0) : h(h_), w(w_), probs(h_ * w_, fill) {}
  int cells() const { return h * w; }
};

/// Axis-aligned box in pixel coordinates, x1 < x2 and y1 < y2.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int class_id = 1;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool contains_strict(double px, double py) const {
    return x1 < px && px < x2 && y1 < py && py < y2;
  }
};

}  // namespace matchdet
