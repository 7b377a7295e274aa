#pragma once

// Axis-aligned boxes in input-image pixel coordinates and scored detections.

#include <cmath>
#include <stdexcept>
#include <string>

namespace neckbench {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const { return x2 > x1 && y2 > y1; }

  void validate() const {
    if (!valid())
      throw std::invalid_argument(
          "box: requires x2 > x1 and y2 > y1, got [" + std::to_string(x1) +
          ", " + std::to_string(y1) + ", " + std::to_string(x2) + ", " +
          std::to_string(y2) + "]");
  }
};

struct Detection {
  Box box;
  double score = 0.0;
};

/// Intersection over union, in [0, 1].
inline double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

}  // namespace neckbench
