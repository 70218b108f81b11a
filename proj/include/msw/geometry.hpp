#pragma once

#include <algorithm>
#include <cstdint>

namespace msw {

/// Axis-aligned pixel box with inclusive integer bounds.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = -1;
  int y1 = -1;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  int64_t area() const {
    return empty() ? 0 : static_cast<int64_t>(width()) * height();
  }
  bool empty() const { return x1 < x0 || y1 < y0; }
  bool contains(int row, int col) const {
    return row >= y0 && row <= y1 && col >= x0 && col <= x1;
  }

  bool operator==(const Box&) const = default;
};

/// Continuous box [x0, x1) x [y0, y1) used for detections and IoU.
struct BoxF {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double area() const {
    return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  }

  static BoxF from_pixels(const Box& b) {
    return {static_cast<double>(b.x0), static_cast<double>(b.y0),
            static_cast<double>(b.x1) + 1.0, static_cast<double>(b.y1) + 1.0};
  }
};

inline double box_iou(const BoxF& a, const BoxF& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

/// Map an image-resolution box to the score-map grid at the given stride
/// (floor of both corners, inclusive bounds).
inline Box box_to_grid(const Box& b, int stride) {
  return {b.x0 / stride, b.y0 / stride, b.x1 / stride, b.y1 / stride};
}

}  // namespace msw
