#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "subswap/tensor.hpp"

namespace subswap::raster {

using Point = Eigen::Vector2f;

// Pixel (x, y) is tested at its centre (x + 0.5, y + 0.5).
inline Point centre(Index x, Index y) {
  return {static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f};
}

inline float segment_distance(const Point& p, const Point& a, const Point& b) {
  const Point ab = b - a;
  const float len2 = ab.squaredNorm();
  const float s = len2 > 0.f ? std::clamp((p - a).dot(ab) / len2, 0.f, 1.f) : 0.f;
  return (p - (a + s * ab)).norm();
}

inline bool in_capsule(const Point& p, const Point& a, const Point& b, float radius) {
  return segment_distance(p, a, b) <= radius;
}

inline bool in_disk(const Point& p, const Point& c, float radius) {
  return (p - c).squaredNorm() <= radius * radius;
}

inline float cross2(const Point& a, const Point& b) { return a.x() * b.y() - a.y() * b.x(); }

inline bool in_triangle(const Point& p, const Point& a, const Point& b, const Point& c) {
  const float d1 = cross2(b - a, p - a);
  const float d2 = cross2(c - b, p - b);
  const float d3 = cross2(a - c, p - c);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

/// Calls fn(x, y) for every pixel of an h x w frame inside [x0,x1) x [y0,y1)
/// after clamping; callers pass a conservative bounding region.
template <typename Fn>
void for_region(Index h, Index w, float fx0, float fy0, float fx1, float fy1, Fn&& fn) {
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(fx0)));
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(fy0)));
  const Index x1 = std::min<Index>(w, static_cast<Index>(std::ceil(fx1)) + 1);
  const Index y1 = std::min<Index>(h, static_cast<Index>(std::ceil(fy1)) + 1);
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) fn(x, y);
}

}  // namespace subswap::raster
