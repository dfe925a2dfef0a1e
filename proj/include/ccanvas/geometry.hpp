#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>

#include "ccanvas/error.hpp"

namespace ccanvas {

// Canvas units; y grows downward. The plane is unbounded, any finite
// coordinate is legal.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Delta {
  double dx = 0.0;
  double dy = 0.0;
};

struct Rect {
  Point origin;  // top-left
  double width = 0.0;
  double height = 0.0;

  double left() const noexcept { return origin.x; }
  double top() const noexcept { return origin.y; }
  double right() const noexcept { return origin.x + width; }
  double bottom() const noexcept { return origin.y + height; }
  Point center() const noexcept { return {origin.x + width / 2.0, origin.y + height / 2.0}; }

  // Half-open: left/top edges belong to the rect, right/bottom do not.
  bool contains(Point p) const noexcept {
    return p.x >= left() && p.x < right() && p.y >= top() && p.y < bottom();
  }

  bool intersects(const Rect& o) const noexcept {
    return left() < o.right() && o.left() < right() && top() < o.bottom() && o.top() < bottom();
  }

  friend bool operator==(const Rect&, const Rect&) = default;
};

inline Point translated(Point p, Delta d) noexcept { return {p.x + d.dx, p.y + d.dy}; }

inline bool is_finite(Point p) noexcept { return std::isfinite(p.x) && std::isfinite(p.y); }

inline bool is_valid(const Rect& r) noexcept {
  return is_finite(r.origin) && std::isfinite(r.width) && std::isfinite(r.height) &&
         r.width > 0.0 && r.height > 0.0;
}

inline void require_finite(Point p, const char* what) {
  if (!is_finite(p)) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + ": coordinates must be finite");
  }
}

inline void require_valid(const Rect& r, const char* what) {
  if (!is_valid(r)) {
    throw Error(ErrorCode::invalid_argument,
                std::string(what) + ": width and height must be positive and coordinates finite");
  }
}

/// Smallest rect covering all inputs; nullopt for an empty range.
inline std::optional<Rect> bounding_box(std::span<const Rect> rects) {
  if (rects.empty()) return std::nullopt;
  double l = rects[0].left(), t = rects[0].top(), r = rects[0].right(), b = rects[0].bottom();
  for (const auto& rect : rects.subspan(1)) {
    l = std::min(l, rect.left());
    t = std::min(t, rect.top());
    r = std::max(r, rect.right());
    b = std::max(b, rect.bottom());
  }
  return Rect{{l, t}, r - l, b - t};
}

}  // namespace ccanvas
