#pragma once

#include <array>
#include <string>

namespace gfd {

// Axis-aligned box in continuous image coordinates.
struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool valid() const { return x1 > x0 && y1 > y0; }
  std::array<double, 4> as_array() const { return {x0, y0, x1, y1}; }

  friend bool operator==(const Box&, const Box&) = default;
  friend auto operator<=>(const Box& a, const Box& b) { return a.as_array() <=> b.as_array(); }
};

std::string box_str(const Box& b);

}  // namespace gfd
