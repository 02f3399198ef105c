#pragma once

namespace rfcn {

// Axis-aligned box in image pixel coordinates; (x0, y0) is the top-left corner.
struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x0 + 0.5 * w; }
  double cy() const { return y0 + 0.5 * h; }
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

// Clip to [0, width] x [0, height].
Box clip_box(const Box& b, double width, double height);

}  // namespace rfcn
