#pragma once

#include <cstddef>
#include <vector>

namespace insitu {

/// Color with opacity. Renderer outputs are premultiplied; transfer-function
/// entries are straight (color not yet scaled by alpha).
struct Rgba {
  float r = 0.0f;
  float g = 0.0f;
  float b = 0.0f;
  float a = 0.0f;

  friend constexpr bool operator==(const Rgba&, const Rgba&) = default;
};

constexpr Rgba premultiply(Rgba c) { return {c.r * c.a, c.g * c.a, c.b * c.a, c.a}; }

/// Full-viewport partial or final rendering, row-major with row 0 at the top.
struct LocalImage {
  int width = 0;
  int height = 0;
  std::vector<Rgba> pixels;
  /// Position of the producing rank in the visibility order (front-most = 0).
  int order_key = 0;

  LocalImage() = default;
  LocalImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h) {}

  std::size_t pixel_count() const { return pixels.size(); }
  Rgba& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgba& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

}  // namespace insitu
