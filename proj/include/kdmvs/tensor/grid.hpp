#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "kdmvs/util/error.hpp"

namespace kdmvs {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.height << "x" << s.width << "x" << s.channels;
  return os.str();
}

// Dense H x W x C grid of doubles, row-major with channels innermost.
// Images, feature maps, depth/confidence maps, masks and per-pixel
// hypothesis volumes all live in this type.
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels, double fill = 0.0)
      : shape_{height, width, channels}, data_(shape_.size(), fill) {
    if (height < 0 || width < 0 || channels < 0) throw ShapeError("negative grid dimension");
  }
  explicit Grid(Shape shape, double fill = 0.0) : Grid(shape.height, shape.width, shape.channels, fill) {}

  static Grid scalar(double v) { return Grid(1, 1, 1, v); }

  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  int pixels() const { return shape_.height * shape_.width; }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }
  double& operator()(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  const double& operator()(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  // All channels of one pixel.
  std::span<double> pixel(int y, int x) { return {data_.data() + index(y, x), static_cast<std::size_t>(shape_.channels)}; }
  std::span<const double> pixel(int y, int x) const {
    return {data_.data() + index(y, x), static_cast<std::size_t>(shape_.channels)};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar grid " + to_string(shape_));
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Grid&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Single channel c of a grid.
inline Grid channel(const Grid& g, int c) {
  Grid out(g.height(), g.width(), 1);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(y, x) = g(y, x, c);
  return out;
}

// Averages factor x factor blocks. Dimensions must be divisible by factor.
inline Grid area_downsample(const Grid& g, int factor) {
  if (factor == 1) return g;
  if (g.height() % factor != 0 || g.width() % factor != 0)
    throw ShapeError("area_downsample: " + to_string(g.shape()) + " not divisible by " + std::to_string(factor));
  Grid out(g.height() / factor, g.width() / factor, g.channels());
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < g.channels(); ++c) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += g(y * factor + dy, x * factor + dx, c);
        out(y, x, c) = s * inv;
      }
  return out;
}

inline Grid upsample_nearest(const Grid& g, int factor) {
  if (factor == 1) return g;
  Grid out(g.height() * factor, g.width() * factor, g.channels());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < g.channels(); ++c) out(y, x, c) = g(y / factor, x / factor, c);
  return out;
}

inline Grid multiply(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "multiply");
  Grid out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline double sum(const Grid& g) {
  double s = 0.0;
  for (double v : g.data()) s += v;
  return s;
}

inline double mean(const Grid& g) { return g.empty() ? 0.0 : sum(g) / static_cast<double>(g.size()); }

inline int count_nonzero(const Grid& g) {
  int n = 0;
  for (double v : g.data()) n += (v != 0.0);
  return n;
}

}  // namespace kdmvs
