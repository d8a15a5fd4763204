#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace fastfusion {

/// Dense row-major 2D array. Value semantics; element (u, v) is column u, row v.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

  T& operator()(int u, int v) {
    assert(contains(u, v));
    return data_[static_cast<std::size_t>(v) * width_ + u];
  }
  const T& operator()(int u, int v) const {
    assert(contains(u, v));
    return data_[static_cast<std::size_t>(v) * width_ + u];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using GrayImage = Image<float>;
using DepthImage = Image<float>;

/// Sample with its analytic gradient; gradient is the exact derivative of the
/// bilinear interpolant inside the cell containing the sample point.
struct BilinearSample {
  double value = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
};

/// True when (u, v) has all four bilinear neighbours inside the image.
template <typename T>
bool can_interpolate(const Image<T>& img, double u, double v) {
  return u >= 0.0 && v >= 0.0 && u <= img.width() - 1.0 && v <= img.height() - 1.0;
}

template <typename T>
BilinearSample sample_bilinear(const Image<T>& img, double u, double v) {
  assert(can_interpolate(img, u, v));
  int u0 = static_cast<int>(std::floor(u));
  int v0 = static_cast<int>(std::floor(v));
  // keep the last row/column addressable
  u0 = std::min(u0, img.width() - 2);
  v0 = std::min(v0, img.height() - 2);
  const double a = u - u0;
  const double b = v - v0;
  const double i00 = img(u0, v0);
  const double i10 = img(u0 + 1, v0);
  const double i01 = img(u0, v0 + 1);
  const double i11 = img(u0 + 1, v0 + 1);
  BilinearSample s;
  s.value = (1 - a) * (1 - b) * i00 + a * (1 - b) * i10 + (1 - a) * b * i01 + a * b * i11;
  s.gradient.x() = (1 - b) * (i10 - i00) + b * (i11 - i01);
  s.gradient.y() = (1 - a) * (i01 - i00) + a * (i11 - i10);
  return s;
}

/// Nearest-neighbour lookup; returns false when the rounded pixel is outside.
template <typename T>
bool sample_nearest(const Image<T>& img, double u, double v, T& out, int* iu = nullptr, int* iv = nullptr) {
  const int x = static_cast<int>(std::lround(u));
  const int y = static_cast<int>(std::lround(v));
  if (!img.contains(x, y)) return false;
  out = img(x, y);
  if (iu) *iu = x;
  if (iv) *iv = y;
  return true;
}

}  // namespace fastfusion
