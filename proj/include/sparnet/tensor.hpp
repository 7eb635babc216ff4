#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sparnet {

using real = double;

// NCHW extents. Parameter tensors reuse the same layout: conv weights are
// (out, in, kh, kw), per-channel vectors are (1, C, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0);
  Tensor(Shape shape, std::vector<real> data);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<real> span() { return data_; }
  std::span<const real> span() const { return data_; }
  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::vector<real>& vec() { return data_; }
  const std::vector<real>& vec() const { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
                     shape_.w + x];
  }
  real at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
                     shape_.w + x];
  }

  void fill(real v);
  // Same extents, reinterpreted. Element count must match.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_{};
  std::vector<real> data_;
};

}  // namespace sparnet
