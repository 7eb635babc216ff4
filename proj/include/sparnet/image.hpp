#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sparnet/tensor.hpp"

namespace sparnet {

// Channel-major image, values nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, real fill = 0);
  Image(int channels, int height, int width, std::vector<real> data);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Image& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  real& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  real at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<real> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::span<const real> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::vector<real>& data() { return data_; }
  const std::vector<real>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<real> data_;
};

// Batch packing between images and NCHW network tensors.
Tensor to_tensor(std::span<const Image> batch);
Tensor to_tensor(const Image& img);
Image from_tensor(const Tensor& t, int index = 0);

}  // namespace sparnet
