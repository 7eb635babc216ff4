#include "sparnet/image.hpp"

#include <algorithm>

#include "sparnet/error.hpp"

namespace sparnet {

Image::Image(int channels, int height, int width, real fill)
    : channels_(channels), height_(height), width_(width) {
  SPARNET_REQUIRE(channels >= 1 && height >= 1 && width >= 1,
                  "image extents must be positive");
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Image::Image(int channels, int height, int width, std::vector<real> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
  SPARNET_REQUIRE(channels >= 1 && height >= 1 && width >= 1,
                  "image extents must be positive");
  SPARNET_REQUIRE(data_.size() == static_cast<std::size_t>(channels) * height * width,
                  "image data size does not match extents");
}

Tensor to_tensor(std::span<const Image> batch) {
  SPARNET_REQUIRE(!batch.empty(), "empty image batch");
  const Image& first = batch.front();
  Tensor t(Shape{static_cast<int>(batch.size()), first.channels(), first.height(),
                 first.width()});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    SPARNET_REQUIRE(batch[i].same_shape(first), "batch images differ in shape");
    std::copy(batch[i].data().begin(), batch[i].data().end(), t.data() + i * per);
  }
  return t;
}

Tensor to_tensor(const Image& img) { return to_tensor(std::span<const Image>(&img, 1)); }

Image from_tensor(const Tensor& t, int index) {
  const Shape& s = t.shape();
  SPARNET_REQUIRE(index >= 0 && index < s.n, "batch index out of range");
  const std::size_t per = s.sample();
  std::vector<real> data(t.data() + index * per, t.data() + (index + 1) * per);
  return Image(s.c, s.h, s.w, std::move(data));
}

}  // namespace sparnet
