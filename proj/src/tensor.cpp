#include "sparnet/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "sparnet/error.hpp"

namespace sparnet {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, real fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> data)
    : shape_(shape), data_(std::move(data)) {
  SPARNET_REQUIRE(data_.size() == shape_.numel(),
                  "tensor data size does not match shape " + shape_.str());
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  SPARNET_REQUIRE(shape.numel() == numel(),
                  "cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(shape, data_);
}

}  // namespace sparnet
