#include "gemft/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

namespace gemft {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  if (shape_numel(shape) != data.size())
    throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) + " values");
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  data.assign(shape_numel(shape), fill);
}

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<float>(values));
}

Tensor Tensor::matrix(int rows, int cols, std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

int Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on tensor of shape " + to_string(shape));
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on tensor of shape " + to_string(shape));
  return shape[1];
}

void require_finite(std::span<const float> values, const char* what) {
  // all-ones exponent marks inf and nan; an integer or-reduction vectorizes
  constexpr std::uint32_t kExp = 0x7f800000u;
  std::uint32_t bad = 0;
  for (float v : values) bad |= static_cast<std::uint32_t>((std::bit_cast<std::uint32_t>(v) & kExp) == kExp);
  if (bad) throw NumericError(std::string("non-finite value produced by ") + what);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data.size() == b.data.size() &&
         (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

}  // namespace gemft
