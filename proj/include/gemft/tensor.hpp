#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gemft {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

using Shape = std::vector<int>;

std::string to_string(const Shape& shape);

// Dense row-major float32 tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<float> values);
  explicit Tensor(Shape s, float fill = 0.0f);

  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0f); }
  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }
  static Tensor from(std::initializer_list<float> values);
  static Tensor matrix(int rows, int cols, std::initializer_list<float> values);

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }
  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  std::span<float> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())}; }
  std::span<const float> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())};
  }

  bool operator==(const Tensor&) const = default;
};

std::size_t shape_numel(const Shape& shape);

// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const float> values, const char* what);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace gemft
