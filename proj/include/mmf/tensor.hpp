#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major float32 array. Copies share the underlying buffer; values
// are treated as immutable once an op has produced them, except for the
// in-place parameter updates done by optimizers through mutable_data().
class Tensor {
 public:
  Tensor();  // rank-0 zero
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_->size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<const float> data() const noexcept { return *data_; }
  std::span<float> mutable_data() noexcept { return *data_; }
  const float* raw() const noexcept { return data_->data(); }
  float* raw_mut() noexcept { return data_->data(); }

  float operator[](std::size_t i) const { return (*data_)[i]; }
  float item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool on) noexcept {
    requires_grad_ = on;
    return *this;
  }

  Tensor clone() const;
  Tensor reshape(Shape shape) const;  // shares storage
  void fill(float value);
  void copy_from(const Tensor& other);  // same shape, deep copy into this storage

  bool all_finite() const noexcept;
  bool same_storage(const Tensor& other) const noexcept { return data_ == other.data_; }
  const void* storage_id() const noexcept { return data_.get(); }

  // Exact element-wise equality of shape and bits.
  bool bit_equal(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<float>> data_;
  bool requires_grad_ = false;
};

struct Init {
  enum class Kind { Zeros, Constant, Uniform, Kaiming };
  Kind kind = Kind::Zeros;
  float value = 0.0f;
  float lo = 0.0f;
  float hi = 1.0f;
  std::uint64_t seed = 0;

  static Init zeros() { return {}; }
  static Init constant(float c) { return {Kind::Constant, c, 0.0f, 0.0f, 0}; }
  static Init uniform(std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    return {Kind::Uniform, 0.0f, lo, hi, seed};
  }
  // Kaiming-uniform for ReLU networks: U(-b, b), b = sqrt(6 / fan_in), where
  // fan_in is the product of all extents after the first.
  static Init kaiming(std::uint64_t seed) { return {Kind::Kaiming, 0.0f, 0.0f, 0.0f, seed}; }
};

Tensor create(const Shape& shape, const Init& init);

}  // namespace mmf
