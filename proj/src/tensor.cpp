#include "mmf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mmf/error.hpp"
#include "mmf/rng.hpp"

namespace mmf {

namespace {

void validate_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw InvalidShape("invalid shape " + to_string(shape) + ": extents must be >= 1");
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(std::make_shared<std::vector<float>>(1, 0.0f)) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_ = std::make_shared<std::vector<float>>(mmf::numel(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (values.size() != mmf::numel(shape_)) {
    throw InvalidShape("shape " + to_string(shape_) + " needs " + std::to_string(mmf::numel(shape_)) +
                       " values, got " + std::to_string(values.size()));
  }
  data_ = std::make_shared<std::vector<float>>(std::move(values));
  if (!all_finite()) throw NumericError("tensor created with non-finite values");
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, {value}); }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw InvalidShape("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = std::make_shared<std::vector<float>>(*data_);
  t.requires_grad_ = requires_grad_;
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  validate_shape(shape);
  if (mmf::numel(shape) != numel()) {
    throw ShapeMismatch("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

void Tensor::fill(float value) { std::fill(data_->begin(), data_->end(), value); }

void Tensor::copy_from(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeMismatch("copy_from: " + to_string(other.shape_) + " into " + to_string(shape_));
  }
  std::copy(other.data_->begin(), other.data_->end(), data_->begin());
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_->begin(), data_->end(), [](float v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(float)) == 0;
}

Tensor create(const Shape& shape, const Init& init) {
  if (!std::isfinite(init.value) || !std::isfinite(init.lo) || !std::isfinite(init.hi)) {
    throw NumericError("non-finite init parameter");
  }
  Tensor t(shape);
  auto out = t.mutable_data();
  switch (init.kind) {
    case Init::Kind::Zeros:
      break;
    case Init::Kind::Constant:
      t.fill(init.value);
      break;
    case Init::Kind::Uniform: {
      if (init.hi < init.lo) throw Error("uniform init with hi < lo");
      Rng rng(init.seed);
      for (float& v : out) v = static_cast<float>(rng.uniform(init.lo, init.hi));
      break;
    }
    case Init::Kind::Kaiming: {
      std::size_t fan_in = shape.empty() ? 1 : (shape.size() == 1 ? shape[0] : numel(shape) / shape[0]);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng(init.seed);
      for (float& v : out) v = static_cast<float>(rng.uniform(-bound, bound));
      break;
    }
  }
  return t;
}

}  // namespace mmf
