#include "ucdg/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

namespace ucdg {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void throw_shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("Tensor: zero-sized dimension in " + shape_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("Tensor: zero-sized dimension in " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_string(shape_) + " holds " +
                     std::to_string(shape_size(shape_)) + " elements, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("Tensor::at: index rank " + std::to_string(index.size()) +
                     " for shape " + shape_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("Tensor::at: index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item: not a scalar " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) throw_shape_error("reshape", shape_, shape);
  for (auto d : shape) {
    if (d == 0) throw ShapeError("Tensor: zero-sized dimension in " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  out.requires_grad_ = false;
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

}  // namespace ucdg
