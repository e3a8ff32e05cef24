#include "mvc/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mvc {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad)
    : s_(std::make_shared<TensorStorage<T>>()) {
  s_->data.assign(mvc::numel(shape), fill);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : s_(std::make_shared<TensorStorage<T>>()) {
  if (mvc::numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  }
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= s_->shape.size()) {
    throw ShapeError("dim " + std::to_string(i) + " out of range for " + to_string(s_->shape));
  }
  return s_->shape[i];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return s_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(s_->shape, s_->data, s_->requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (mvc::numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(s_->shape) + " to " + to_string(shape));
  }
  Tensor out;
  out.s_ = std::make_shared<TensorStorage<T>>();
  out.s_->shape = std::move(shape);
  out.s_->data = s_->data;
  out.s_->requires_grad = s_->requires_grad;
  return out;
}

template <typename T>
void Tensor<T>::check_finite(const char* what) const {
  for (const T v : s_->data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + what);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mvc
