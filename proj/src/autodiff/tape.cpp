#include "vqw2v/tensor.hpp"

#include <sstream>

namespace vqw2v {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) {
    if (extent <= 0) throw ShapeError("non-positive extent in shape " + shape_string(shape));
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
Parameter<Scalar>::Parameter(std::string name_, Shape shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  value = Vec<Scalar>::Zero(numel(shape));
  grad = Vec<Scalar>::Zero(value.size());
}

template <typename Scalar>
MatrixMap<Scalar> Parameter<Scalar>::matrix() {
  return {value.data(), shape.front(), value.size() / shape.front()};
}

template <typename Scalar>
ConstMatrixMap<Scalar> Parameter<Scalar>::matrix() const {
  return {value.data(), shape.front(), value.size() / shape.front()};
}

template <typename Scalar>
Index Tensor<Scalar>::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
  return node_->shape[axis];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Vec<Scalar> Tensor<Scalar>::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return Vec<Scalar>::Zero(node_->value.size());
}

template <typename Scalar>
Tape<Scalar>::Tape() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::constant(Shape shape, Vec<Scalar> value) {
  return record("constant", std::move(shape), std::move(value), false, nullptr);
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::variable(Shape shape, Vec<Scalar> value) {
  return record("variable", std::move(shape), std::move(value), true, nullptr);
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::parameter(Parameter<Scalar>& param) {
  Parameter<Scalar>* p = &param;
  if (p->grad.size() != p->value.size()) p->grad = Vec<Scalar>::Zero(p->value.size());
  return record("parameter", p->shape, p->value, true,
                [p](const Vec<Scalar>& g) { p->grad += g; });
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::record(const char* op, Shape shape, Vec<Scalar> value,
                                    bool requires_grad, Backward backward) {
  if (consumed_) throw std::logic_error("tape already ran backward; reset() before recording");
  if (numel(shape) != value.size())
    throw ShapeError(std::string(op) + ": data length " + std::to_string(value.size()) +
                     " does not match shape " + shape_string(shape));
  if (check_finite_ && !value.allFinite())
    throw NonFiniteError(std::string("non-finite value produced by ") + op);
  auto& node = nodes_.emplace_back();
  node.op = op;
  node.shape = std::move(shape);
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  return Tensor<Scalar>(this, &node);
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (consumed_) throw std::logic_error("backward called twice on the same tape");
  if (&loss.tape() != this) throw std::logic_error("loss was recorded on a different tape");
  if (loss.size() != 1)
    throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  consumed_ = true;
  loss.node()->grad_buffer()[0] += Scalar(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = *it;
    if (!node.requires_grad || !node.backward || node.grad.size() != node.value.size()) continue;
    if (check_finite_ && !node.grad.allFinite())
      throw NonFiniteError(std::string("non-finite gradient at ") + node.op);
    node.backward(node.grad);
  }
}

template <typename Scalar>
void Tape<Scalar>::reset() {
  nodes_.clear();
  consumed_ = false;
}

template struct Parameter<float>;
template struct Parameter<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace vqw2v
