#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqw2v {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A named, trainable array that outlives any single tape. Gradients from
/// every tape that binds it accumulate into `grad` until zero_grad().
template <typename Scalar>
struct Parameter {
  std::string name;
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;

  Parameter() = default;
  Parameter(std::string name_, Shape shape_);

  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }

  /// First axis as rows, remaining axes flattened into columns.
  MatrixMap<Scalar> matrix();
  ConstMatrixMap<Scalar> matrix() const;
};

namespace detail {

template <typename Scalar>
struct Node {
  using Backward = std::function<void(const Vec<Scalar>& grad_out)>;

  const char* op = "";
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  Backward backward;

  /// Lazily zero-initialised gradient buffer for in-place accumulation.
  Vec<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vec<Scalar>::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// owning tape is alive and has not been reset.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const;
  std::size_t ndim() const { return node_->shape.size(); }
  Index size() const { return node_->value.size(); }
  Index rows() const { return node_->shape.front(); }
  Index cols() const { return size() / rows(); }

  const Vec<Scalar>& value() const { return node_->value; }
  ConstMatrixMap<Scalar> matrix() const { return {node_->value.data(), rows(), cols()}; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated by the last backward pass; zeros when none reached it.
  Vec<Scalar> grad() const;

  Tape<Scalar>& tape() const { return *tape_; }
  detail::Node<Scalar>* node() const { return node_; }

 private:
  friend class Tape<Scalar>;
  Tensor(Tape<Scalar>* tape, detail::Node<Scalar>* node) : tape_(tape), node_(node) {}

  Tape<Scalar>* tape_ = nullptr;
  detail::Node<Scalar>* node_ = nullptr;
};

/// Records operations in execution order and replays them in reverse.
/// One tape belongs to one thread; independent tapes may run concurrently.
template <typename Scalar>
class Tape {
 public:
  using Backward = typename detail::Node<Scalar>::Backward;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<Scalar> constant(Shape shape, Vec<Scalar> value);
  Tensor<Scalar> variable(Shape shape, Vec<Scalar> value);
  /// Binds a parameter as a leaf; backward adds into parameter.grad.
  Tensor<Scalar> parameter(Parameter<Scalar>& param);

  /// Appends an op node. `backward` receives the node's output gradient and
  /// must push contributions into its inputs' grad buffers.
  Tensor<Scalar> record(const char* op, Shape shape, Vec<Scalar> value, bool requires_grad,
                        Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once.
  void backward(const Tensor<Scalar>& loss);

  /// Drops every node; previously returned tensors become dangling.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  std::deque<detail::Node<Scalar>> nodes_;
  bool consumed_ = false;
  bool check_finite_;
};

}  // namespace vqw2v
