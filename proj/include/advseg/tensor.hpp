#ifndef ADVSEG_TENSOR_HPP
#define ADVSEG_TENSOR_HPP

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace advseg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

// Dense rank <= 2 tensor of doubles with a gradient slot.
//
// A Tensor is a handle: copies share the same storage, which is how a
// parameter is referenced from several places in one computation. Use
// clone() for an independent copy. Constness is that of the handle, so
// gradients and values can be updated through a const reference. Vectors
// are 1 x k rows; a sequence of n vectors is an n x k matrix.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor row(std::initializer_list<double> values, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() const { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  // Zero matrix of the value's shape when no gradient has been accumulated.
  Matrix grad() const;
  void zero_grad() const { node_->grad.resize(0, 0); }
  void accumulate_grad(const Eigen::Ref<const Matrix>& g) const;
  // Adds g into the block starting at (row, col) without touching the rest.
  void accumulate_grad_block(Index row, Index col, const Eigen::Ref<const Matrix>& g) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) const { node_->requires_grad = flag; }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  std::string shape_string() const;

  // Value of a 1x1 tensor.
  double item() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::Node> node_;
};

using BackwardFn = std::function<void(const Matrix& out_grad)>;

// Records executed primitives for reverse-mode differentiation.
//
// Constructing a Tape makes it the calling thread's active tape until it is
// destroyed; operations whose inputs require gradients append a record to
// it. A tape is meant to live for one training step.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Appends a record when a tape is active and any input requires grad.
  // Returns true when recorded; the output then requires grad.
  static bool record(std::span<const Tensor> inputs, Tensor& output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every record's backward rule in
  // reverse order. Gradients accumulate into leaf tensors.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
    std::size_t id;
  };
  std::vector<Record> records_;
  Tape* previous_;
  bool consumed_ = false;
};

// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* saved_;
};

// Convenience: runs a fresh tape over `loss_fn` and backpropagates.
// Returns the loss value.
double compute_gradients(const std::function<Tensor()>& loss_fn);

Tensor constant(Matrix value);
// Same value, cut from the graph.
Tensor detach(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
// Same shapes, or b a 1 x cols bias added to each row of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// axis 0 stacks rows, axis 1 joins columns.
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Row-wise.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
// Row-wise, rows x 1 result. Max-shifted.
Tensor log_sum_exp(const Tensor& x);
// axis 0 averages rows (1 x cols), axis 1 averages columns (rows x 1).
Tensor mean_over_axis(const Tensor& x, int axis);
Tensor slice(const Tensor& x, Index row, Index n_rows, Index col, Index n_cols);
Tensor slice_row(const Tensor& x, Index row);
Tensor sum(const Tensor& x);
// Rows of `table` selected by ids; backward scatters into the table.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// Central differences of f around the current value of `param`, one
// coordinate at a time. f must read `param` and be deterministic.
Matrix finite_difference_gradient(const std::function<double()>& f, Tensor& param,
                                  double epsilon = 1e-5);

// max|a - b| / max(max|a|, max|b|, floor): error relative to the tensor's
// largest gradient entry.
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8);

}  // namespace advseg

#endif  // ADVSEG_TENSOR_HPP
