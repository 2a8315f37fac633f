#include "advseg/tensor.hpp"

#include <cmath>
#include <sstream>

namespace advseg {

namespace {

thread_local Tape* g_active_tape = nullptr;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what + " (got " + a.shape_string() + ")");
}

// Row-wise max-shifted log-sum-exp.
Eigen::VectorXd row_lse(const Matrix& x) {
  Eigen::VectorXd out(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out(r) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  return out;
}

}  // namespace

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::row(std::initializer_list<double> values, bool requires_grad) {
  Matrix m(1, static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) m(0, i++) = v;
  return Tensor(std::move(m), requires_grad);
}

Matrix Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

void Tensor::accumulate_grad(const Eigen::Ref<const Matrix>& g) const {
  if (!node_->requires_grad) return;
  if (g.rows() != rows() || g.cols() != cols()) {
    throw ShapeError("accumulate_grad: gradient shape does not match " + shape_string());
  }
  if (node_->grad.size() == 0) {
    node_->grad = g;
  } else {
    node_->grad += g;
  }
}

void Tensor::accumulate_grad_block(Index row, Index col, const Eigen::Ref<const Matrix>& g) const {
  if (!node_->requires_grad) return;
  if (row < 0 || col < 0 || row + g.rows() > rows() || col + g.cols() > cols()) {
    throw ShapeError("accumulate_grad_block: block outside " + shape_string());
  }
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  node_->grad.block(row, col, g.rows(), g.cols()) += g;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[' << rows() << 'x' << cols() << ']';
  return os.str();
}

double Tensor::item() const {
  if (size() != 1) shape_error("item", *this, "expected a 1x1 tensor");
  return node_->value(0, 0);
}

Tensor Tensor::clone() const {
  Tensor t(node_->value, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

bool Tape::record(std::span<const Tensor> inputs, Tensor& output, BackwardFn backward) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return false;

  Record rec;
  rec.inputs.reserve(inputs.size());
  for (const auto& t : inputs) rec.inputs.push_back(t.node_);
  output.node_->requires_grad = true;
  rec.output = output.node_;
  rec.backward = std::move(backward);
  rec.id = tape->records_.size();
  tape->records_.push_back(std::move(rec));
  return true;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + loss.shape_string());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not participate in a recorded computation");
  }
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  consumed_ = true;

  auto seed = Matrix::Ones(1, 1);
  const_cast<Tensor&>(loss).accumulate_grad(seed);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.size() == 0) continue;
    it->backward(out.grad);
  }
  // Release intermediate gradients held by the records' outputs; leaves keep theirs.
  for (auto& rec : records_) {
    if (rec.output != loss.node_) rec.output->grad.resize(0, 0);
  }
}

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = saved_; }

double compute_gradients(const std::function<Tensor()>& loss_fn) {
  Tape tape;
  Tensor loss = loss_fn();
  tape.backward(loss);
  return loss.item();
}

Tensor constant(Matrix value) { return Tensor(std::move(value), false); }

Tensor detach(const Tensor& x) { return Tensor(x.value(), false); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Tensor out(a.value() * b.value());
  const Tensor inputs[] = {a, b};
  Tape::record(inputs, out, [a, b](const Matrix& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g * b.value().transpose());
    if (b.requires_grad()) b.accumulate_grad(a.value().transpose() * g);
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    Tensor out(a.value() + b.value());
    const Tensor inputs[] = {a, b};
    Tape::record(inputs, out, [a, b](const Matrix& g) mutable {
      a.accumulate_grad(g);
      b.accumulate_grad(g);
    });
    return out;
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Matrix v = a.value();
    v.rowwise() += b.value().row(0);
    Tensor out(std::move(v));
    const Tensor inputs[] = {a, b};
    Tape::record(inputs, out, [a, b](const Matrix& g) mutable {
      a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(g.colwise().sum());
    });
    return out;
  }
  shape_error("add", a, b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a, b);
  Tensor out(a.value() - b.value());
  const Tensor inputs[] = {a, b};
  Tape::record(inputs, out, [a, b](const Matrix& g) mutable {
    a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(-g);
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("elementwise_mul", a, b);
  Tensor out(a.value().cwiseProduct(b.value()));
  const Tensor inputs[] = {a, b};
  Tape::record(inputs, out, [a, b](const Matrix& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g.cwiseProduct(b.value()));
    if (b.requires_grad()) b.accumulate_grad(g.cwiseProduct(a.value()));
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.value() * factor);
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, factor](const Matrix& g) mutable { x.accumulate_grad(g * factor); });
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Index rows = 0;
  Index cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) shape_error("concat", parts[0], p);
      rows += p.rows();
    } else {
      if (p.rows() != parts[0].rows()) shape_error("concat", parts[0], p);
      cols += p.cols();
    }
  }
  if (axis == 0) cols = parts[0].cols();
  else rows = parts[0].rows();

  Matrix v(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      v.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      v.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  Tensor out(std::move(v));
  std::vector<Tensor> kept(parts.begin(), parts.end());
  Tape::record(parts, out, [kept, axis](const Matrix& g) mutable {
    Index off = 0;
    for (auto& p : kept) {
      if (axis == 0) {
        if (p.requires_grad()) p.accumulate_grad(g.middleRows(off, p.rows()));
        off += p.rows();
      } else {
        if (p.requires_grad()) p.accumulate_grad(g.middleCols(off, p.cols()));
        off += p.cols();
      }
    }
  });
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor sigmoid(const Tensor& x) {
  Matrix y = (1.0 + (-x.value().array()).exp()).inverse().matrix();
  Tensor out(y);
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, y](const Matrix& g) mutable {
    x.accumulate_grad((g.array() * y.array() * (1.0 - y.array())).matrix());
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  Matrix y = x.value().array().tanh().matrix();
  Tensor out(y);
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, y](const Matrix& g) mutable {
    x.accumulate_grad((g.array() * (1.0 - y.array().square())).matrix());
  });
  return out;
}

Tensor softmax(const Tensor& x) {
  Matrix y = x.value();
  const Eigen::VectorXd lse = row_lse(y);
  for (Index r = 0; r < y.rows(); ++r) y.row(r) = (y.row(r).array() - lse(r)).exp().matrix();
  Tensor out(y);
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, y](const Matrix& g) mutable {
    Matrix dx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      dx.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  Matrix y = x.value();
  const Eigen::VectorXd lse = row_lse(y);
  for (Index r = 0; r < y.rows(); ++r) y.row(r).array() -= lse(r);
  Tensor out(y);
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, y](const Matrix& g) mutable {
    Matrix dx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      dx.row(r) = g.row(r) - g.row(r).sum() * y.row(r).array().exp().matrix();
    }
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor log_sum_exp(const Tensor& x) {
  if (x.cols() == 0) shape_error("log_sum_exp", x, "empty rows");
  const Eigen::VectorXd lse = row_lse(x.value());
  Tensor out{Matrix(lse)};
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, lse](const Matrix& g) mutable {
    Matrix dx = x.value();
    for (Index r = 0; r < dx.rows(); ++r) {
      dx.row(r) = g(r, 0) * (dx.row(r).array() - lse(r)).exp().matrix();
    }
    x.accumulate_grad(dx);
  });
  return out;
}

Tensor mean_over_axis(const Tensor& x, int axis) {
  if (x.size() == 0) shape_error("mean_over_axis", x, "empty tensor");
  if (axis == 0) {
    Tensor out(Matrix(x.value().colwise().mean()));
    const Tensor inputs[] = {x};
    Tape::record(inputs, out, [x](const Matrix& g) mutable {
      Matrix dx = g.replicate(x.rows(), 1) / static_cast<double>(x.rows());
      x.accumulate_grad(dx);
    });
    return out;
  }
  if (axis == 1) {
    Tensor out(Matrix(x.value().rowwise().mean()));
    const Tensor inputs[] = {x};
    Tape::record(inputs, out, [x](const Matrix& g) mutable {
      Matrix dx = g.replicate(1, x.cols()) / static_cast<double>(x.cols());
      x.accumulate_grad(dx);
    });
    return out;
  }
  throw ShapeError("mean_over_axis: axis must be 0 or 1");
}

Tensor slice(const Tensor& x, Index row, Index n_rows, Index col, Index n_cols) {
  if (row < 0 || col < 0 || n_rows <= 0 || n_cols <= 0 || row + n_rows > x.rows() ||
      col + n_cols > x.cols()) {
    std::ostringstream os;
    os << "block (" << row << ',' << col << ")+(" << n_rows << 'x' << n_cols << ") out of range";
    shape_error("slice", x, os.str());
  }
  Tensor out(Matrix(x.value().block(row, col, n_rows, n_cols)));
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x, row, n_rows, col, n_cols](const Matrix& g) mutable {
    x.accumulate_grad_block(row, col, g);
  });
  return out;
}

Tensor slice_row(const Tensor& x, Index row) { return slice(x, row, 1, 0, x.cols()); }

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(x.value().sum());
  const Tensor inputs[] = {x};
  Tape::record(inputs, out, [x](const Matrix& g) mutable {
    x.accumulate_grad(Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  Matrix v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(table.rows()) + " rows");
    }
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  Tensor out(std::move(v));
  const Tensor inputs[] = {table};
  std::vector<int> kept(ids.begin(), ids.end());
  Tape::record(inputs, out, [table, kept](const Matrix& g) mutable {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      table.accumulate_grad_block(kept[i], 0, g.row(static_cast<Index>(i)));
    }
  });
  return out;
}

Matrix finite_difference_gradient(const std::function<double()>& f, Tensor& param,
                                  double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_difference_gradient: epsilon must be > 0");
  Matrix grad(param.rows(), param.cols());
  Matrix& v = param.mutable_value();
  for (Index r = 0; r < v.rows(); ++r) {
    for (Index c = 0; c < v.cols(); ++c) {
      const double saved = v(r, c);
      v(r, c) = saved + epsilon;
      const double plus = f();
      v(r, c) = saved - epsilon;
      const double minus = f();
      v(r, c) = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("finite_difference_gradient: non-finite function value");
      }
      grad(r, c) = (plus - minus) / (2.0 * epsilon);
    }
  }
  return grad;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("max_relative_error: shape mismatch");
  }
  if (a.size() == 0) return 0.0;
  const double scale =
      std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace advseg
