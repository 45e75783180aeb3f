#pragma once

// Dense tensors and a define-by-run reverse-mode tape.
//
// `Tensor` is a plain value: a shape and row-major doubles. `Var` is a handle
// to a node recorded on a `Tape`; every operation in this header appends one
// node whose backward closure accumulates into its parents' gradients. A tape
// and all of its Vars belong to one thread.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fadingid {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> row_major);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t dim(std::size_t axis) const;

  // Matrix view of a rank <= 2 tensor: scalars are 1x1, vectors are n x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

namespace ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of every node after a backward pass, indexed by node id.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& operator[](const Var& v) const { return grads_.at(v.id()); }
  const Tensor& at(std::size_t node_id) const { return grads_.at(node_id); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf; receives a gradient.
  Var leaf(Tensor value);
  /// Constant input; its gradient is computed but never needed.
  Var constant(Tensor value);

  /// Reverse sweep from a scalar node. Gradients are reset on entry, so
  /// repeated calls yield identical results and never alter forward values.
  Gradients backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool is_leaf(std::size_t id) const { return nodes_.at(id).leaf; }

  // Records an op node. `backward` receives (output grad, gradient buffers of
  // the whole tape) and adds into the parents' buffers.
  using Backward = std::function<void(const Tensor& out_value, const Tensor& out_grad,
                                      std::vector<Tensor>& grads)>;
  Var record(Tensor value, std::vector<std::size_t> parents, Backward backward);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    Backward backward;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
};

// ---- linear algebra --------------------------------------------------------

/// a[m x k] * b[k x n]. Vectors are treated as column matrices.
Var matmul(const Var& a, const Var& b);
/// x[batch x in] * w[out x in]^T + bias[out], bias broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& bias);
Var transpose(const Var& a);
/// Same values, new shape with the same element count.
Var reshape(const Var& a, Shape shape);

// ---- elementwise -----------------------------------------------------------

enum class Elementwise { add, sub, mul, div, tanh, relu, elu, sigmoid, exp, log, square, softplus };

/// Binary ops accept equal shapes or a single-element operand on either side.
Var apply(Elementwise op, const Var& a, const Var& b);
Var apply(Elementwise op, const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var tanh(const Var& a);
Var relu(const Var& a);
Var elu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var softplus(const Var& a);

/// a * c for a compile-time-known constant c.
Var scale(const Var& a, double c);

// ---- reductions ------------------------------------------------------------

enum class Reduce { sum, mean };

/// Full reduction when axis < 0, otherwise along `axis` of a rank-2 tensor
/// (result shape {cols} for axis 0, {rows} for axis 1).
Var reduce(Reduce op, const Var& t, int axis = -1);
Var sum(const Var& t, int axis = -1);
Var mean(const Var& t, int axis = -1);

// ---- structural ------------------------------------------------------------

/// Concatenates batch x 1 columns into batch x k.
Var concat_columns(const std::vector<Var>& columns);

/// Column-wise (x - shift[j]) * mul[j] with constant per-column coefficients.
Var column_affine(const Var& x, std::span<const double> shift, std::span<const double> mul);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

/// Standardizes each column by its own batch mean and biased variance:
/// (x - mean) / sqrt(var + eps). Gradient flows through the statistics.
Var standardize_columns(const Var& x, double eps, ColumnStats* stats = nullptr);

// ---- factorizations --------------------------------------------------------

/// log det of a symmetric positive-definite matrix via Cholesky.
/// Throws ContractError when asymmetric beyond 1e-9, NumericalError (with the
/// failing pivot) when not positive definite.
Var logdet_spd(const Var& m);

}  // namespace ad
}  // namespace fadingid
