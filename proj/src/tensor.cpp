#include "fadingid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fadingid/errors.hpp"
#include "fadingid/kernels.hpp"
#include "fadingid/linalg.hpp"

namespace fadingid {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(values_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> row_major) {
  return Tensor({rows, cols}, std::vector<double>(row_major));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.size() > 2) throw DimensionError("matrix view of rank-3 tensor " + shape_string(shape_));
  return shape_.empty() ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() > 2) throw DimensionError("matrix view of rank-3 tensor " + shape_string(shape_));
  return shape_.size() == 2 ? shape_[1] : 1;
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

namespace ad {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), false});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(loss.value().shape()));
  }
  std::vector<Tensor> grads;
  grads.reserve(nodes_.size());
  for (const Node& n : nodes_) grads.emplace_back(n.value.shape());
  std::vector<char> reached(nodes_.size(), 0);
  grads[loss.id()][0] = 1.0;
  reached[loss.id()] = 1;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!reached[id]) continue;
    const Node& node = nodes_[id];
    if (!node.backward) continue;
    for (std::size_t p : node.parents) reached[p] = 1;
    node.backward(node.value, grads[id], grads);
  }
  return Gradients(std::move(grads));
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()));
  }
  Shape out_shape = bv.rank() == 1 ? Shape{m} : Shape{m, n};
  Tensor out(out_shape);
  kernels::gemm_nn(m, n, k, av.values(), bv.values(), out.values(), false);
  const std::size_t ia = a.id(), ib = b.id();
  Tape* tp = &tape;
  return tape.record(std::move(out), {ia, ib},
                     [tp, ia, ib, m, n, k](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                       const Tensor& av = tp->value(ia);
                       const Tensor& bv = tp->value(ib);
                       kernels::gemm_nt(m, k, n, g.values(), bv.values(), grads[ia].values(), true);
                       kernels::gemm_tn(k, n, m, av.values(), g.values(), grads[ib].values(), true);
                     });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  Tape& tape = same_tape(x, w);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  if (wv.dim(1) != in) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  if (bv.size() != out) {
    throw DimensionError("linear: bias " + shape_string(bv.shape()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  Tensor y({batch, out});
  kernels::gemm_nt(batch, out, in, xv.values(), wv.values(), y.values(), false);
  for (std::size_t r = 0; r < batch; ++r) {
    double* row = y.values().data() + r * out;
    for (std::size_t c = 0; c < out; ++c) row[c] += bv[c];
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  Tape* tp = &tape;
  return tape.record(
      std::move(y), {ix, iw, ib},
      [tp, ix, iw, ib, batch, in, out](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
        kernels::gemm_nn(batch, in, out, g.values(), tp->value(iw).values(), grads[ix].values(), true);
        kernels::gemm_tn(out, in, batch, g.values(), tp->value(ix).values(), grads[iw].values(), true);
        std::span<double> gb = grads[ib].values();
        for (std::size_t r = 0; r < batch; ++r) {
          const double* row = g.values().data() + r * out;
          for (std::size_t c = 0; c < out; ++c) gb[c] += row[c];
        }
      });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, m, n](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                           Tensor& ga = grads[ia];
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g.at(j, i);
                         });
}

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) {
    throw DimensionError("reshape: " + shape_string(a.value().shape()) + " to " + shape_string(shape));
  }
  const std::size_t ia = a.id();
  return a.tape().record(a.value().reshaped(std::move(shape)), {ia},
                         [ia](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                           kernels::axpy(1.0, g.values(), grads[ia].values());
                         });
}

// ---- elementwise -----------------------------------------------------------

Var apply(Elementwise op, const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool a_scalar = !same && av.size() == 1;
  const bool b_scalar = !same && bv.size() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError("elementwise: shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()) + " do not broadcast");
  }
  const Tensor& big = a_scalar ? bv : av;
  const std::size_t n = big.size();
  auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
  Tensor out(big.shape());
  switch (op) {
    case Elementwise::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) + bi(i);
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) - bi(i);
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) * bi(i);
      break;
    case Elementwise::div:
      for (std::size_t i = 0; i < n; ++i) {
        if (bi(i) == 0.0) throw DomainError("div: division by zero");
        out[i] = ai(i) / bi(i);
      }
      break;
    default:
      throw ContractError("elementwise: op is not binary");
  }
  const std::size_t ia = a.id(), ib = b.id();
  Tape* tp = &tape;
  return tape.record(
      std::move(out), {ia, ib},
      [tp, op, ia, ib, a_scalar, b_scalar, n](const Tensor&, const Tensor& g,
                                               std::vector<Tensor>& grads) {
        const Tensor& av = tp->value(ia);
        const Tensor& bv = tp->value(ib);
        Tensor& ga = grads[ia];
        Tensor& gb = grads[ib];
        for (std::size_t i = 0; i < n; ++i) {
          const double x = a_scalar ? av[0] : av[i];
          const double y = b_scalar ? bv[0] : bv[i];
          double da = 0.0, db = 0.0;
          switch (op) {
            case Elementwise::add:
              da = g[i];
              db = g[i];
              break;
            case Elementwise::sub:
              da = g[i];
              db = -g[i];
              break;
            case Elementwise::mul:
              da = g[i] * y;
              db = g[i] * x;
              break;
            case Elementwise::div:
              da = g[i] / y;
              db = -g[i] * x / (y * y);
              break;
            default:
              break;
          }
          ga[a_scalar ? 0 : i] += da;
          gb[b_scalar ? 0 : i] += db;
        }
      });
}

Var apply(Elementwise op, const Var& a) {
  const Tensor& av = a.value();
  const std::size_t n = av.size();
  Tensor out(av.shape());
  switch (op) {
    case Elementwise::tanh:
      kernels::tanh_forward(av.values(), out.values());
      break;
    case Elementwise::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      break;
    case Elementwise::elu:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0 ? av[i] : std::expm1(av[i]);
      break;
    case Elementwise::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid_value(av[i]);
      break;
    case Elementwise::exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(av[i]);
      break;
    case Elementwise::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(av[i] > 0.0)) {
          throw DomainError("log: non-positive argument " + std::to_string(av[i]) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::log(av[i]);
      }
      break;
    case Elementwise::square:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * av[i];
      break;
    case Elementwise::softplus:
      for (std::size_t i = 0; i < n; ++i) out[i] = softplus_value(av[i]);
      break;
    default:
      throw ContractError("elementwise: op is not unary");
  }
  const std::size_t ia = a.id();
  Tape* tp = &a.tape();
  return a.tape().record(
      std::move(out), {ia},
      [tp, op, ia, n](const Tensor& y, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x = tp->value(ia);
        Tensor& gx = grads[ia];
        switch (op) {
          case Elementwise::tanh:
            kernels::tanh_backward(y.values(), g.values(), gx.values());
            break;
          case Elementwise::relu:
            for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
            break;
          case Elementwise::elu:
            for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : g[i] * (y[i] + 1.0);
            break;
          case Elementwise::sigmoid:
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
          case Elementwise::exp:
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
            break;
          case Elementwise::log:
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / x[i];
            break;
          case Elementwise::square:
            for (std::size_t i = 0; i < n; ++i) gx[i] += 2.0 * g[i] * x[i];
            break;
          case Elementwise::softplus:
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * sigmoid_value(x[i]);
            break;
          default:
            break;
        }
      });
}

Var add(const Var& a, const Var& b) { return apply(Elementwise::add, a, b); }
Var sub(const Var& a, const Var& b) { return apply(Elementwise::sub, a, b); }
Var mul(const Var& a, const Var& b) { return apply(Elementwise::mul, a, b); }
Var div(const Var& a, const Var& b) { return apply(Elementwise::div, a, b); }
Var tanh(const Var& a) { return apply(Elementwise::tanh, a); }
Var relu(const Var& a) { return apply(Elementwise::relu, a); }
Var elu(const Var& a) { return apply(Elementwise::elu, a); }
Var sigmoid(const Var& a) { return apply(Elementwise::sigmoid, a); }
Var exp(const Var& a) { return apply(Elementwise::exp, a); }
Var log(const Var& a) { return apply(Elementwise::log, a); }
Var square(const Var& a) { return apply(Elementwise::square, a); }
Var softplus(const Var& a) { return apply(Elementwise::softplus, a); }

Var scale(const Var& a, double c) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = c * av[i];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, c](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                           kernels::axpy(c, g.values(), grads[ia].values());
                         });
}

// ---- reductions ------------------------------------------------------------

Var reduce(Reduce op, const Var& t, int axis) {
  const Tensor& tv = t.value();
  const std::size_t it = t.id();
  if (axis < 0) {
    const double n = static_cast<double>(tv.size());
    double acc = 0.0;
    for (double v : tv.values()) acc += v;
    const double factor = op == Reduce::mean ? 1.0 / n : 1.0;
    return t.tape().record(Tensor::scalar(acc * factor), {it},
                           [it, factor](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                             const double gv = g[0] * factor;
                             for (double& x : grads[it].values()) x += gv;
                           });
  }
  if (tv.rank() == 0 || static_cast<std::size_t>(axis) >= tv.rank() || tv.rank() > 2) {
    throw DimensionError("reduce: invalid axis " + std::to_string(axis) + " for shape " +
                         shape_string(tv.shape()));
  }
  const std::size_t rows = tv.rows(), cols = tv.cols();
  const bool over_rows = axis == 0;
  const std::size_t count = over_rows ? rows : cols;
  Shape out_shape = tv.rank() == 1 ? Shape{} : Shape{over_rows ? cols : rows};
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[over_rows ? c : r] += tv[r * cols + c];
  const double factor = op == Reduce::mean ? 1.0 / static_cast<double>(count) : 1.0;
  for (double& v : out.values()) v *= factor;
  return t.tape().record(
      std::move(out), {it},
      [it, rows, cols, over_rows, factor](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
        Tensor& gt = grads[it];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gt[r * cols + c] += factor * g[over_rows ? c : r];
      });
}

Var sum(const Var& t, int axis) { return reduce(Reduce::sum, t, axis); }
Var mean(const Var& t, int axis) { return reduce(Reduce::mean, t, axis); }

// ---- structural ------------------------------------------------------------

Var concat_columns(const std::vector<Var>& columns) {
  if (columns.empty()) throw ContractError("concat_columns: no columns");
  Tape& tape = columns.front().tape();
  const std::size_t batch = columns.front().value().rows();
  const std::size_t k = columns.size();
  std::vector<std::size_t> ids;
  ids.reserve(k);
  for (const Var& c : columns) {
    same_tape(columns.front(), c);
    if (c.value().rows() != batch || c.value().cols() != 1) {
      throw DimensionError("concat_columns: column " + shape_string(c.value().shape()) +
                           " is not " + std::to_string(batch) + "x1");
    }
    ids.push_back(c.id());
  }
  Tensor out({batch, k});
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& cv = columns[j].value();
    for (std::size_t r = 0; r < batch; ++r) out[r * k + j] = cv[r];
  }
  std::vector<std::size_t> parents = ids;
  return tape.record(std::move(out), std::move(parents),
                     [ids, batch, k](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                       for (std::size_t j = 0; j < k; ++j) {
                         Tensor& gc = grads[ids[j]];
                         for (std::size_t r = 0; r < batch; ++r) gc[r] += g[r * k + j];
                       }
                     });
}

Var column_affine(const Var& x, std::span<const double> shift, std::span<const double> mul) {
  const Tensor& xv = x.value();
  require_matrix(xv, "column_affine");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (shift.size() != cols || mul.size() != cols) {
    throw DimensionError("column_affine: " + std::to_string(shift.size()) + " coefficients for " +
                         shape_string(xv.shape()));
  }
  std::vector<double> m(mul.begin(), mul.end());
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (xv[r * cols + c] - shift[c]) * m[c];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, rows, cols, m](const Tensor&, const Tensor& g, std::vector<Tensor>& grads) {
                           Tensor& gx = grads[ix];
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c)
                               gx[r * cols + c] += g[r * cols + c] * m[c];
                         });
}

Var standardize_columns(const Var& x, double eps, ColumnStats* stats) {
  const Tensor& xv = x.value();
  require_matrix(xv, "standardize_columns");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (rows == 0) throw ContractError("standardize_columns: empty batch");
  const double inv_n = 1.0 / static_cast<double>(rows);
  std::vector<double> mu(cols, 0.0), var(cols, 0.0), inv_std(cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mu[c] += xv[r * cols + c];
  for (double& m : mu) m *= inv_n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv[r * cols + c] - mu[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < cols; ++c) {
    var[c] *= inv_n;
    inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = (xv[r * cols + c] - mu[c]) * inv_std[c];
  if (stats != nullptr) {
    stats->mean = mu;
    stats->var = var;
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {ix},
      [ix, rows, cols, inv_n, inv_std](const Tensor& y, const Tensor& g, std::vector<Tensor>& grads) {
        // dx = inv_std * (g - mean(g) - y * mean(g * y)), per column.
        std::vector<double> mg(cols, 0.0), mgy(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            mg[c] += g[r * cols + c];
            mgy[c] += g[r * cols + c] * y[r * cols + c];
          }
        Tensor& gx = grads[ix];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gx[i] += inv_std[c] * (g[i] - mg[c] * inv_n - y[i] * mgy[c] * inv_n);
          }
      });
}

// ---- factorizations --------------------------------------------------------

Var logdet_spd(const Var& m) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || mv.dim(0) != mv.dim(1)) {
    throw DimensionError("logdet_spd: expected a square matrix, got " + shape_string(mv.shape()));
  }
  const double asym = linalg::asymmetry(mv);
  if (asym > 1e-9) {
    throw ContractError("logdet_spd: matrix is not symmetric (max asymmetry " +
                        std::to_string(asym) + ")");
  }
  const Tensor chol = linalg::cholesky(mv);
  const double value = linalg::logdet_from_cholesky(chol);
  Tensor inverse = linalg::spd_inverse(chol);
  const std::size_t im = m.id();
  return m.tape().record(Tensor::scalar(value), {im},
                         [im, inverse = std::move(inverse)](const Tensor&, const Tensor& g,
                                                            std::vector<Tensor>& grads) {
                           kernels::axpy(g[0], inverse.values(), grads[im].values());
                         });
}

}  // namespace ad
}  // namespace fadingid
