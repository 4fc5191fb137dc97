#include "cped/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cped/error.hpp"
#include "cped/simd/kernels.hpp"

namespace cped::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::ColMean: return "col_mean";
    case Op::GatherCols: return "gather_cols";
    case Op::CombineCols: return "combine_cols";
    case Op::MulConst: return "mul_const";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!valid()) throw ValidationError("use of an empty Var");
  return tape_->value(id_);
}

namespace {

enum class Bcast { Same, Scalar, Row, Col };

Bcast broadcast_kind(const Tensor& lhs, const Tensor& rhs, const char* what) {
  if (lhs.same_shape(rhs)) return Bcast::Same;
  if (rhs.rows() == 1 && rhs.cols() == 1) return Bcast::Scalar;
  if (rhs.rows() == 1 && rhs.cols() == lhs.cols()) return Bcast::Row;
  if (rhs.cols() == 1 && rhs.rows() == lhs.rows()) return Bcast::Col;
  throw ValidationError(std::string(what) + ": shape mismatch " + lhs.shape_string() + " vs " +
                        rhs.shape_string());
}

inline std::size_t rhs_index(Bcast kind, std::size_t r, std::size_t c, std::size_t cols) {
  switch (kind) {
    case Bcast::Same: return r * cols + c;
    case Bcast::Scalar: return 0;
    case Bcast::Row: return c;
    case Bcast::Col: return r;
  }
  return 0;
}

// Sums g (lhs-shaped) down to the rhs shape implied by kind.
Tensor reduce_to(Bcast kind, const Tensor& g, const Tensor& rhs_shape) {
  if (kind == Bcast::Same) return g;
  Tensor out(rhs_shape.rows(), rhs_shape.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) out[rhs_index(kind, r, c, g.cols())] += g(r, c);
  }
  return out;
}

inline double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

struct TapeAccess {
  using Node = Tape::Node;
  static Var push(Tape& t, Node n) { return t.push(std::move(n)); }
  static const Node& node(Var v) { return v.tape()->node(v); }
  static Tape& same_tape(Var a, Var b, const char* what) {
    if (!a.valid() || !b.valid()) throw ValidationError(std::string(what) + ": empty operand");
    if (a.tape() != b.tape()) throw ValidationError(std::string(what) + ": operands on different tapes");
    return *a.tape();
  }
  static Tape& tape_of(Var a, const char* what) {
    if (!a.valid()) throw ValidationError(std::string(what) + ": empty operand");
    return *a.tape();
  }
  static bool ng(Var v) { return node(v).needs_grad; }
};

Var Tape::push(Node node) {
  if (!node.value.all_finite()) {
    throw NumericError(std::string("non-finite output of ") + op_name(node.op) + " " +
                       node.value.shape_string());
  }
  nodes_.push_back(std::move(node));
  has_backward_ = false;
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tape::Node& Tape::node(Var v) const {
  check(v);
  return nodes_[v.id()];
}

void Tape::check(Var v) const {
  if (v.tape() != this || v.id() < 0 || v.id() >= static_cast<int>(nodes_.size())) {
    throw ValidationError("Var does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  return push(std::move(n));
}

void Tape::backward(Var output) { backward(output, Tensor(1, 1, 1.0)); }

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) throw ValidationError("backward on an empty tape (no forward pass recorded)");
  check(output);
  const Node& out = nodes_[output.id()];
  if (!seed.same_shape(out.value)) {
    throw ValidationError("backward seed shape " + seed.shape_string() + " does not match output " +
                          out.value.shape_string());
  }
  require_finite(seed, "backward seed");
  grads_.assign(nodes_.size(), Tensor());
  if (out.needs_grad) grads_[output.id()] = seed;
  for (int id = output.id(); id >= 0; --id) {
    if (!nodes_[id].needs_grad || grads_[id].empty()) continue;
    if (nodes_[id].op != Op::Leaf) backprop_node(id);
  }
  has_backward_ = true;
}

Tensor Tape::grad(Var v) const {
  check(v);
  const Tensor& value = nodes_[v.id()].value;
  if (!has_backward_ || grads_[v.id()].empty()) return Tensor(value.rows(), value.cols());
  return grads_[v.id()];
}

std::vector<Tensor> Tape::gradients(std::span<Parameter* const> params) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) out.emplace_back(p->value.rows(), p->value.cols());
  if (!has_backward_) return out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.param == nullptr || grads_[id].empty()) continue;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i] == n.param) cped::simd::kernels().axpy(1.0, grads_[id].ptr(), out[i].ptr(), out[i].size());
    }
  }
  return out;
}

void Tape::accumulate(int id, const Tensor& g) {
  if (id < 0 || !nodes_[id].needs_grad) return;
  Tensor& dst = grads_[id];
  if (dst.empty()) {
    dst = g;
  } else {
    simd::kernels().axpy(1.0, g.ptr(), dst.ptr(), dst.size());
  }
}

void Tape::backprop_node(int id) {
  const Node& n = nodes_[id];
  const Tensor& g = grads_[id];
  const Tensor& y = n.value;
  auto need = [&](int input) { return input >= 0 && nodes_[input].needs_grad; };
  auto unary = [&](auto&& derivative) {
    if (!need(n.a)) return;
    const Tensor& x = nodes_[n.a].value;
    Tensor d(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = g[i] * derivative(x[i], y[i]);
    accumulate(n.a, d);
  };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
      if (need(n.a)) {
        Tensor da(m, k);
        simd::gemm_nt(g.ptr(), b.ptr(), da.ptr(), m, cols, k, false);
        accumulate(n.a, da);
      }
      if (need(n.b)) {
        Tensor db(k, cols);
        simd::gemm_tn(a.ptr(), g.ptr(), db.ptr(), k, m, cols, false);
        accumulate(n.b, db);
      }
      break;
    }
    case Op::MatMulNT: {
      // y[m x n] = a[m x k] * b[n x k]^T
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      const std::size_t m = a.rows(), k = a.cols(), cols = b.rows();
      if (need(n.a)) {
        Tensor da(m, k);
        simd::kernels().gemm(g.ptr(), b.ptr(), da.ptr(), m, cols, k, false);
        accumulate(n.a, da);
      }
      if (need(n.b)) {
        Tensor db(cols, k);
        simd::gemm_tn(g.ptr(), a.ptr(), db.ptr(), cols, m, k, false);
        accumulate(n.b, db);
      }
      break;
    }
    case Op::Add:
    case Op::Sub: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      const Bcast kind = broadcast_kind(a, b, op_name(n.op));
      if (need(n.a)) accumulate(n.a, g);
      if (need(n.b)) {
        Tensor db = reduce_to(kind, g, b);
        if (n.op == Op::Sub) {
          for (double& v : db.data()) v = -v;
        }
        accumulate(n.b, db);
      }
      break;
    }
    case Op::Mul: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      const Bcast kind = broadcast_kind(a, b, "mul");
      const std::size_t cols = a.cols();
      if (need(n.a)) {
        Tensor da(a.rows(), cols);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            da(r, c) = g(r, c) * b[rhs_index(kind, r, c, cols)];
          }
        }
        accumulate(n.a, da);
      }
      if (need(n.b)) {
        Tensor ga(a.rows(), cols);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] = g[i] * a[i];
        accumulate(n.b, reduce_to(kind, ga, b));
      }
      break;
    }
    case Op::Scale: {
      const double c = n.attr;
      unary([c](double, double) { return c; });
      break;
    }
    case Op::AddScalar:
      unary([](double, double) { return 1.0; });
      break;
    case Op::LeakyRelu: {
      const double slope = n.attr;
      unary([slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
      break;
    }
    case Op::Relu:
      unary([](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
      break;
    case Op::Tanh:
      unary([](double, double t) { return 1.0 - t * t; });
      break;
    case Op::Exp:
      unary([](double, double e) { return e; });
      break;
    case Op::Log:
      unary([](double x, double) { return 1.0 / x; });
      break;
    case Op::Sigmoid:
      unary([](double, double s) { return s * (1.0 - s); });
      break;
    case Op::Softplus:
      unary([](double x, double) { return sigmoid_value(x); });
      break;
    case Op::Square:
      unary([](double x, double) { return 2.0 * x; });
      break;
    case Op::Sqrt:
      unary([](double, double s) { return 0.5 / s; });
      break;
    case Op::Sum:
    case Op::Mean: {
      if (!need(n.a)) break;
      const Tensor& x = nodes_[n.a].value;
      const double v = n.op == Op::Sum ? g.item() : g.item() / static_cast<double>(x.size());
      accumulate(n.a, Tensor(x.rows(), x.cols(), v));
      break;
    }
    case Op::RowSum: {
      if (!need(n.a)) break;
      const Tensor& x = nodes_[n.a].value;
      Tensor d(x.rows(), x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) d(r, c) = g(r, 0);
      }
      accumulate(n.a, d);
      break;
    }
    case Op::ColMean: {
      if (!need(n.a)) break;
      const Tensor& x = nodes_[n.a].value;
      Tensor d(x.rows(), x.cols());
      const double inv = 1.0 / static_cast<double>(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) d(r, c) = g(0, c) * inv;
      }
      accumulate(n.a, d);
      break;
    }
    case Op::GatherCols: {
      if (!need(n.a)) break;
      const Tensor& x = nodes_[n.a].value;
      Tensor d(x.rows(), x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t j = 0; j < n.index_a.size(); ++j) d(r, n.index_a[j]) += g(r, j);
      }
      accumulate(n.a, d);
      break;
    }
    case Op::CombineCols: {
      auto scatter_back = [&](int input, const std::vector<std::size_t>& idx) {
        if (!need(input)) return;
        const Tensor& x = nodes_[input].value;
        Tensor d(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t j = 0; j < idx.size(); ++j) d(r, j) = g(r, idx[j]);
        }
        accumulate(input, d);
      };
      scatter_back(n.a, n.index_a);
      scatter_back(n.b, n.index_b);
      break;
    }
    case Op::MulConst: {
      if (!need(n.a)) break;
      Tensor d(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * n.aux[i];
      accumulate(n.a, d);
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Op constructors

Var matmul(Var a, Var b) {
  Tape& t = TapeAccess::same_tape(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.cols() != w.rows()) {
    throw ValidationError("matmul: shape mismatch " + x.shape_string() + " * " + w.shape_string());
  }
  TapeAccess::Node n;
  n.op = Op::MatMul;
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = TapeAccess::ng(a) || TapeAccess::ng(b);
  n.value = Tensor(x.rows(), w.cols());
  simd::kernels().gemm(x.ptr(), w.ptr(), n.value.ptr(), x.rows(), x.cols(), w.cols(), false);
  return TapeAccess::push(t, std::move(n));
}

Var matmul_nt(Var a, Var b) {
  Tape& t = TapeAccess::same_tape(a, b, "matmul_nt");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.cols() != w.cols()) {
    throw ValidationError("matmul_nt: shape mismatch " + x.shape_string() + " * " +
                          w.shape_string() + "^T");
  }
  TapeAccess::Node n;
  n.op = Op::MatMulNT;
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = TapeAccess::ng(a) || TapeAccess::ng(b);
  n.value = Tensor(x.rows(), w.rows());
  simd::gemm_nt(x.ptr(), w.ptr(), n.value.ptr(), x.rows(), x.cols(), w.rows(), false);
  return TapeAccess::push(t, std::move(n));
}

Var elementwise(Var a, Var b, Op op) {
  Tape& t = TapeAccess::same_tape(a, b, op_name(op));
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Bcast kind = broadcast_kind(x, y, op_name(op));
  TapeAccess::Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = TapeAccess::ng(a) || TapeAccess::ng(b);
  n.value = Tensor(x.rows(), x.cols());
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double lhs = x(r, c);
      const double rhs = y[rhs_index(kind, r, c, cols)];
      n.value(r, c) = op == Op::Add ? lhs + rhs : op == Op::Sub ? lhs - rhs : lhs * rhs;
    }
  }
  return TapeAccess::push(t, std::move(n));
}

Var add(Var a, Var b) { return elementwise(a, b, Op::Add); }
Var sub(Var a, Var b) { return elementwise(a, b, Op::Sub); }
Var mul(Var a, Var b) { return elementwise(a, b, Op::Mul); }

Var unary(Var a, Op op, double attr) {
  Tape& t = TapeAccess::tape_of(a, op_name(op));
  const Tensor& x = a.value();
  TapeAccess::Node n;
  n.op = op;
  n.a = a.id();
  n.attr = attr;
  n.needs_grad = TapeAccess::ng(a);
  n.value = Tensor(x.rows(), x.cols());
  double* out = n.value.ptr();
  const double* in = x.ptr();
  const std::size_t size = x.size();
  switch (op) {
    case Op::Scale:
      for (std::size_t i = 0; i < size; ++i) out[i] = attr * in[i];
      break;
    case Op::AddScalar:
      for (std::size_t i = 0; i < size; ++i) out[i] = in[i] + attr;
      break;
    case Op::LeakyRelu:
      for (std::size_t i = 0; i < size; ++i) out[i] = in[i] > 0.0 ? in[i] : attr * in[i];
      break;
    case Op::Relu:
      for (std::size_t i = 0; i < size; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case Op::Tanh:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::tanh(in[i]);
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::exp(in[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::log(in[i]);
      break;
    case Op::Sigmoid:
      for (std::size_t i = 0; i < size; ++i) out[i] = sigmoid_value(in[i]);
      break;
    case Op::Softplus:
      for (std::size_t i = 0; i < size; ++i) out[i] = softplus_value(in[i]);
      break;
    case Op::Square:
      for (std::size_t i = 0; i < size; ++i) out[i] = in[i] * in[i];
      break;
    case Op::Sqrt:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::sqrt(in[i]);
      break;
    default:
      throw ValidationError(std::string("not a unary op: ") + op_name(op));
  }
  return TapeAccess::push(t, std::move(n));
}

Var scale(Var a, double c) { return unary(a, Op::Scale, c); }
Var add_scalar(Var a, double c) { return unary(a, Op::AddScalar, c); }
Var leaky_relu(Var a, double slope) { return unary(a, Op::LeakyRelu, slope); }
Var relu(Var a) { return unary(a, Op::Relu, 0.0); }
Var tanh(Var a) { return unary(a, Op::Tanh, 0.0); }
Var exp(Var a) { return unary(a, Op::Exp, 0.0); }
Var log(Var a) { return unary(a, Op::Log, 0.0); }
Var sigmoid(Var a) { return unary(a, Op::Sigmoid, 0.0); }
Var softplus(Var a) { return unary(a, Op::Softplus, 0.0); }
Var square(Var a) { return unary(a, Op::Square, 0.0); }
Var sqrt(Var a) { return unary(a, Op::Sqrt, 0.0); }

namespace {

Var reduction(Var a, Op op) {
  Tape& t = TapeAccess::tape_of(a, op_name(op));
  const Tensor& x = a.value();
  if (x.empty()) throw ValidationError(std::string(op_name(op)) + " of an empty tensor");
  TapeAccess::Node n;
  n.op = op;
  n.a = a.id();
  n.needs_grad = TapeAccess::ng(a);
  switch (op) {
    case Op::Sum:
    case Op::Mean: {
      double s = 0.0;
      for (double v : x.data()) s += v;
      n.value = Tensor(1, 1, op == Op::Sum ? s : s / static_cast<double>(x.size()));
      break;
    }
    case Op::RowSum: {
      n.value = Tensor(x.rows(), 1);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row_span(r)) s += v;
        n.value(r, 0) = s;
      }
      break;
    }
    case Op::ColMean: {
      n.value = Tensor(1, x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) n.value(0, c) += x(r, c);
      }
      for (double& v : n.value.data()) v /= static_cast<double>(x.rows());
      break;
    }
    default:
      throw ValidationError("not a reduction");
  }
  return TapeAccess::push(t, std::move(n));
}

}  // namespace

Var sum(Var a) { return reduction(a, Op::Sum); }
Var mean(Var a) { return reduction(a, Op::Mean); }
Var row_sum(Var a) { return reduction(a, Op::RowSum); }
Var col_mean(Var a) { return reduction(a, Op::ColMean); }

Var gather_cols(Var a, std::span<const std::size_t> cols) {
  Tape& t = TapeAccess::tape_of(a, "gather_cols");
  const Tensor& x = a.value();
  TapeAccess::Node n;
  n.op = Op::GatherCols;
  n.a = a.id();
  n.needs_grad = TapeAccess::ng(a);
  n.index_a.assign(cols.begin(), cols.end());
  n.value = Tensor(x.rows(), cols.size());
  for (std::size_t c : cols) {
    if (c >= x.cols()) throw ValidationError("gather_cols: column index out of range");
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) n.value(r, j) = x(r, cols[j]);
  }
  return TapeAccess::push(t, std::move(n));
}

Var combine_cols(Var a, std::span<const std::size_t> idx_a, Var b,
                 std::span<const std::size_t> idx_b) {
  Tape& t = TapeAccess::same_tape(a, b, "combine_cols");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rows() != y.rows() || x.cols() != idx_a.size() || y.cols() != idx_b.size()) {
    throw ValidationError("combine_cols: shape/index mismatch");
  }
  const std::size_t width = idx_a.size() + idx_b.size();
  std::vector<int> seen(width, 0);
  for (std::size_t c : idx_a) {
    if (c >= width || seen[c]++ != 0) throw ValidationError("combine_cols: invalid index set");
  }
  for (std::size_t c : idx_b) {
    if (c >= width || seen[c]++ != 0) throw ValidationError("combine_cols: invalid index set");
  }
  TapeAccess::Node n;
  n.op = Op::CombineCols;
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = TapeAccess::ng(a) || TapeAccess::ng(b);
  n.index_a.assign(idx_a.begin(), idx_a.end());
  n.index_b.assign(idx_b.begin(), idx_b.end());
  n.value = Tensor(x.rows(), width);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < idx_a.size(); ++j) n.value(r, idx_a[j]) = x(r, j);
    for (std::size_t j = 0; j < idx_b.size(); ++j) n.value(r, idx_b[j]) = y(r, j);
  }
  return TapeAccess::push(t, std::move(n));
}

Var concat_cols(Var a, Var b) {
  std::vector<std::size_t> ia(a.cols());
  std::vector<std::size_t> ib(b.cols());
  for (std::size_t i = 0; i < ia.size(); ++i) ia[i] = i;
  for (std::size_t i = 0; i < ib.size(); ++i) ib[i] = ia.size() + i;
  return combine_cols(a, ia, b, ib);
}

Var mul_const(Var a, const Tensor& c) {
  Tape& t = TapeAccess::tape_of(a, "mul_const");
  const Tensor& x = a.value();
  if (!x.same_shape(c)) throw ValidationError("mul_const: shape mismatch");
  TapeAccess::Node n;
  n.op = Op::MulConst;
  n.a = a.id();
  n.needs_grad = TapeAccess::ng(a);
  n.aux = c;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * c[i];
  return TapeAccess::push(t, std::move(n));
}

}  // namespace cped::ad
