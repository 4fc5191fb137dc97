#pragma once

// Dynamic reverse-mode tape over 2-D tensors.
//
// A Tape is rebuilt for every optimisation step: each op evaluates eagerly,
// appends a node, and the tape's node order is therefore a topological order.
// backward() walks it in reverse. Only nodes downstream of a trainable
// parameter or a differentiable variable propagate gradients, so frozen
// networks cost a forward pass plus input gradients only.
//
// Binary elementwise ops broadcast the right operand when it is 1 x 1,
// 1 x n (row), or m x 1 (column). Nothing else broadcasts.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cped/tensor.hpp"

namespace cped::ad {

struct Parameter {
  std::string name;
  Tensor value;
};

class Tape;
struct TapeAccess;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  MatMulNT,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  LeakyRelu,
  Relu,
  Tanh,
  Exp,
  Log,
  Sigmoid,
  Softplus,
  Square,
  Sqrt,
  Sum,
  Mean,
  RowSum,
  ColMean,
  GatherCols,
  CombineCols,
  MulConst,
};

const char* op_name(Op op);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable input.
  Var constant(Tensor value);
  // Differentiable input that is not an optimiser parameter (e.g. dx).
  Var variable(Tensor value);
  // Trainable parameter; its gradient is reported by gradients().
  Var param(Parameter& p);
  // Parameter value used as a constant (frozen network).
  Var frozen(const Parameter& p) { return constant(p.value); }

  // Runs reverse accumulation from `output`, seeded with `seed` (same shape).
  void backward(Var output, const Tensor& seed);
  // Scalar loss convenience: seed 1.
  void backward(Var output);

  // Gradient of the last backward() w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const;
  // Gradients for trainable parameters in the given order (zeros if unreached).
  std::vector<Tensor> gradients(std::span<Parameter* const> params) const;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(int id) const { return nodes_[id].value; }
  Op op(int id) const { return nodes_[id].op; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    double attr = 0.0;
    bool needs_grad = false;
    Tensor value;
    Tensor aux;
    std::vector<std::size_t> index_a;
    std::vector<std::size_t> index_b;
    const Parameter* param = nullptr;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void check(Var v) const;
  void accumulate(int id, const Tensor& g);
  void backprop_node(int id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool has_backward_ = false;

  friend struct TapeAccess;
};

Var matmul(Var a, Var b);     // a[m x k] * b[k x n]
Var matmul_nt(Var a, Var b);  // a[m x k] * b[n x k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var leaky_relu(Var a, double slope);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var softplus(Var a);  // log(1 + e^x), overflow-safe
Var square(Var a);
Var sqrt(Var a);
Var sum(Var a);       // -> 1 x 1
Var mean(Var a);      // -> 1 x 1
Var row_sum(Var a);   // m x n -> m x 1
Var col_mean(Var a);  // m x n -> 1 x n
Var gather_cols(Var a, std::span<const std::size_t> cols);
// Places a's columns at idx_a and b's at idx_b of a new (idx_a + idx_b)-wide tensor.
Var combine_cols(Var a, std::span<const std::size_t> idx_a, Var b,
                 std::span<const std::size_t> idx_b);
Var concat_cols(Var a, Var b);
// Elementwise product with a same-shape constant (masks, dropout).
Var mul_const(Var a, const Tensor& c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// log(sigmoid(x)) = -softplus(-x)
inline Var log_sigmoid(Var a) { return scale(softplus(scale(a, -1.0)), -1.0); }

}  // namespace cped::ad
