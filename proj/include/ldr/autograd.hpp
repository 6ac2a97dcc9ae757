#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Graph is built once per step: leaves are declared with a shape, interior
// nodes are recorded by the free functions below (shapes are checked at build
// time), leaf values are bound, then forward() evaluates every node in
// insertion order and backward() walks the nodes in reverse.  Insertion order
// is a topological order because a node can only reference earlier nodes.
//
// A leaf used by several consumers (e.g. encoder weights in f(g(f(x)))) gets
// the sum of the cotangents from all of its uses.

#include "ldr/core.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ldr::ad {

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  AddColumn,  // matrix + column vector broadcast over columns
  Sub,
  Scale,
  AddIdentity,
  Transpose,
  Hadamard,
  Activation,
  ConcatCols,
  NormalizeCols,
  LogdetSpd,
  GatherCols,
  Sum,
  LogSoftmaxCols,
  LogSigmoid,
};

const char* op_name(OpKind op);

enum class Activation : std::uint8_t { None, Relu, LeakyRelu, Tanh, Sigmoid };

const char* activation_name(Activation act);
Activation parse_activation(std::string_view name);

class Graph;

// Lightweight handle to a node. Copyable; only valid while its Graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
  // Convenience for 1x1 nodes.
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

// Gradients of the root w.r.t. every trainable leaf reached by backward().
class Gradient {
 public:
  bool contains(Var leaf) const;
  const Matrix& operator[](Var leaf) const;

 private:
  friend class Graph;
  std::vector<Matrix> grads_;
  std::vector<bool> present_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Trainable leaf; receives a gradient.
  Var parameter(Index rows, Index cols, std::string name = {});
  // Non-trainable leaf; must be bound before forward().
  Var input(Index rows, Index cols, std::string name = {});
  // Non-trainable leaf bound immediately.
  Var constant(const Matrix& value, std::string name = {});
  // Trainable leaf bound immediately.
  Var parameter(const Matrix& value, std::string name = {});

  void bind(Var leaf, const Matrix& value);

  // Evaluates every node. Returns the value of the last node recorded.
  const Matrix& forward();

  // Requires a prior forward() on the current bindings; root must be 1x1.
  Gradient backward(Var root, double cotangent = 1.0);

  bool evaluated() const { return evaluated_; }
  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(Var v) const;
  Index rows(Var v) const { return node(v).rows; }
  Index cols(Var v) const { return node(v).cols; }
  bool requires_grad(Var v) const { return node(v).needs_grad; }
  std::string describe(Var v) const;

  // Node recording; use the free functions below instead of calling directly.
  struct Node {
    OpKind op = OpKind::Leaf;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint8_t arity = 0;
    Index rows = 0;
    Index cols = 0;
    double scalar = 0.0;
    Activation act = Activation::None;
    std::vector<Index> index;
    bool trainable = false;
    bool needs_grad = false;
    bool bound = false;
    std::string name;
    Matrix value;
    Matrix aux;  // per-op cache: inverse for logdet, norms for normalize
  };

  Var record(Node node);
  const Node& node(Var v) const;

 private:
  void evaluate(Node& n);
  void propagate(const Node& n, const Matrix& g, std::vector<Matrix>& grads,
                 std::vector<bool>& has);
  std::string label(std::uint32_t id) const;

  std::vector<Node> nodes_;
  bool evaluated_ = false;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_column(Var a, Var column);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var add_identity(Var square, double s = 1.0);
Var transpose(Var a);
Var hadamard(Var a, Var b);
Var activate(Var a, Activation act, double negative_slope = 0.2);
Var concat_cols(Var a, Var b);
Var normalize_cols(Var a);
// log det of a symmetric positive definite matrix via Cholesky; the input is
// symmetrized before factorizing.
Var logdet_spd(Var m);
Var gather_cols(Var a, std::vector<Index> columns);
Var sum(Var a);
Var log_softmax_cols(Var a);
Var log_sigmoid(Var a);

inline Var operator*(Var a, Var b) { return matmul(a, b); }
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// Plain log det of an SPD matrix (symmetrized, Cholesky). Throws
// NotPositiveDefinite on failure.
double logdet_spd_value(const Matrix& m);

}  // namespace ldr::ad
