#include "ldr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ldr::ad {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddColumn: return "add-column";
    case OpKind::Sub: return "sub";
    case OpKind::Scale: return "scale";
    case OpKind::AddIdentity: return "add-identity";
    case OpKind::Transpose: return "transpose";
    case OpKind::Hadamard: return "hadamard";
    case OpKind::Activation: return "activation";
    case OpKind::ConcatCols: return "concat-columns";
    case OpKind::NormalizeCols: return "column-normalize";
    case OpKind::LogdetSpd: return "logdet-spd";
    case OpKind::GatherCols: return "gather-columns";
    case OpKind::Sum: return "sum";
    case OpKind::LogSoftmaxCols: return "log-softmax-columns";
    case OpKind::LogSigmoid: return "log-sigmoid";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  for (Activation a : {Activation::None, Activation::Relu, Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid}) {
    if (name == activation_name(a)) return a;
  }
  throw UsageError("unknown activation '" + std::string(name) + "'");
}

const char* activation_name(Activation act) {
  switch (act) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Graph& Var::graph() const {
  if (graph_ == nullptr) throw UsageError("use of a default-constructed Var");
  return *graph_;
}
Index Var::rows() const { return graph().rows(*this); }
Index Var::cols() const { return graph().cols(*this); }
const Matrix& Var::value() const { return graph().value(*this); }
double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a " + shape_str(v) + " node");
  return v(0, 0);
}

bool Gradient::contains(Var leaf) const {
  return leaf.id() < present_.size() && present_[leaf.id()];
}

const Matrix& Gradient::operator[](Var leaf) const {
  if (!contains(leaf)) throw UsageError("no gradient recorded for node #" + std::to_string(leaf.id()));
  return grads_[leaf.id()];
}

Var Graph::parameter(Index rows, Index cols, std::string name) {
  if (rows <= 0 || cols <= 0) throw ShapeError("leaf '" + name + "' has empty shape " + shape_str(rows, cols));
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.trainable = true;
  n.needs_grad = true;
  n.name = std::move(name);
  return record(std::move(n));
}

Var Graph::input(Index rows, Index cols, std::string name) {
  if (rows <= 0 || cols <= 0) throw ShapeError("leaf '" + name + "' has empty shape " + shape_str(rows, cols));
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.name = std::move(name);
  return record(std::move(n));
}

Var Graph::constant(const Matrix& value, std::string name) {
  Var v = input(value.rows(), value.cols(), std::move(name));
  bind(v, value);
  return v;
}

Var Graph::parameter(const Matrix& value, std::string name) {
  Var v = parameter(value.rows(), value.cols(), std::move(name));
  bind(v, value);
  return v;
}

void Graph::bind(Var leaf, const Matrix& value) {
  Node& n = nodes_.at(leaf.id());
  if (n.op != OpKind::Leaf) throw UsageError("bind() on non-leaf " + label(leaf.id()));
  if (value.rows() != n.rows || value.cols() != n.cols) {
    throw ShapeError("bind " + label(leaf.id()) + ": expected " + shape_str(n.rows, n.cols) + ", got " +
                     shape_str(value));
  }
  if (!value.allFinite()) throw NumericalError("bind " + label(leaf.id()) + ": non-finite entries");
  n.value = value;
  n.bound = true;
  evaluated_ = false;
}

Var Graph::record(Node node) {
  if (node.op != OpKind::Leaf) {
    node.needs_grad = nodes_[node.a].needs_grad || (node.arity > 1 && nodes_[node.b].needs_grad);
  }
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id() >= nodes_.size()) throw UsageError("node #" + std::to_string(v.id()) + " is not in this graph");
  return nodes_[v.id()];
}

const Matrix& Graph::value(Var v) const {
  const Node& n = node(v);
  if (n.op == OpKind::Leaf ? !n.bound : !evaluated_) {
    throw UsageError("value of " + label(v.id()) + " requested before forward()");
  }
  return n.value;
}

std::string Graph::label(std::uint32_t id) const {
  const Node& n = nodes_[id];
  std::string s = "node #" + std::to_string(id) + " (" + op_name(n.op);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

std::string Graph::describe(Var v) const { return label(v.id()); }

const Matrix& Graph::forward() {
  if (nodes_.empty()) throw UsageError("forward() on an empty graph");
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == OpKind::Leaf) {
      if (!n.bound) throw UsageError("forward(): " + label(i) + " is unbound");
      continue;
    }
    evaluate(n);
    if (!n.value.allFinite()) throw NumericalError("forward(): " + label(i) + " produced non-finite values");
  }
  evaluated_ = true;
  return nodes_.back().value;
}

namespace {

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

double stable_log_sigmoid(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double min_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

struct Factorized {
  double logdet;
  Matrix inverse;
};

Factorized factor_spd(const Matrix& m, bool want_inverse, const std::string& where) {
  if (m.rows() != m.cols()) throw ShapeError(where + ": logdet of non-square " + shape_str(m));
  const double norm = m.norm();
  const double asym = (m - m.transpose()).norm();
  if (asym > 1e-10 * std::max(norm, 1.0)) {
    throw NumericalError(where + ": matrix is not symmetric (|M - M^T| = " + std::to_string(asym) + ")");
  }
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) {
    const double lam = min_eigenvalue(sym);
    throw NotPositiveDefinite(where + ": Cholesky failed, min eigenvalue " + std::to_string(lam), lam);
  }
  const auto diag = llt.matrixLLT().diagonal();
  double ld = 0.0;
  for (Index i = 0; i < diag.size(); ++i) ld += std::log(diag(i));
  Factorized out{2.0 * ld, {}};
  if (want_inverse) out.inverse = llt.solve(Matrix::Identity(m.rows(), m.cols()));
  return out;
}

}  // namespace

double logdet_spd_value(const Matrix& m) { return factor_spd(m, false, "logdet_spd").logdet; }

void Graph::evaluate(Node& n) {
  const Matrix& A = nodes_[n.a].value;
  switch (n.op) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul:
      n.value.noalias() = A * nodes_[n.b].value;
      break;
    case OpKind::Add:
      n.value = A + nodes_[n.b].value;
      break;
    case OpKind::AddColumn:
      n.value = A.colwise() + nodes_[n.b].value.col(0);
      break;
    case OpKind::Sub:
      n.value = A - nodes_[n.b].value;
      break;
    case OpKind::Scale:
      n.value = n.scalar * A;
      break;
    case OpKind::AddIdentity:
      n.value = A;
      n.value.diagonal().array() += n.scalar;
      break;
    case OpKind::Transpose:
      n.value = A.transpose();
      break;
    case OpKind::Hadamard:
      n.value = A.cwiseProduct(nodes_[n.b].value);
      break;
    case OpKind::Activation:
      switch (n.act) {
        case Activation::None: n.value = A; break;
        case Activation::Relu: n.value = A.cwiseMax(0.0); break;
        case Activation::LeakyRelu: {
          const double s = n.scalar;
          n.value = A.unaryExpr([s](double x) { return leaky(x, s); });
          break;
        }
        case Activation::Tanh: n.value = A.array().tanh().matrix(); break;
        case Activation::Sigmoid: n.value = A.unaryExpr([](double x) { return sigmoid(x); }); break;
      }
      break;
    case OpKind::ConcatCols: {
      const Matrix& B = nodes_[n.b].value;
      n.value.resize(n.rows, n.cols);
      n.value << A, B;
      break;
    }
    case OpKind::NormalizeCols: {
      Vector norms = A.colwise().norm().transpose();
      for (Index j = 0; j < norms.size(); ++j) {
        if (!(norms(j) > 0.0)) {
          throw NumericalError("column-normalize: column " + std::to_string(j) + " has zero norm");
        }
      }
      n.value = A * norms.cwiseInverse().asDiagonal();
      n.aux = norms;
      break;
    }
    case OpKind::LogdetSpd: {
      Factorized f = factor_spd(A, n.needs_grad, "logdet-spd");
      n.value = Matrix::Constant(1, 1, f.logdet);
      n.aux = std::move(f.inverse);
      break;
    }
    case OpKind::GatherCols:
      n.value.resize(n.rows, n.cols);
      for (std::size_t i = 0; i < n.index.size(); ++i) n.value.col(static_cast<Index>(i)) = A.col(n.index[i]);
      break;
    case OpKind::Sum:
      n.value = Matrix::Constant(1, 1, A.sum());
      break;
    case OpKind::LogSoftmaxCols: {
      n.value.resize(n.rows, n.cols);
      for (Index j = 0; j < A.cols(); ++j) {
        const double mx = A.col(j).maxCoeff();
        const double lse = mx + std::log((A.col(j).array() - mx).exp().sum());
        n.value.col(j) = A.col(j).array() - lse;
      }
      break;
    }
    case OpKind::LogSigmoid:
      n.value = A.unaryExpr([](double x) { return stable_log_sigmoid(x); });
      break;
  }
}

Gradient Graph::backward(Var root, double cotangent) {
  const Node& r = node(root);
  if (!evaluated_) throw UsageError("backward() called before forward()");
  if (r.rows != 1 || r.cols != 1) throw ShapeError("backward(): root " + label(root.id()) + " is not scalar");

  std::vector<Matrix> grads(nodes_.size());
  std::vector<bool> has(nodes_.size(), false);
  grads[root.id()] = Matrix::Constant(1, 1, cotangent);
  has[root.id()] = true;

  for (std::uint32_t i = root.id() + 1; i-- > 0;) {
    if (!has[i]) continue;
    const Node& n = nodes_[i];
    if (n.op == OpKind::Leaf || !n.needs_grad) continue;
    propagate(n, grads[i], grads, has);
    grads[i] = Matrix();  // interior cotangents are not needed after use
  }

  Gradient out;
  out.grads_.resize(nodes_.size());
  out.present_.assign(nodes_.size(), false);
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == OpKind::Leaf && nodes_[i].trainable) {
      out.present_[i] = true;
      out.grads_[i] = has[i] ? std::move(grads[i]) : Matrix::Zero(nodes_[i].rows, nodes_[i].cols);
    }
  }
  return out;
}

namespace {

template <typename Expr>
void accumulate(std::vector<Matrix>& grads, std::vector<bool>& has, std::uint32_t id, const Expr& g) {
  if (has[id]) {
    grads[id] += g;
  } else {
    grads[id] = g;
    has[id] = true;
  }
}

}  // namespace

void Graph::propagate(const Node& n, const Matrix& g, std::vector<Matrix>& grads, std::vector<bool>& has) {
  const Node& na = nodes_[n.a];
  const bool ga = na.needs_grad;
  const bool gb = n.arity > 1 && nodes_[n.b].needs_grad;
  const Matrix& A = na.value;

  switch (n.op) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul: {
      const Matrix& B = nodes_[n.b].value;
      if (ga) accumulate(grads, has, n.a, Matrix(g * B.transpose()));
      if (gb) accumulate(grads, has, n.b, Matrix(A.transpose() * g));
      break;
    }
    case OpKind::Add:
      if (ga) accumulate(grads, has, n.a, g);
      if (gb) accumulate(grads, has, n.b, g);
      break;
    case OpKind::AddColumn:
      if (ga) accumulate(grads, has, n.a, g);
      if (gb) accumulate(grads, has, n.b, Matrix(g.rowwise().sum()));
      break;
    case OpKind::Sub:
      if (ga) accumulate(grads, has, n.a, g);
      if (gb) accumulate(grads, has, n.b, Matrix(-g));
      break;
    case OpKind::Scale:
      accumulate(grads, has, n.a, Matrix(n.scalar * g));
      break;
    case OpKind::AddIdentity:
      accumulate(grads, has, n.a, g);
      break;
    case OpKind::Transpose:
      accumulate(grads, has, n.a, Matrix(g.transpose()));
      break;
    case OpKind::Hadamard: {
      const Matrix& B = nodes_[n.b].value;
      if (ga) accumulate(grads, has, n.a, Matrix(g.cwiseProduct(B)));
      if (gb) accumulate(grads, has, n.b, Matrix(g.cwiseProduct(A)));
      break;
    }
    case OpKind::Activation: {
      Matrix d;
      switch (n.act) {
        case Activation::None: d = g; break;
        case Activation::Relu:
          d = g.cwiseProduct(A.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; }));
          break;
        case Activation::LeakyRelu: {
          const double s = n.scalar;
          d = g.cwiseProduct(A.unaryExpr([s](double x) { return x > 0.0 ? 1.0 : s; }));
          break;
        }
        case Activation::Tanh:
          d = g.array() * (1.0 - n.value.array().square());
          break;
        case Activation::Sigmoid:
          d = g.array() * n.value.array() * (1.0 - n.value.array());
          break;
      }
      accumulate(grads, has, n.a, d);
      break;
    }
    case OpKind::ConcatCols:
      if (ga) accumulate(grads, has, n.a, Matrix(g.leftCols(na.cols)));
      if (gb) accumulate(grads, has, n.b, Matrix(g.rightCols(nodes_[n.b].cols)));
      break;
    case OpKind::NormalizeCols: {
      // y = x / |x|  =>  dx = (dy - y (y . dy)) / |x|
      const Matrix& Y = n.value;
      const Eigen::RowVectorXd dots = Y.cwiseProduct(g).colwise().sum();
      Matrix d = (g - Y * dots.asDiagonal()) * n.aux.col(0).cwiseInverse().asDiagonal();
      accumulate(grads, has, n.a, d);
      break;
    }
    case OpKind::LogdetSpd:
      accumulate(grads, has, n.a, Matrix(g(0, 0) * n.aux));
      break;
    case OpKind::GatherCols: {
      Matrix d = Matrix::Zero(na.rows, na.cols);
      for (std::size_t i = 0; i < n.index.size(); ++i) d.col(n.index[i]) += g.col(static_cast<Index>(i));
      accumulate(grads, has, n.a, d);
      break;
    }
    case OpKind::Sum:
      accumulate(grads, has, n.a, Matrix::Constant(na.rows, na.cols, g(0, 0)));
      break;
    case OpKind::LogSoftmaxCols: {
      // dx = dy - softmax * colsum(dy)
      const Matrix soft = n.value.array().exp().matrix();
      const Eigen::RowVectorXd colsum = g.colwise().sum();
      accumulate(grads, has, n.a, Matrix(g - soft * colsum.asDiagonal()));
      break;
    }
    case OpKind::LogSigmoid:
      accumulate(grads, has, n.a, Matrix(g.cwiseProduct(A.unaryExpr([](double x) { return sigmoid(-x); }))));
      break;
  }
}

// ---------------------------------------------------------------------------
// Recording functions

namespace {

Graph& same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw UsageError(std::string(op) + ": operands belong to different graphs");
  return a.graph();
}

Graph::Node unary(OpKind op, Var a, Index rows, Index cols) {
  Graph::Node n;
  n.op = op;
  n.a = a.id();
  n.arity = 1;
  n.rows = rows;
  n.cols = cols;
  return n;
}

Graph::Node binary(OpKind op, Var a, Var b, Index rows, Index cols) {
  Graph::Node n = unary(op, a, rows, cols);
  n.b = b.id();
  n.arity = 2;
  return n;
}

[[noreturn]] void mismatch(const char* op, Var a, Var b) {
  throw ShapeError(std::string(op) + " of " + a.graph().describe(a) + " [" + shape_str(a.rows(), a.cols()) +
                   "] and " + b.graph().describe(b) + " [" + shape_str(b.rows(), b.cols()) +
                   "]: dimension mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, "matmul");
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  return g.record(binary(OpKind::MatMul, a, b, a.rows(), b.cols()));
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch("add", a, b);
  return g.record(binary(OpKind::Add, a, b, a.rows(), a.cols()));
}

Var add_column(Var a, Var column) {
  Graph& g = same_graph(a, column, "add_column");
  if (column.cols() != 1 || column.rows() != a.rows()) mismatch("add_column", a, column);
  return g.record(binary(OpKind::AddColumn, a, column, a.rows(), a.cols()));
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch("sub", a, b);
  return g.record(binary(OpKind::Sub, a, b, a.rows(), a.cols()));
}

Var scale(Var a, double s) {
  Graph::Node n = unary(OpKind::Scale, a, a.rows(), a.cols());
  n.scalar = s;
  return a.graph().record(std::move(n));
}

Var add_identity(Var square, double s) {
  if (square.rows() != square.cols()) {
    throw ShapeError("add_identity on non-square " + square.graph().describe(square));
  }
  Graph::Node n = unary(OpKind::AddIdentity, square, square.rows(), square.cols());
  n.scalar = s;
  return square.graph().record(std::move(n));
}

Var transpose(Var a) { return a.graph().record(unary(OpKind::Transpose, a, a.cols(), a.rows())); }

Var hadamard(Var a, Var b) {
  Graph& g = same_graph(a, b, "hadamard");
  if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch("hadamard", a, b);
  return g.record(binary(OpKind::Hadamard, a, b, a.rows(), a.cols()));
}

Var activate(Var a, Activation act, double negative_slope) {
  Graph::Node n = unary(OpKind::Activation, a, a.rows(), a.cols());
  n.act = act;
  n.scalar = negative_slope;
  return a.graph().record(std::move(n));
}

Var concat_cols(Var a, Var b) {
  Graph& g = same_graph(a, b, "concat_cols");
  if (a.rows() != b.rows()) mismatch("concat_cols", a, b);
  return g.record(binary(OpKind::ConcatCols, a, b, a.rows(), a.cols() + b.cols()));
}

Var normalize_cols(Var a) { return a.graph().record(unary(OpKind::NormalizeCols, a, a.rows(), a.cols())); }

Var logdet_spd(Var m) {
  if (m.rows() != m.cols()) throw ShapeError("logdet_spd of non-square " + m.graph().describe(m));
  return m.graph().record(unary(OpKind::LogdetSpd, m, 1, 1));
}

Var gather_cols(Var a, std::vector<Index> columns) {
  if (columns.empty()) throw ShapeError("gather_cols with no columns from " + a.graph().describe(a));
  for (Index c : columns) {
    if (c < 0 || c >= a.cols()) {
      throw ShapeError("gather_cols: column " + std::to_string(c) + " out of range for " + a.graph().describe(a));
    }
  }
  Graph::Node n = unary(OpKind::GatherCols, a, a.rows(), static_cast<Index>(columns.size()));
  n.index = std::move(columns);
  return a.graph().record(std::move(n));
}

Var sum(Var a) { return a.graph().record(unary(OpKind::Sum, a, 1, 1)); }

Var log_softmax_cols(Var a) { return a.graph().record(unary(OpKind::LogSoftmaxCols, a, a.rows(), a.cols())); }

Var log_sigmoid(Var a) { return a.graph().record(unary(OpKind::LogSigmoid, a, a.rows(), a.cols())); }

}  // namespace ldr::ad
