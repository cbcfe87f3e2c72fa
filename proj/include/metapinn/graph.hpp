#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

class Graph;

/// Handle to one node of a Graph.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,    // x * c
  kAddC,     // x + c
  kAddRow,   // [m,n] + [n]
  kSubCol,   // [m,n] - [m,1]
  kDivCol,   // [m,n] / [m,1]
  kMatMul,   // [m,k]x[k,n] or [m,k]x[k]
  kTranspose,
  kTanh,
  kRelu,
  kExp,
  kSqrt,
  kSoftmaxRows,
  kSumAll,
  kMeanAll,
  kRowSum,   // [m,n] -> [m,1]
  kRowMean,  // [m,n] -> [m,1]
  kColSum,   // [m,n] -> [n]
  kColMean,  // [m,n] -> [n]
  kBcastFull,  // scalar -> shape
  kBcastCol,   // [m,1] -> [m,n]
  kBcastRow,   // [n] -> [m,n]
  kConcat,     // flattened inputs -> [total]
  kSlice,      // 1-D window [a, a+b)
  kPad,        // 1-D embed at offset a into zeros of length b
  kReshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kAddC: return "add_c";
    case Op::kAddRow: return "add_row";
    case Op::kSubCol: return "sub_col";
    case Op::kDivCol: return "div_col";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kSqrt: return "sqrt";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kSumAll: return "sum_all";
    case Op::kMeanAll: return "mean_all";
    case Op::kRowSum: return "row_sum";
    case Op::kRowMean: return "row_mean";
    case Op::kColSum: return "col_sum";
    case Op::kColMean: return "col_mean";
    case Op::kBcastFull: return "bcast_full";
    case Op::kBcastCol: return "bcast_col";
    case Op::kBcastRow: return "bcast_row";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kPad: return "pad";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

/// Reverse-mode automatic differentiation tape.
///
/// Nodes are appended in topological order and evaluated eagerly. Backward
/// passes emit their adjoint computations as ordinary nodes on the same tape,
/// so any gradient is itself differentiable; nesting depth is limited only by
/// what callers build. A Graph and its Vars are confined to one thread;
/// independent Graphs may run concurrently.
class Graph {
 public:
  struct Node {
    Op op = Op::kConst;
    int in0 = -1, in1 = -1;
    std::vector<int> extra;  // Concat inputs beyond the first two
    Shape shape;
    std::vector<double> v;
    double c = 0.0;  // scalar constant for kScale/kAddC
    int a = 0, b = 0;  // aux: slice/pad window, requires_grad flag for leaves
  };

  Graph() { nodes_.reserve(1024); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return used_; }

  /// Drops every node; keeps allocated buffers for reuse.
  void clear() { used_ = 0; }

  /// Rolls the tape back to a previous size() mark.
  void rewind(std::size_t mark) {
    if (mark > used_) throw Error("rewind past end of tape");
    used_ = mark;
  }

  bool check_finite = true;

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Shape& shape(Var x) const { return node(x.id).shape; }
  const std::vector<double>& values(Var x) const { return node(x.id).v; }

  double scalar_value(Var x) const {
    const Node& n = node(x.id);
    if (n.v.size() != 1) throw ShapeError("scalar_value on tensor of size " + std::to_string(n.v.size()));
    return n.v[0];
  }

  Tensor materialize(Var x) const {
    const Node& n = node(x.id);
    return Tensor(n.shape, n.v);
  }

  Var leaf(const Tensor& t, bool requires_grad) {
    Node& n = fresh_();
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.v = t.data;
    n.a = requires_grad ? 1 : 0;
    return finish_(n);
  }

  Var constant(const Tensor& t) {
    Node& n = fresh_();
    n.op = Op::kConst;
    n.shape = t.shape;
    n.v = t.data;
    return finish_(n);
  }

  Var constant(Shape s, std::vector<double> v) {
    Node& n = fresh_();
    n.op = Op::kConst;
    n.shape = std::move(s);
    n.v = std::move(v);
    return finish_(n);
  }

  Var scalar_const(double v) { return constant(Shape{}, {v}); }

  /// Writes fresh values into an existing leaf, keeping the node id. The
  /// shape must match; downstream nodes are stale until rebuilt.
  void set_leaf(Var x, const std::vector<double>& data) {
    Node& n = nodes_[static_cast<std::size_t>(x.id)];
    if (n.op != Op::kLeaf) throw Error("set_leaf on non-leaf node");
    if (n.v.size() != data.size()) throw ShapeError("set_leaf size mismatch");
    n.v = data;
  }

  // ---- op emission -------------------------------------------------------

  Var emit1(Op op, Var x, double c = 0.0, int a = 0, int b = 0) {
    Node& n = fresh_();
    n.op = op;
    n.in0 = x.id;
    n.c = c;
    n.a = a;
    n.b = b;
    compute_(n);
    return finish_(n);
  }

  Var emit2(Op op, Var x, Var y) {
    Node& n = fresh_();
    n.op = op;
    n.in0 = x.id;
    n.in1 = y.id;
    compute_(n);
    return finish_(n);
  }

  Var emit_reshape(Var x, Shape s) {
    const Node& xn = node(x.id);
    if (shape_numel(s) != static_cast<std::int64_t>(xn.v.size()))
      throw ShapeError("reshape " + shape_str(xn.shape) + " -> " + shape_str(s));
    Node& n = fresh_();
    n.op = Op::kReshape;
    n.in0 = x.id;
    n.shape = std::move(s);
    n.v = xn.v;
    return finish_(n);
  }

  Var emit_bcast_full(Var x, Shape s) {
    const Node& xn = node(x.id);
    if (xn.v.size() != 1) throw ShapeError("bcast_full expects a scalar");
    Node& n = fresh_();
    n.op = Op::kBcastFull;
    n.in0 = x.id;
    n.shape = std::move(s);
    n.v.assign(static_cast<std::size_t>(shape_numel(n.shape)), xn.v[0]);
    return finish_(n);
  }

  Var emit_concat(std::span<const Var> xs) {
    if (xs.empty()) throw ShapeError("concat of zero tensors");
    Node& n = fresh_();
    n.op = Op::kConcat;
    n.in0 = xs[0].id;
    n.in1 = xs.size() > 1 ? xs[1].id : -1;
    n.extra.clear();
    for (std::size_t i = 2; i < xs.size(); ++i) n.extra.push_back(xs[i].id);
    std::size_t total = 0;
    for (const Var& x : xs) total += node(x.id).v.size();
    n.shape = Shape{static_cast<int>(total)};
    n.v.clear();
    n.v.reserve(total);
    for (const Var& x : xs) {
      const auto& src = node(x.id).v;
      n.v.insert(n.v.end(), src.begin(), src.end());
    }
    return finish_(n);
  }

  // ---- differentiation ---------------------------------------------------

  /// Adjoints of `wrt` nodes for a scalar output, emitted as new tape nodes.
  /// Nodes the output does not depend on yield zero constants.
  std::vector<Var> grad(Var out, std::span<const Var> wrt);

  /// Gradient of a scalar with respect to one (possibly intermediate) node.
  Var input_gradient(Var out, Var x) {
    const Var w[] = {x};
    return grad(out, w)[0];
  }

  /// Per-coordinate second derivative d2(out)/dx_i^2 of a scalar output.
  Var second_input_derivative(Var out, Var x);

 private:
  Node& fresh_() {
    if (used_ == nodes_.size()) nodes_.emplace_back();
    Node& n = nodes_[used_];
    n.in0 = n.in1 = -1;
    n.extra.clear();
    n.c = 0.0;
    n.a = n.b = 0;
    return n;
  }

  Var finish_(Node& n) {
    if (check_finite && n.op != Op::kLeaf && n.op != Op::kConst) {
      for (double x : n.v)
        if (!std::isfinite(x)) [[unlikely]]
          throw NonFiniteError(std::string("non-finite value from op ") + op_name(n.op));
    }
    const int id = static_cast<int>(used_);
    ++used_;
    return Var{this, id};
  }

  [[noreturn]] void shape_fail_(const Node& n) const {
    std::string msg = std::string("op ") + op_name(n.op) + " got ";
    if (n.in0 >= 0) msg += shape_str(node(n.in0).shape);
    if (n.in1 >= 0) msg += " and " + shape_str(node(n.in1).shape);
    throw ShapeError(msg);
  }

  void compute_(Node& n);

  std::vector<Node> nodes_;
  std::size_t used_ = 0;
};

// ---- free-function op surface -------------------------------------------

inline Graph& same_graph(Var a, Var b) {
  if (a.g != b.g) throw Error("operands from different graphs");
  return *a.g;
}

inline Var add(Var a, Var b) { return same_graph(a, b).emit2(Op::kAdd, a, b); }
inline Var sub(Var a, Var b) { return same_graph(a, b).emit2(Op::kSub, a, b); }
inline Var mul(Var a, Var b) { return same_graph(a, b).emit2(Op::kMul, a, b); }
inline Var div(Var a, Var b) { return same_graph(a, b).emit2(Op::kDiv, a, b); }
inline Var neg(Var a) { return a.g->emit1(Op::kNeg, a); }
inline Var scale(Var a, double c) { return a.g->emit1(Op::kScale, a, c); }
inline Var add_c(Var a, double c) { return a.g->emit1(Op::kAddC, a, c); }
inline Var add_rowvec(Var m, Var v) { return same_graph(m, v).emit2(Op::kAddRow, m, v); }
inline Var sub_colvec(Var m, Var c) { return same_graph(m, c).emit2(Op::kSubCol, m, c); }
inline Var div_colvec(Var m, Var c) { return same_graph(m, c).emit2(Op::kDivCol, m, c); }
inline Var matmul(Var a, Var b) { return same_graph(a, b).emit2(Op::kMatMul, a, b); }
inline Var transpose(Var a) { return a.g->emit1(Op::kTranspose, a); }
inline Var tanh(Var a) { return a.g->emit1(Op::kTanh, a); }
inline Var relu(Var a) { return a.g->emit1(Op::kRelu, a); }
inline Var exp(Var a) { return a.g->emit1(Op::kExp, a); }
inline Var sqrt(Var a) { return a.g->emit1(Op::kSqrt, a); }
inline Var softmax_rows(Var a) { return a.g->emit1(Op::kSoftmaxRows, a); }
inline Var sum_all(Var a) { return a.g->emit1(Op::kSumAll, a); }
inline Var mean_all(Var a) { return a.g->emit1(Op::kMeanAll, a); }
inline Var row_sum(Var a) { return a.g->emit1(Op::kRowSum, a); }
inline Var row_mean(Var a) { return a.g->emit1(Op::kRowMean, a); }
inline Var col_sum(Var a) { return a.g->emit1(Op::kColSum, a); }
inline Var col_mean(Var a) { return a.g->emit1(Op::kColMean, a); }
inline Var bcast_col(Var c, int ncols) { return c.g->emit1(Op::kBcastCol, c, 0.0, ncols); }
inline Var bcast_row(Var v, int nrows) { return v.g->emit1(Op::kBcastRow, v, 0.0, nrows); }
inline Var bcast_full(Var s, Shape shape) { return s.g->emit_bcast_full(s, std::move(shape)); }
inline Var concat(std::span<const Var> xs) { return xs[0].g->emit_concat(xs); }
inline Var concat(std::initializer_list<Var> xs) {
  return std::data(xs)->g->emit_concat(std::span<const Var>(std::data(xs), xs.size()));
}
inline Var slice(Var a, int offset, int len) { return a.g->emit1(Op::kSlice, a, 0.0, offset, len); }
inline Var reshape(Var a, Shape s) { return a.g->emit_reshape(a, std::move(s)); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

/// Squeezes a one-element tensor to rank 0.
inline Var to_scalar(Var a) {
  const Shape& s = a.g->shape(a);
  if (s.empty()) return a;
  if (shape_numel(s) != 1) throw ShapeError("to_scalar on tensor " + shape_str(s));
  return reshape(a, Shape{});
}

/// Row-wise layer normalization: (x - mean) / sqrt(var + eps) per row.
inline Var layer_norm_rows(Var x, double eps) {
  Graph& g = *x.g;
  const Shape& s = g.shape(x);
  if (s.size() != 2) throw ShapeError("layer_norm_rows expects a matrix, got " + shape_str(s));
  Var mu = row_mean(x);
  Var d = sub_colvec(x, mu);
  Var var = row_mean(mul(d, d));
  Var sd = sqrt(add_c(var, eps));
  return div_colvec(d, sd);
}

/// Mean squared error between same-shaped tensors.
inline Var mse(Var a, Var b) {
  Var d = sub(a, b);
  return mean_all(mul(d, d));
}

/// Inverted dropout. Identity when not training or rate == 0; otherwise
/// multiplies by a 0/(1/(1-rate)) mask drawn from `rng`.
inline Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return x;
  Graph& g = *x.g;
  const auto n = g.values(x).size();
  std::vector<double> mask(n);
  const double keep = 1.0 - rate;
  for (auto& m : mask) m = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
  Var mc = g.constant(g.shape(x), std::move(mask));
  return mul(x, mc);
}

// ---- generic op dispatch -------------------------------------------------

/// The forward operations the networks are built from, as a single dispatch
/// surface for generic checks.
enum class OpKind {
  kAffine,       // {x[k], W[m,k], b[m]} -> W x + b
  kMatProduct,   // {A, B}
  kTanh,
  kRelu,
  kSoftmaxRows,
  kLayerNorm,    // row-wise, stabilizer from `eps`
  kConcat,
  kHadamard,
  kSumReduce,
  kMse,
};

inline Var forward_op(OpKind kind, std::span<const Var> xs, double eps = 1e-5) {
  auto arity = [&](std::size_t want) {
    if (xs.size() != want)
      throw ShapeError("forward_op arity " + std::to_string(xs.size()) + ", want " + std::to_string(want));
  };
  switch (kind) {
    case OpKind::kAffine:
      arity(3);
      return add(matmul(xs[1], xs[0]), xs[2]);
    case OpKind::kMatProduct:
      arity(2);
      return matmul(xs[0], xs[1]);
    case OpKind::kTanh:
      arity(1);
      return tanh(xs[0]);
    case OpKind::kRelu:
      arity(1);
      return relu(xs[0]);
    case OpKind::kSoftmaxRows:
      arity(1);
      return softmax_rows(xs[0]);
    case OpKind::kLayerNorm:
      arity(1);
      return layer_norm_rows(xs[0], eps);
    case OpKind::kConcat:
      return concat(xs);
    case OpKind::kHadamard:
      arity(2);
      return mul(xs[0], xs[1]);
    case OpKind::kSumReduce:
      arity(1);
      return sum_all(xs[0]);
    case OpKind::kMse:
      arity(2);
      return mse(xs[0], xs[1]);
  }
  throw Error("unknown op kind");
}

// ---- forward evaluation --------------------------------------------------

inline void Graph::compute_(Node& n) {
  const Node* A = n.in0 >= 0 ? &node(n.in0) : nullptr;
  const Node* B = n.in1 >= 0 ? &node(n.in1) : nullptr;
  auto rows = [](const Node* p) { return p->shape.empty() ? 1 : p->shape[0]; };
  auto cols = [](const Node* p) { return p->shape.size() < 2 ? 1 : p->shape[1]; };

  switch (n.op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      if (A->shape != B->shape) shape_fail_(n);
      n.shape = A->shape;
      const std::size_t m = A->v.size();
      n.v.resize(m);
      const double* a = A->v.data();
      const double* b = B->v.data();
      double* o = n.v.data();
      switch (n.op) {
        case Op::kAdd: for (std::size_t i = 0; i < m; ++i) o[i] = a[i] + b[i]; break;
        case Op::kSub: for (std::size_t i = 0; i < m; ++i) o[i] = a[i] - b[i]; break;
        case Op::kMul: for (std::size_t i = 0; i < m; ++i) o[i] = a[i] * b[i]; break;
        default:       for (std::size_t i = 0; i < m; ++i) o[i] = a[i] / b[i]; break;
      }
      break;
    }
    case Op::kNeg: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = -A->v[i];
      break;
    }
    case Op::kScale: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = A->v[i] * n.c;
      break;
    }
    case Op::kAddC: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = A->v[i] + n.c;
      break;
    }
    case Op::kAddRow: {
      if (A->shape.size() != 2 || B->shape.size() != 1 || A->shape[1] != B->shape[0]) shape_fail_(n);
      n.shape = A->shape;
      const int m = rows(A), k = cols(A);
      n.v.resize(A->v.size());
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j)
          n.v[static_cast<std::size_t>(i) * k + j] = A->v[static_cast<std::size_t>(i) * k + j] + B->v[static_cast<std::size_t>(j)];
      break;
    }
    case Op::kSubCol:
    case Op::kDivCol: {
      if (A->shape.size() != 2 || B->shape.size() != 2 || B->shape[1] != 1 || A->shape[0] != B->shape[0])
        shape_fail_(n);
      n.shape = A->shape;
      const int m = rows(A), k = cols(A);
      n.v.resize(A->v.size());
      for (int i = 0; i < m; ++i) {
        const double c = B->v[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j) {
          const double a = A->v[static_cast<std::size_t>(i) * k + j];
          n.v[static_cast<std::size_t>(i) * k + j] = n.op == Op::kSubCol ? a - c : a / c;
        }
      }
      break;
    }
    case Op::kMatMul: {
      if (A->shape.size() != 2) shape_fail_(n);
      const int m = A->shape[0], k = A->shape[1];
      if (B->shape.size() == 2) {
        if (B->shape[0] != k) shape_fail_(n);
        const int p = B->shape[1];
        n.shape = Shape{m, p};
        n.v.assign(static_cast<std::size_t>(m) * p, 0.0);
        for (int i = 0; i < m; ++i) {
          const double* arow = A->v.data() + static_cast<std::size_t>(i) * k;
          double* orow = n.v.data() + static_cast<std::size_t>(i) * p;
          for (int t = 0; t < k; ++t) {
            const double a = arow[t];
            const double* brow = B->v.data() + static_cast<std::size_t>(t) * p;
            for (int j = 0; j < p; ++j) orow[j] += a * brow[j];
          }
        }
      } else if (B->shape.size() == 1) {
        if (B->shape[0] != k) shape_fail_(n);
        n.shape = Shape{m};
        n.v.resize(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
          const double* arow = A->v.data() + static_cast<std::size_t>(i) * k;
          double acc = 0.0;
          for (int t = 0; t < k; ++t) acc += arow[t] * B->v[static_cast<std::size_t>(t)];
          n.v[static_cast<std::size_t>(i)] = acc;
        }
      } else {
        shape_fail_(n);
      }
      break;
    }
    case Op::kTranspose: {
      if (A->shape.size() != 2) shape_fail_(n);
      const int m = A->shape[0], k = A->shape[1];
      n.shape = Shape{k, m};
      n.v.resize(A->v.size());
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j)
          n.v[static_cast<std::size_t>(j) * m + i] = A->v[static_cast<std::size_t>(i) * k + j];
      break;
    }
    case Op::kTanh: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = std::tanh(A->v[i]);
      break;
    }
    case Op::kRelu: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = A->v[i] > 0.0 ? A->v[i] : 0.0;
      break;
    }
    case Op::kExp: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = std::exp(A->v[i]);
      break;
    }
    case Op::kSqrt: {
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (std::size_t i = 0; i < A->v.size(); ++i) n.v[i] = std::sqrt(A->v[i]);
      break;
    }
    case Op::kSoftmaxRows: {
      if (A->shape.size() != 2) shape_fail_(n);
      const int m = rows(A), k = cols(A);
      n.shape = A->shape;
      n.v.resize(A->v.size());
      for (int i = 0; i < m; ++i) {
        const double* arow = A->v.data() + static_cast<std::size_t>(i) * k;
        double* orow = n.v.data() + static_cast<std::size_t>(i) * k;
        double mx = arow[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, arow[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
          orow[j] = std::exp(arow[j] - mx);
          z += orow[j];
        }
        for (int j = 0; j < k; ++j) orow[j] /= z;
      }
      break;
    }
    case Op::kSumAll:
    case Op::kMeanAll: {
      n.shape = Shape{};
      double acc = 0.0;
      for (double x : A->v) acc += x;
      if (n.op == Op::kMeanAll) acc /= static_cast<double>(A->v.size());
      n.v.assign(1, acc);
      break;
    }
    case Op::kRowSum:
    case Op::kRowMean: {
      if (A->shape.size() != 2) shape_fail_(n);
      const int m = rows(A), k = cols(A);
      n.shape = Shape{m, 1};
      n.v.resize(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        const double* arow = A->v.data() + static_cast<std::size_t>(i) * k;
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += arow[j];
        n.v[static_cast<std::size_t>(i)] = n.op == Op::kRowMean ? acc / k : acc;
      }
      break;
    }
    case Op::kColSum:
    case Op::kColMean: {
      if (A->shape.size() != 2) shape_fail_(n);
      const int m = rows(A), k = cols(A);
      n.shape = Shape{k};
      n.v.assign(static_cast<std::size_t>(k), 0.0);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) n.v[static_cast<std::size_t>(j)] += A->v[static_cast<std::size_t>(i) * k + j];
      if (n.op == Op::kColMean)
        for (int j = 0; j < k; ++j) n.v[static_cast<std::size_t>(j)] /= m;
      break;
    }
    case Op::kBcastCol: {
      if (A->shape.size() != 2 || A->shape[1] != 1) shape_fail_(n);
      const int m = A->shape[0], k = n.a;
      n.shape = Shape{m, k};
      n.v.resize(static_cast<std::size_t>(m) * k);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) n.v[static_cast<std::size_t>(i) * k + j] = A->v[static_cast<std::size_t>(i)];
      break;
    }
    case Op::kBcastRow: {
      if (A->shape.size() != 1) shape_fail_(n);
      const int k = A->shape[0], m = n.a;
      n.shape = Shape{m, k};
      n.v.resize(static_cast<std::size_t>(m) * k);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) n.v[static_cast<std::size_t>(i) * k + j] = A->v[static_cast<std::size_t>(j)];
      break;
    }
    case Op::kSlice: {
      if (A->shape.size() != 1 || n.a < 0 || n.b < 0 || n.a + n.b > A->shape[0]) shape_fail_(n);
      n.shape = Shape{n.b};
      n.v.assign(A->v.begin() + n.a, A->v.begin() + n.a + n.b);
      break;
    }
    case Op::kPad: {
      if (A->shape.size() != 1 || n.a < 0 || n.a + A->shape[0] > n.b) shape_fail_(n);
      n.shape = Shape{n.b};
      n.v.assign(static_cast<std::size_t>(n.b), 0.0);
      for (int i = 0; i < A->shape[0]; ++i) n.v[static_cast<std::size_t>(n.a + i)] = A->v[static_cast<std::size_t>(i)];
      break;
    }
    case Op::kLeaf:
    case Op::kConst:
    case Op::kBcastFull:
    case Op::kConcat:
    case Op::kReshape:
      // constructed directly by their emitters
      break;
  }
}

// ---- reverse pass --------------------------------------------------------

inline std::vector<Var> Graph::grad(Var out, std::span<const Var> wrt) {
  if (out.g != this) throw Error("output from a different graph");
  const Node& on = node(out.id);
  if (!on.shape.empty() || on.v.size() != 1)
    throw ShapeError("grad requires a rank-0 scalar output, got " + shape_str(on.shape));
  for (const Var& w : wrt) {
    if (w.g != this) throw Error("wrt from a different graph");
    const Node& wn = node(w.id);
    if (wn.op == Op::kLeaf && wn.a == 0)
      throw Error("wrt leaf was not created with requires_grad");
  }

  const int out_id = out.id;
  // interesting[i]: some wrt node lies in i's input subtree (or i itself).
  std::vector<std::uint8_t> interesting(static_cast<std::size_t>(out_id) + 1, 0);
  for (const Var& w : wrt)
    if (w.id <= out_id) interesting[static_cast<std::size_t>(w.id)] = 1;
  for (int i = 0; i <= out_id; ++i) {
    if (interesting[static_cast<std::size_t>(i)]) continue;
    const Node& n = node(i);
    bool hit = (n.in0 >= 0 && interesting[static_cast<std::size_t>(n.in0)]) ||
               (n.in1 >= 0 && interesting[static_cast<std::size_t>(n.in1)]);
    if (!hit)
      for (int e : n.extra)
        if (interesting[static_cast<std::size_t>(e)]) { hit = true; break; }
    interesting[static_cast<std::size_t>(i)] = hit ? 1 : 0;
  }

  std::vector<int> adj(static_cast<std::size_t>(out_id) + 1, -1);
  auto accum = [&](int target, Var contrib) {
    int& slot = adj[static_cast<std::size_t>(target)];
    slot = slot < 0 ? contrib.id : add(Var{this, slot}, contrib).id;
  };

  if (interesting[static_cast<std::size_t>(out_id)])
    adj[static_cast<std::size_t>(out_id)] = scalar_const(1.0).id;

  for (int i = out_id; i >= 0; --i) {
    if (adj[static_cast<std::size_t>(i)] < 0 || !interesting[static_cast<std::size_t>(i)]) continue;
    const Node n = node(i);  // copy: the nodes_ vector may reallocate while emitting
    if (n.op == Op::kLeaf || n.op == Op::kConst) continue;
    Var g{this, adj[static_cast<std::size_t>(i)]};
    Var y{this, i};
    auto want = [&](int in) { return in >= 0 && interesting[static_cast<std::size_t>(in)]; };
    Var x0{this, n.in0};

    switch (n.op) {
      case Op::kAdd:
        if (want(n.in0)) accum(n.in0, g);
        if (want(n.in1)) accum(n.in1, g);
        break;
      case Op::kSub:
        if (want(n.in0)) accum(n.in0, g);
        if (want(n.in1)) accum(n.in1, neg(g));
        break;
      case Op::kMul:
        if (want(n.in0)) accum(n.in0, mul(g, Var{this, n.in1}));
        if (want(n.in1)) accum(n.in1, mul(g, x0));
        break;
      case Op::kDiv: {
        Var b{this, n.in1};
        if (want(n.in0)) accum(n.in0, div(g, b));
        if (want(n.in1)) accum(n.in1, neg(div(mul(g, y), b)));
        break;
      }
      case Op::kNeg:
        if (want(n.in0)) accum(n.in0, neg(g));
        break;
      case Op::kScale:
        if (want(n.in0)) accum(n.in0, scale(g, n.c));
        break;
      case Op::kAddC:
      case Op::kReshape:
        if (want(n.in0)) accum(n.in0, n.op == Op::kReshape ? reshape(g, node(n.in0).shape) : g);
        break;
      case Op::kAddRow:
        if (want(n.in0)) accum(n.in0, g);
        if (want(n.in1)) accum(n.in1, col_sum(g));
        break;
      case Op::kSubCol:
        if (want(n.in0)) accum(n.in0, g);
        if (want(n.in1)) accum(n.in1, neg(row_sum(g)));
        break;
      case Op::kDivCol: {
        Var c{this, n.in1};
        if (want(n.in0)) accum(n.in0, div_colvec(g, c));
        if (want(n.in1)) accum(n.in1, neg(div(row_sum(mul(g, y)), c)));
        break;
      }
      case Op::kMatMul: {
        Var b{this, n.in1};
        const bool vec = node(n.in1).shape.size() == 1;
        if (vec) {
          const int m = node(n.in0).shape[0];
          const int k = node(n.in0).shape[1];
          if (want(n.in0)) accum(n.in0, matmul(reshape(g, Shape{m, 1}), reshape(b, Shape{1, k})));
          if (want(n.in1)) accum(n.in1, matmul(transpose(x0), g));
        } else {
          if (want(n.in0)) accum(n.in0, matmul(g, transpose(b)));
          if (want(n.in1)) accum(n.in1, matmul(transpose(x0), g));
        }
        break;
      }
      case Op::kTranspose:
        if (want(n.in0)) accum(n.in0, transpose(g));
        break;
      case Op::kTanh:
        // g * (1 - y^2)
        if (want(n.in0)) accum(n.in0, mul(g, add_c(neg(mul(y, y)), 1.0)));
        break;
      case Op::kRelu: {
        if (!want(n.in0)) break;
        const auto& xv = node(n.in0).v;
        std::vector<double> mask(xv.size());
        for (std::size_t t = 0; t < xv.size(); ++t) mask[t] = xv[t] > 0.0 ? 1.0 : 0.0;
        Var mc = constant(node(n.in0).shape, std::move(mask));
        accum(n.in0, mul(g, mc));
        break;
      }
      case Op::kExp:
        if (want(n.in0)) accum(n.in0, mul(g, y));
        break;
      case Op::kSqrt:
        if (want(n.in0)) accum(n.in0, div(g, scale(y, 2.0)));
        break;
      case Op::kSoftmaxRows: {
        if (!want(n.in0)) break;
        // y * (g - rowsum(g * y))
        Var gy = mul(g, y);
        Var r = bcast_col(row_sum(gy), n.shape[1]);
        accum(n.in0, mul(y, sub(g, r)));
        break;
      }
      case Op::kSumAll:
        if (want(n.in0)) accum(n.in0, bcast_full(g, node(n.in0).shape));
        break;
      case Op::kMeanAll:
        if (want(n.in0))
          accum(n.in0, scale(bcast_full(g, node(n.in0).shape), 1.0 / static_cast<double>(node(n.in0).v.size())));
        break;
      case Op::kRowSum:
        if (want(n.in0)) accum(n.in0, bcast_col(g, node(n.in0).shape[1]));
        break;
      case Op::kRowMean:
        if (want(n.in0)) accum(n.in0, scale(bcast_col(g, node(n.in0).shape[1]), 1.0 / node(n.in0).shape[1]));
        break;
      case Op::kColSum:
        if (want(n.in0)) accum(n.in0, bcast_row(g, node(n.in0).shape[0]));
        break;
      case Op::kColMean:
        if (want(n.in0)) accum(n.in0, scale(bcast_row(g, node(n.in0).shape[0]), 1.0 / node(n.in0).shape[0]));
        break;
      case Op::kBcastFull:
        if (want(n.in0)) accum(n.in0, reshape(sum_all(g), node(n.in0).shape));
        break;
      case Op::kBcastCol:
        if (want(n.in0)) accum(n.in0, row_sum(g));
        break;
      case Op::kBcastRow:
        if (want(n.in0)) accum(n.in0, col_sum(g));
        break;
      case Op::kConcat: {
        std::vector<int> ins;
        ins.push_back(n.in0);
        if (n.in1 >= 0) ins.push_back(n.in1);
        for (int e : n.extra) ins.push_back(e);
        int off = 0;
        for (int in : ins) {
          const Node& inn = node(in);
          const int len = static_cast<int>(inn.v.size());
          if (want(in)) {
            Var piece = slice(g, off, len);
            accum(in, inn.shape.size() == 1 ? piece : reshape(piece, inn.shape));
          }
          off += len;
        }
        break;
      }
      case Op::kSlice:
        if (want(n.in0)) accum(n.in0, emit1(Op::kPad, g, 0.0, n.a, node(n.in0).shape[0]));
        break;
      case Op::kPad:
        if (want(n.in0)) accum(n.in0, slice(g, n.a, node(n.in0).shape[0]));
        break;
      case Op::kLeaf:
      case Op::kConst:
        break;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const int a = w.id <= out_id ? adj[static_cast<std::size_t>(w.id)] : -1;
    if (a >= 0) {
      result.push_back(Var{this, a});
    } else {
      result.push_back(constant(Tensor::zeros(node(w.id).shape)));
    }
  }
  return result;
}

inline Var Graph::second_input_derivative(Var out, Var x) {
  const Shape xshape = shape(x);
  const int d = static_cast<int>(shape_numel(xshape));
  Var g1 = input_gradient(out, x);
  if (!xshape.empty() && xshape.size() != 1) g1 = reshape(g1, Shape{d});
  std::vector<Var> diag;
  diag.reserve(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    Var gi = xshape.empty() ? g1 : to_scalar(slice(g1, i, 1));
    Var hrow = input_gradient(gi, x);
    if (xshape.empty()) {
      diag.push_back(reshape(hrow, Shape{1}));
    } else {
      if (xshape.size() != 1) hrow = reshape(hrow, Shape{d});
      diag.push_back(slice(hrow, i, 1));
    }
  }
  Var stacked = concat(std::span<const Var>(diag.data(), diag.size()));
  return xshape.empty() ? to_scalar(stacked) : (xshape.size() == 1 ? stacked : reshape(stacked, xshape));
}

}  // namespace metapinn
