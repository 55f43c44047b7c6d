#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "matchdet/matrix.hpp"

namespace matchdet::num {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int node) : tape_(tape), node_(node) {}
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Records a topologically ordered sequence of matrix primitives and runs
/// reverse-mode accumulation over them. Single-threaded by contract;
/// parallelism happens across samples, each sample owning its own tape.
///
/// Primitive set: add, matmul, transpose, broadcast products (row_scale /
/// hadamard), row softmax, row cosine, logistic, relu, row layer norm,
/// log, exp, row/col max, sum, mean, reshape. Everything else is composed.
/// Every operation rejects non-finite results, so NaN/Inf never escapes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter).
  Var leaf(Matrix value);
  /// Non-differentiable input.
  Var constant(Matrix value);
  Var constant_scalar(double value) { return constant(Matrix(1, 1, {value})); }

  Var add(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  /// Broadcast product: row i of a scaled by w(i, 0). w must be rows(a) x 1.
  Var row_scale(Var a, Var w);
  /// Elementwise product of same-shape matrices.
  Var hadamard(Var a, Var b);
  /// Row-wise softmax with per-row max subtraction. Rows sum to 1.
  Var softmax_rows(Var a);
  /// Per-row cosine similarity of same-shape a, b -> rows x 1, clamped to
  /// [-1, 1]. Rows of zero norm yield 0 (and zero gradient).
  Var cosine_rows(Var a, Var b);
  Var logistic(Var a);
  Var relu(Var a);
  /// Per-row mean/variance normalization, eps = 1e-6, no affine part.
  Var layer_norm_rows(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var row_max(Var a);  // rows x 1
  Var col_max(Var a);  // 1 x cols
  Var sum(Var a);      // 1 x 1
  Var mean(Var a);     // 1 x 1
  Var reshape(Var a, int rows, int cols);

  // Composites.
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
  Var neg(Var a) { return scale(a, -1.0); }
  Var abs(Var a) { return add(relu(a), relu(neg(a))); }
  /// Column j of a scaled by g(j, 0). g must be cols(a) x 1.
  Var col_scale(Var a, Var g);
  /// Adds row vector b (1 x cols(a)) to every row of a.
  Var add_row_bias(Var a, Var b);
  /// Elementwise a / b for strictly positive a, b (exp/log composition).
  Var div_positive(Var a, Var b);
  /// Rows normalized to unit L2 norm; near-zero rows stay near zero.
  Var l2_normalize_rows(Var a);

  /// Reverse pass from a scalar (1x1) node; throws otherwise. Gradients
  /// accumulate by sum over all paths; repeated calls re-accumulate.
  void backward(Var output);
  /// Gradient of the last backward() w.r.t. v; zeros if v was not reached.
  Matrix grad(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf, kConst, kAdd, kMatmul, kTranspose, kRowScale, kHadamard,
    kSoftmaxRows, kCosineRows, kLogistic, kRelu, kLayerNorm, kLog, kExp,
    kRowMax, kColMax, kSum, kMean, kReshape
  };
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    bool tracked = false;
    Matrix val;
    Matrix aux;  // op-specific cache (inv std, argmax indices, ...)
  };

  friend class Var;
  Var push(Node node);
  const Matrix& val(int i) const { return nodes_[i].val; }
  void accumulate(int node, const Matrix& delta);
  int check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

/// Central finite differences (f(x + h e_i) - f(x - h e_i)) / 2h.
std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h);

}  // namespace matchdet::num
