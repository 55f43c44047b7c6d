#include "matchdet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace matchdet::num {

namespace {
constexpr double kLayerNormEps = 1e-6;
constexpr double kNormFloor = 1e-12;

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}
}  // namespace

const Matrix& Var::value() const {
  if (!tape_) throw std::logic_error("Var::value on an empty handle");
  return tape_->val(node_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1)
    throw std::logic_error("Var::scalar on a non-1x1 node");
  return v(0, 0);
}

int Tape::check(Var v) const {
  if (v.tape_ != this) throw std::logic_error("Var belongs to another tape");
  return v.node_;
}

Var Tape::push(Node node) {
  if (!node.val.all_finite())
    throw std::runtime_error("tape operation produced a non-finite value");
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::kLeaf;
  n.tracked = true;
  n.val = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConst;
  n.val = std::move(value);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  int ia = check(a), ib = check(b);
  require(val(ia).same_shape(val(ib)), "add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = ia;
  n.b = ib;
  n.tracked = nodes_[ia].tracked || nodes_[ib].tracked;
  Matrix out = val(ia);
  const Matrix& rhs = val(ib);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += rhs.data()[i];
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  int ia = check(a), ib = check(b);
  Node n;
  n.op = Op::kMatmul;
  n.a = ia;
  n.b = ib;
  n.tracked = nodes_[ia].tracked || nodes_[ib].tracked;
  n.val = num::matmul(val(ia), val(ib));
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  int ia = check(a);
  Node n;
  n.op = Op::kTranspose;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = val(ia).transposed();
  return push(std::move(n));
}

Var Tape::row_scale(Var a, Var w) {
  int ia = check(a), iw = check(w);
  require(val(iw).cols() == 1 && val(iw).rows() == val(ia).rows(),
          "row_scale: weights must be rows(a) x 1");
  Node n;
  n.op = Op::kRowScale;
  n.a = ia;
  n.b = iw;
  n.tracked = nodes_[ia].tracked || nodes_[iw].tracked;
  const Matrix& x = val(ia);
  const Matrix& wv = val(iw);
  Matrix out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    double s = wv(r, 0);
    for (int c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * s;
  }
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  int ia = check(a), ib = check(b);
  require(val(ia).same_shape(val(ib)), "hadamard: shape mismatch");
  Node n;
  n.op = Op::kHadamard;
  n.a = ia;
  n.b = ib;
  n.tracked = nodes_[ia].tracked || nodes_[ib].tracked;
  Matrix out = val(ia);
  const Matrix& rhs = val(ib);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= rhs.data()[i];
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
  int ia = check(a);
  const Matrix& x = val(ia);
  Matrix out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    if (x.cols() == 0) continue;
    double mx = x(r, 0);
    for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double denom = 0.0;
    for (int c = 0; c < x.cols(); ++c) {
      double e = std::exp(x(r, c) - mx);
      out(r, c) = e;
      denom += e;
    }
    for (int c = 0; c < x.cols(); ++c) out(r, c) /= denom;
  }
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::cosine_rows(Var a, Var b) {
  int ia = check(a), ib = check(b);
  require(val(ia).same_shape(val(ib)), "cosine_rows: shape mismatch");
  const Matrix& x = val(ia);
  const Matrix& y = val(ib);
  Matrix out(x.rows(), 1);
  Matrix aux(x.rows(), 3);  // per row: dot, |x|, |y|
  for (int r = 0; r < x.rows(); ++r) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (int c = 0; c < x.cols(); ++c) {
      dot += x(r, c) * y(r, c);
      nx += x(r, c) * x(r, c);
      ny += y(r, c) * y(r, c);
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    aux(r, 0) = dot;
    aux(r, 1) = nx;
    aux(r, 2) = ny;
    double denom = nx * ny;
    out(r, 0) = denom < kNormFloor ? 0.0 : std::clamp(dot / denom, -1.0, 1.0);
  }
  Node n;
  n.op = Op::kCosineRows;
  n.a = ia;
  n.b = ib;
  n.tracked = nodes_[ia].tracked || nodes_[ib].tracked;
  n.val = std::move(out);
  n.aux = std::move(aux);
  return push(std::move(n));
}

Var Tape::logistic(Var a) {
  int ia = check(a);
  Matrix out = val(ia);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = out.data()[i];
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }
  Node n;
  n.op = Op::kLogistic;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  int ia = check(a);
  Matrix out = val(ia);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = std::max(0.0, out.data()[i]);
  Node n;
  n.op = Op::kRelu;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::layer_norm_rows(Var a) {
  int ia = check(a);
  const Matrix& x = val(ia);
  require(x.cols() > 0, "layer_norm_rows: empty rows");
  Matrix out(x.rows(), x.cols());
  Matrix aux(x.rows(), 1);  // inverse std per row
  for (int r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (int c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= x.cols();
    double var = 0.0;
    for (int c = 0; c < x.cols(); ++c) {
      double d = x(r, c) - mean;
      var += d * d;
    }
    var /= x.cols();
    double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    aux(r, 0) = inv_std;
    for (int c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) * inv_std;
  }
  Node n;
  n.op = Op::kLayerNorm;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  n.aux = std::move(aux);
  return push(std::move(n));
}

Var Tape::log(Var a) {
  int ia = check(a);
  Matrix out = val(ia);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
  Node n;
  n.op = Op::kLog;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  int ia = check(a);
  Matrix out = val(ia);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(out.data()[i]);
  Node n;
  n.op = Op::kExp;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  return push(std::move(n));
}

Var Tape::row_max(Var a) {
  int ia = check(a);
  const Matrix& x = val(ia);
  require(x.cols() > 0, "row_max: empty rows");
  Matrix out(x.rows(), 1);
  Matrix aux(x.rows(), 1);
  for (int r = 0; r < x.rows(); ++r) {
    int arg = 0;
    for (int c = 1; c < x.cols(); ++c)
      if (x(r, c) > x(r, arg)) arg = c;  // ties keep the lowest index
    out(r, 0) = x(r, arg);
    aux(r, 0) = arg;
  }
  Node n;
  n.op = Op::kRowMax;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  n.aux = std::move(aux);
  return push(std::move(n));
}

Var Tape::col_max(Var a) {
  int ia = check(a);
  const Matrix& x = val(ia);
  require(x.rows() > 0, "col_max: empty columns");
  Matrix out(1, x.cols());
  Matrix aux(1, x.cols());
  for (int c = 0; c < x.cols(); ++c) {
    int arg = 0;
    for (int r = 1; r < x.rows(); ++r)
      if (x(r, c) > x(arg, c)) arg = r;
    out(0, c) = x(arg, c);
    aux(0, c) = arg;
  }
  Node n;
  n.op = Op::kColMax;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = std::move(out);
  n.aux = std::move(aux);
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  int ia = check(a);
  Node n;
  n.op = Op::kSum;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = Matrix(1, 1, {val(ia).sum()});
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  int ia = check(a);
  require(!val(ia).empty(), "mean: empty matrix");
  Node n;
  n.op = Op::kMean;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = Matrix(1, 1, {val(ia).sum() / static_cast<double>(val(ia).size())});
  return push(std::move(n));
}

Var Tape::reshape(Var a, int rows, int cols) {
  int ia = check(a);
  require(static_cast<std::size_t>(rows) * cols == val(ia).size(),
          "reshape: element count mismatch");
  Node n;
  n.op = Op::kReshape;
  n.a = ia;
  n.tracked = nodes_[ia].tracked;
  n.val = Matrix(rows, cols, val(ia).values());
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  return hadamard(a, constant(Matrix::full(a.rows(), a.cols(), s)));
}

Var Tape::add_scalar(Var a, double s) {
  return add(a, constant(Matrix::full(a.rows(), a.cols(), s)));
}

Var Tape::col_scale(Var a, Var g) {
  return transpose(row_scale(transpose(a), g));
}

Var Tape::add_row_bias(Var a, Var b) {
  require(b.rows() == 1 && b.cols() == a.cols(),
          "add_row_bias: bias must be 1 x cols(a)");
  Var ones = constant(Matrix::ones(a.rows(), 1));
  return add(a, matmul(ones, b));
}

Var Tape::div_positive(Var a, Var b) {
  return exp(sub(log(a), log(b)));
}

Var Tape::l2_normalize_rows(Var a) {
  Var sq = hadamard(a, a);
  Var norms_sq = matmul(sq, constant(Matrix::ones(a.cols(), 1)));
  Var inv_norm = exp(scale(log(add_scalar(norms_sq, kNormFloor)), -0.5));
  return row_scale(a, inv_norm);
}

void Tape::accumulate(int node, const Matrix& delta) {
  if (!nodes_[node].tracked) return;
  Matrix& g = grads_[node];
  if (g.empty()) {
    g = delta;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += delta.data()[i];
}

void Tape::backward(Var output) {
  int out = check(output);
  if (val(out).rows() != 1 || val(out).cols() != 1)
    throw std::invalid_argument("backward: output must be a scalar (1x1) node");
  grads_.assign(nodes_.size(), Matrix());
  if (!nodes_[out].tracked) return;  // constant output: all gradients zero
  grads_[out] = Matrix(1, 1, {1.0});

  for (int i = out; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.tracked || grads_[i].empty()) continue;
    const Matrix& g = grads_[i];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::kMatmul: {
        if (nodes_[n.a].tracked)
          accumulate(n.a, num::matmul(g, val(n.b).transposed()));
        if (nodes_[n.b].tracked)
          accumulate(n.b, num::matmul(val(n.a).transposed(), g));
        break;
      }
      case Op::kTranspose:
        accumulate(n.a, g.transposed());
        break;
      case Op::kRowScale: {
        const Matrix& x = val(n.a);
        const Matrix& w = val(n.b);
        if (nodes_[n.a].tracked) {
          Matrix da(x.rows(), x.cols());
          for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) da(r, c) = g(r, c) * w(r, 0);
          accumulate(n.a, da);
        }
        if (nodes_[n.b].tracked) {
          Matrix dw(x.rows(), 1);
          for (int r = 0; r < x.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < x.cols(); ++c) s += g(r, c) * x(r, c);
            dw(r, 0) = s;
          }
          accumulate(n.b, dw);
        }
        break;
      }
      case Op::kHadamard: {
        if (nodes_[n.a].tracked) {
          Matrix da = g;
          const Matrix& y = val(n.b);
          for (std::size_t k = 0; k < da.size(); ++k) da.data()[k] *= y.data()[k];
          accumulate(n.a, da);
        }
        if (nodes_[n.b].tracked) {
          Matrix db = g;
          const Matrix& x = val(n.a);
          for (std::size_t k = 0; k < db.size(); ++k) db.data()[k] *= x.data()[k];
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kSoftmaxRows: {
        const Matrix& s = n.val;
        Matrix da(s.rows(), s.cols());
        for (int r = 0; r < s.rows(); ++r) {
          double dot = 0.0;
          for (int c = 0; c < s.cols(); ++c) dot += g(r, c) * s(r, c);
          for (int c = 0; c < s.cols(); ++c)
            da(r, c) = s(r, c) * (g(r, c) - dot);
        }
        accumulate(n.a, da);
        break;
      }
      case Op::kCosineRows: {
        const Matrix& x = val(n.a);
        const Matrix& y = val(n.b);
        const bool need_a = nodes_[n.a].tracked;
        const bool need_b = nodes_[n.b].tracked;
        Matrix da(x.rows(), x.cols()), db(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r) {
          double dot = n.aux(r, 0), nx = n.aux(r, 1), ny = n.aux(r, 2);
          double denom = nx * ny;
          if (denom < kNormFloor) continue;  // defined 0, zero gradient
          double go = g(r, 0);
          for (int c = 0; c < x.cols(); ++c) {
            if (need_a)
              da(r, c) = go * (y(r, c) / denom - dot * x(r, c) / (nx * nx * denom));
            if (need_b)
              db(r, c) = go * (x(r, c) / denom - dot * y(r, c) / (ny * ny * denom));
          }
        }
        if (need_a) accumulate(n.a, da);
        if (need_b) accumulate(n.b, db);
        break;
      }
      case Op::kLogistic: {
        Matrix da = g;
        for (std::size_t k = 0; k < da.size(); ++k) {
          double s = n.val.data()[k];
          da.data()[k] *= s * (1.0 - s);
        }
        accumulate(n.a, da);
        break;
      }
      case Op::kRelu: {
        Matrix da = g;
        const Matrix& x = val(n.a);
        for (std::size_t k = 0; k < da.size(); ++k)
          if (x.data()[k] <= 0.0) da.data()[k] = 0.0;
        accumulate(n.a, da);
        break;
      }
      case Op::kLayerNorm: {
        const Matrix& xhat = n.val;
        Matrix da(xhat.rows(), xhat.cols());
        int cdim = xhat.cols();
        for (int r = 0; r < xhat.rows(); ++r) {
          double gm = 0.0, gxm = 0.0;
          for (int c = 0; c < cdim; ++c) {
            gm += g(r, c);
            gxm += g(r, c) * xhat(r, c);
          }
          gm /= cdim;
          gxm /= cdim;
          double inv_std = n.aux(r, 0);
          for (int c = 0; c < cdim; ++c)
            da(r, c) = inv_std * (g(r, c) - gm - xhat(r, c) * gxm);
        }
        accumulate(n.a, da);
        break;
      }
      case Op::kLog: {
        Matrix da = g;
        const Matrix& x = val(n.a);
        for (std::size_t k = 0; k < da.size(); ++k) da.data()[k] /= x.data()[k];
        accumulate(n.a, da);
        break;
      }
      case Op::kExp: {
        Matrix da = g;
        for (std::size_t k = 0; k < da.size(); ++k) da.data()[k] *= n.val.data()[k];
        accumulate(n.a, da);
        break;
      }
      case Op::kRowMax: {
        const Matrix& x = val(n.a);
        Matrix da(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r)
          da(r, static_cast<int>(n.aux(r, 0))) = g(r, 0);
        accumulate(n.a, da);
        break;
      }
      case Op::kColMax: {
        const Matrix& x = val(n.a);
        Matrix da(x.rows(), x.cols());
        for (int c = 0; c < x.cols(); ++c)
          da(static_cast<int>(n.aux(0, c)), c) = g(0, c);
        accumulate(n.a, da);
        break;
      }
      case Op::kSum:
        accumulate(n.a, Matrix::full(val(n.a).rows(), val(n.a).cols(), g(0, 0)));
        break;
      case Op::kMean:
        accumulate(n.a, Matrix::full(val(n.a).rows(), val(n.a).cols(),
                                     g(0, 0) / static_cast<double>(val(n.a).size())));
        break;
      case Op::kReshape: {
        const Matrix& x = val(n.a);
        accumulate(n.a, Matrix(x.rows(), x.cols(), g.values()));
        break;
      }
    }
  }
}

Matrix Tape::grad(Var v) const {
  int i = check(v);
  if (static_cast<std::size_t>(i) < grads_.size() && !grads_[i].empty())
    return grads_[i];
  return Matrix(val(i).rows(), val(i).cols());
}

std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f(x);
    x[i] = keep - h;
    double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace matchdet::num
