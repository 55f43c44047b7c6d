#include "matchdet/params.hpp"

#include <cmath>
#include <stdexcept>

namespace matchdet {

int ParamStore::add(std::string name, num::Matrix init) {
  if (find(name) >= 0)
    throw std::invalid_argument("parameter registered twice: " + name);
  if (!init.all_finite())
    throw std::invalid_argument("parameter init not finite: " + name);
  entries_.push_back({std::move(name), std::move(init)});
  return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

void ParamStore::sgd_step(const std::vector<num::Matrix>& grads, double lr) {
  if (grads.size() != entries_.size())
    throw std::invalid_argument("sgd_step: gradient count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    num::Matrix& v = entries_[i].value;
    const num::Matrix& g = grads[i];
    if (g.empty()) continue;
    if (!v.same_shape(g)) throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) v.data()[k] -= lr * g.data()[k];
  }
}

BoundParams::BoundParams(const ParamStore& store, num::Tape& tape) {
  vars_.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) vars_.push_back(tape.leaf(store.value(i)));
}

std::vector<num::Matrix> collect_grads(const num::Tape& tape,
                                       const BoundParams& bound,
                                       const ParamStore& store) {
  std::vector<num::Matrix> grads;
  grads.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) grads.push_back(tape.grad(bound[i]));
  return grads;
}

void accumulate_grads(std::vector<num::Matrix>& a,
                      const std::vector<num::Matrix>& b) {
  if (a.empty()) {
    a = b;
    return;
  }
  if (a.size() != b.size())
    throw std::invalid_argument("accumulate_grads: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i].empty()) continue;
    if (a[i].empty()) {
      a[i] = b[i];
      continue;
    }
    for (std::size_t k = 0; k < a[i].size(); ++k)
      a[i].data()[k] += b[i].data()[k];
  }
}

num::Matrix orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  // Gram-Schmidt on Gaussian columns of the taller orientation.
  bool transpose = rows < cols;
  int n = transpose ? cols : rows;
  int k = transpose ? rows : cols;
  std::vector<std::vector<double>> basis;
  basis.reserve(k);
  while (static_cast<int>(basis.size()) < k) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    for (const auto& u : basis) {
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += v[i] * u[i];
      for (int i = 0; i < n; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;  // rare degenerate draw, resample
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  num::Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = gain * (transpose ? basis[r][c] : basis[c][r]);
  return m;
}

num::Matrix normal_init(int rows, int cols, double sigma, Rng& rng) {
  num::Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng.normal();
  return m;
}

}  // namespace matchdet
