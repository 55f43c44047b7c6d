#include "matchdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace matchdet::num {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

GradCheckReport compare_grads(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x0, const std::vector<double>& analytic,
    double h) {
  if (x0.size() != analytic.size())
    throw std::invalid_argument("compare_grads: size mismatch");
  std::vector<double> fd = finite_diff_grad(f, x0, h);
  GradCheckReport report;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    report.max_rel_err = std::max(report.max_rel_err, relative_error(fd[i], analytic[i]));
    ++report.checked;
  }
  return report;
}

std::vector<double> flatten(const std::vector<Matrix>& matrices) {
  std::vector<double> flat;
  for (const Matrix& m : matrices)
    flat.insert(flat.end(), m.values().begin(), m.values().end());
  return flat;
}

std::vector<Matrix> unflatten(const std::vector<double>& flat,
                              const std::vector<std::pair<int, int>>& shapes) {
  std::vector<Matrix> out;
  std::size_t offset = 0;
  for (const auto& [rows, cols] : shapes) {
    std::size_t n = static_cast<std::size_t>(rows) * cols;
    out.emplace_back(rows, cols,
                     std::vector<double>(flat.begin() + offset, flat.begin() + offset + n));
    offset += n;
  }
  if (offset != flat.size())
    throw std::invalid_argument("unflatten: length mismatch");
  return out;
}

GradCheckReport check_tape_function(
    const std::vector<Matrix>& inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& build, double h) {
  std::vector<std::pair<int, int>> shapes;
  for (const Matrix& m : inputs) shapes.emplace_back(m.rows(), m.cols());

  // Analytic gradients at the base point.
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m));
  Var loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Matrix> grads;
  grads.reserve(leaves.size());
  for (Var leaf : leaves) grads.push_back(tape.grad(leaf));

  auto value = [&](const std::vector<double>& flat) {
    std::vector<Matrix> ms = unflatten(flat, shapes);
    Tape t;
    std::vector<Var> ls;
    ls.reserve(ms.size());
    for (Matrix& m : ms) ls.push_back(t.leaf(std::move(m)));
    return build(t, ls).scalar();
  };
  return compare_grads(value, flatten(inputs), flatten(grads), h);
}

}  // namespace matchdet::num
