#include "matchdet/matchhead.hpp"

#include <stdexcept>

namespace matchdet::match {

using num::Matrix;
using num::Tape;
using num::Var;

Var score_matrix(Tape& tape, Var c_t, Var c_r, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("score_matrix: tau must be > 0");
  if (c_t.cols() != c_r.cols())
    throw std::invalid_argument("score_matrix: channel mismatch");
  Var nt = tape.l2_normalize_rows(c_t);
  Var nr = tape.l2_normalize_rows(c_r);
  return tape.scale(tape.matmul(nt, tape.transpose(nr)), 1.0 / tau);
}

Var dual_softmax(Tape& tape, Var s) {
  Var row = tape.softmax_rows(s);
  Var col = tape.transpose(tape.softmax_rows(tape.transpose(s)));
  return tape.hadamard(row, col);
}

Var apply_box_filter(Tape& tape, Var p, const WeightMap& m_t_hat,
                     const WeightMap& m_r_hat) {
  if (m_t_hat.cells() != p.rows() || m_r_hat.cells() != p.cols())
    throw std::invalid_argument("apply_box_filter: shape mismatch");
  Var filtered = tape.row_scale(p, tape.constant(Matrix::column(m_t_hat.values)));
  return tape.col_scale(filtered, tape.constant(Matrix::column(m_r_hat.values)));
}

MatchSet mnn_select(const Matrix& p, double theta) {
  if (theta < 0.0) throw std::invalid_argument("mnn_select: theta must be >= 0");
  MatchSet out;
  out.theta = theta;
  if (p.rows() == 0 || p.cols() == 0) return out;

  std::vector<int> row_arg(p.rows(), 0), col_arg(p.cols(), 0);
  for (int i = 0; i < p.rows(); ++i)
    for (int j = 1; j < p.cols(); ++j)
      if (p(i, j) > p(i, row_arg[i])) row_arg[i] = j;
  for (int j = 0; j < p.cols(); ++j)
    for (int i = 1; i < p.rows(); ++i)
      if (p(i, j) > p(col_arg[j], j)) col_arg[j] = i;

  for (int i = 0; i < p.rows(); ++i) {
    int j = row_arg[i];
    if (col_arg[j] == i && p(i, j) >= theta) out.pairs.push_back({i, j, p(i, j)});
  }
  return out;
}

Var matcher_loss(Tape& tape, Var p, std::span<const std::pair<int, int>> gt) {
  if (gt.empty()) return tape.constant_scalar(0.0);
  Matrix indicator(p.rows(), p.cols());
  for (const auto& [i, j] : gt) {
    if (i < 0 || i >= p.rows() || j < 0 || j >= p.cols())
      throw std::invalid_argument("matcher_loss: ground-truth index out of range");
    indicator(i, j) += 1.0;
  }
  Var log_p = tape.log(tape.add_scalar(p, 1e-12));
  Var picked = tape.sum(tape.hadamard(log_p, tape.constant(std::move(indicator))));
  return tape.scale(picked, -1.0 / static_cast<double>(gt.size()));
}

}  // namespace matchdet::match
