#pragma once

#include <span>
#include <utility>
#include <vector>

#include "matchdet/tape.hpp"
#include "matchdet/types.hpp"

namespace matchdet::match {

/// S(i, j) = cosine(c_t(i), c_r(j)) / tau over all cell pairs.
/// Throws when tau <= 0.
num::Var score_matrix(num::Tape& tape, num::Var c_t, num::Var c_r, double tau);

/// P(i, j) = softmax_row_i(S)(j) * softmax_col_j(S)(i). Entries lie in
/// [0, 1] and never exceed either marginal softmax; rows need not sum to 1.
num::Var dual_softmax(num::Tape& tape, num::Var s);

/// P(i, j) <- P(i, j) * M^t(i) * M^r(j). The filter is a rank-one positive
/// re-weighting, so it is differentiable in P and preserves argmax structure
/// under uniform maps.
num::Var apply_box_filter(num::Tape& tape, num::Var p, const WeightMap& m_t_hat,
                          const WeightMap& m_r_hat);

struct Match {
  int i = 0;  // target cell
  int j = 0;  // reference cell
  double p = 0.0;
};

struct MatchSet {
  std::vector<Match> pairs;
  double theta = 0.0;
};

/// Mutual-nearest-neighbor selection: keep (i, j) iff j is the argmax of row
/// i, i the argmax of column j, and P(i, j) >= theta. Argmax ties break to
/// the lowest index. The result is injective in both coordinates.
MatchSet mnn_select(const num::Matrix& p, double theta);

/// -(1/|M|) sum log(P(i, j) + 1e-12) over ground-truth matches; empty set is
/// defined as loss 0. Throws on out-of-range indices.
num::Var matcher_loss(num::Tape& tape, num::Var p,
                      std::span<const std::pair<int, int>> gt);

}  // namespace matchdet::match
