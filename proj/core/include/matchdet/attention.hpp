#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "matchdet/params.hpp"
#include "matchdet/tape.hpp"
#include "matchdet/types.hpp"

namespace matchdet::attn {

/// Constant (h*w) x 1 column for a weight map.
num::Var map_column(num::Tape& tape, const WeightMap& map);

/// Softmax affinity matrix sigma((Q ⊙ M_Q)(K ⊙ M_K)^T). Null maps mean the
/// plain unweighted affinity. No 1/sqrt(d) scaling anywhere: the weighted
/// formulation is implemented verbatim and the plain path matches it so the
/// all-ones reduction is exact.
num::Var attention_matrix(num::Tape& tape, num::Var q, num::Var k,
                          const WeightMap* m_q, const WeightMap* m_k);

/// sigma((Q ⊙ M_Q)(K ⊙ M_K)^T) V.
num::Var weighted_attention(num::Tape& tape, num::Var q, num::Var k, num::Var v,
                            const WeightMap& m_q, const WeightMap& m_k);

/// Plain cross attention sigma(Q K^T) V.
num::Var plain_attention(num::Tape& tape, num::Var q, num::Var k, num::Var v);

/// Spatial re-weighting: Q' = Q ⊙ (1 + cos(Q(i), V~Q(i))) where V~Q is the
/// weighted attention aggregation of V. Null maps -> unweighted aggregation.
num::Var ws_attention(num::Tape& tape, num::Var q, num::Var k, num::Var v,
                      const WeightMap* m_q, const WeightMap* m_k);

/// Sum of the pair-feature branch and the semantic-embedding branch:
/// WSAttention((c_t, c_r, c_r), M) + WSAttention(c_t, w_e, w_e). The
/// embedding branch always runs unweighted.
num::Var ws_attention_combined(num::Tape& tape, num::Var c_t, num::Var c_r,
                               num::Var w_e, const WeightMap* m_t,
                               const WeightMap* m_r);

enum class AttentionMode { kSelf, kWeighted, kWeightedSpatial };

/// One pre-normalization residual block: single attention head, the core
/// selected by mode, and a x4 relu feed-forward. Output projection and the
/// second FFN layer are zero-initialized so a fresh block is the identity.
struct BlockParamIds {
  int w_q = -1, w_k = -1, w_v = -1, w_o = -1;
  int ffn1 = -1, ffn1_b = -1, ffn2 = -1, ffn2_b = -1;
  int ln_q_gain = -1, ln_q_bias = -1;
  int ln_kv_gain = -1, ln_kv_bias = -1;
  int ln_ffn_gain = -1, ln_ffn_bias = -1;
};
BlockParamIds register_block(ParamStore& store, std::string_view prefix,
                             int channels, Rng& rng);

struct BlockMaps {
  const WeightMap* m_q = nullptr;
  const WeightMap* m_k = nullptr;
};

num::Var transformer_block(num::Tape& tape, num::Var x, num::Var context,
                           const BoundParams& params, const BlockParamIds& ids,
                           AttentionMode mode, const BlockMaps& maps = {},
                           std::optional<num::Var> w_e = std::nullopt);

/// Matcher-side stack: per round, a weighted-attention block in each
/// direction followed by a self-attention block, parameters independent per
/// direction and round.
struct WamParamIds {
  std::vector<BlockParamIds> cross_t, self_t, cross_r, self_r;
  int rounds = 0;
};
WamParamIds register_wam(ParamStore& store, std::string_view prefix, int channels,
                         int n_wam, Rng& rng);
std::pair<num::Var, num::Var> wam_forward(num::Tape& tape, num::Var c_t,
                                          num::Var c_r, const WeightMap& m_t,
                                          const WeightMap& m_r,
                                          const BoundParams& params,
                                          const WamParamIds& ids,
                                          bool weighted = true);

/// Detector-side stack: per round, a weighted-spatial block against the
/// reference features followed by a self-attention block. The semantic
/// embedding (classes x channels) is shared across rounds.
struct WsamParamIds {
  std::vector<BlockParamIds> ws, self;
  int w_e = -1;
  int rounds = 0;
};
WsamParamIds register_wsam(ParamStore& store, std::string_view prefix,
                           int channels, int num_classes, int n_wsam, Rng& rng);
num::Var wsam_forward(num::Tape& tape, num::Var c_t, num::Var c_r,
                      const WeightMap& m_t, const WeightMap& m_r,
                      const BoundParams& params, const WsamParamIds& ids,
                      bool weighted = true);

/// Analysis fixture: a feature pair whose foreground rows live in one 2-dim
/// subspace with pairwise cosine v and background rows in an orthogonal one
/// with cosine u. All rows unit norm. Cells listed in fg_cells carry the
/// foreground component. Random orthonormal embedding per seed.
struct TwoComponentSpec {
  double v = 0.5;
  double u = 0.5;
  int channels = 4;
  int cells = 8;
  std::vector<int> fg_cells;
};
struct TwoComponentPair {
  FeatureGrid target;
  FeatureGrid reference;
  // Unit directions used by the construction (foreground target direction
  // doubles as the semantic embedding in analysis tests).
  num::Matrix fg_target_direction;  // 1 x channels
};
TwoComponentPair construct_two_component_pair(const TwoComponentSpec& spec,
                                              std::uint64_t seed);

}  // namespace matchdet::attn
