#include "matchdet/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace matchdet::attn {

using num::Matrix;
using num::Tape;
using num::Var;

Var map_column(Tape& tape, const WeightMap& map) {
  return tape.constant(Matrix::column(map.values));
}

Var attention_matrix(Tape& tape, Var q, Var k, const WeightMap* m_q,
                     const WeightMap* m_k) {
  Var qw = m_q ? tape.row_scale(q, map_column(tape, *m_q)) : q;
  Var kw = m_k ? tape.row_scale(k, map_column(tape, *m_k)) : k;
  return tape.softmax_rows(tape.matmul(qw, tape.transpose(kw)));
}

Var weighted_attention(Tape& tape, Var q, Var k, Var v, const WeightMap& m_q,
                       const WeightMap& m_k) {
  if (m_q.cells() != q.rows() || m_k.cells() != k.rows() || k.rows() != v.rows())
    throw std::invalid_argument("weighted_attention: shape mismatch");
  for (double x : m_q.values)
    if (!(x > 0.0)) throw std::invalid_argument("weighted_attention: weights must be > 0");
  for (double x : m_k.values)
    if (!(x > 0.0)) throw std::invalid_argument("weighted_attention: weights must be > 0");
  return tape.matmul(attention_matrix(tape, q, k, &m_q, &m_k), v);
}

Var plain_attention(Tape& tape, Var q, Var k, Var v) {
  if (k.rows() != v.rows())
    throw std::invalid_argument("plain_attention: shape mismatch");
  return tape.matmul(attention_matrix(tape, q, k, nullptr, nullptr), v);
}

Var ws_attention(Tape& tape, Var q, Var k, Var v, const WeightMap* m_q,
                 const WeightMap* m_k) {
  Var aggregated = tape.matmul(attention_matrix(tape, q, k, m_q, m_k), v);
  Var alignment = tape.cosine_rows(q, aggregated);  // hw x 1
  return tape.row_scale(q, tape.add_scalar(alignment, 1.0));
}

Var ws_attention_combined(Tape& tape, Var c_t, Var c_r, Var w_e,
                          const WeightMap* m_t, const WeightMap* m_r) {
  Var pair_branch = ws_attention(tape, c_t, c_r, c_r, m_t, m_r);
  Var embed_branch = ws_attention(tape, c_t, w_e, w_e, nullptr, nullptr);
  return tape.add(pair_branch, embed_branch);
}

BlockParamIds register_block(ParamStore& store, std::string_view prefix,
                             int channels, Rng& rng) {
  std::string p(prefix);
  int hidden = 4 * channels;
  BlockParamIds ids;
  ids.w_q = store.add(p + ".w_q", orthogonal_init(channels, channels, 0.1, rng));
  ids.w_k = store.add(p + ".w_k", orthogonal_init(channels, channels, 0.1, rng));
  ids.w_v = store.add(p + ".w_v", orthogonal_init(channels, channels, 0.1, rng));
  ids.w_o = store.add(p + ".w_o", Matrix(channels, channels));
  ids.ffn1 = store.add(p + ".ffn1", orthogonal_init(channels, hidden, 0.1, rng));
  ids.ffn1_b = store.add(p + ".ffn1_b", Matrix(1, hidden));
  ids.ffn2 = store.add(p + ".ffn2", Matrix(hidden, channels));
  ids.ffn2_b = store.add(p + ".ffn2_b", Matrix(1, channels));
  ids.ln_q_gain = store.add(p + ".ln_q_gain", Matrix::ones(channels, 1));
  ids.ln_q_bias = store.add(p + ".ln_q_bias", Matrix(1, channels));
  ids.ln_kv_gain = store.add(p + ".ln_kv_gain", Matrix::ones(channels, 1));
  ids.ln_kv_bias = store.add(p + ".ln_kv_bias", Matrix(1, channels));
  ids.ln_ffn_gain = store.add(p + ".ln_ffn_gain", Matrix::ones(channels, 1));
  ids.ln_ffn_bias = store.add(p + ".ln_ffn_bias", Matrix(1, channels));
  return ids;
}

namespace {
Var affine_layer_norm(Tape& tape, Var x, Var gain, Var bias) {
  return tape.add_row_bias(tape.col_scale(tape.layer_norm_rows(x), gain), bias);
}
}  // namespace

Var transformer_block(Tape& tape, Var x, Var context, const BoundParams& params,
                      const BlockParamIds& ids, AttentionMode mode,
                      const BlockMaps& maps, std::optional<Var> w_e) {
  Var xq = affine_layer_norm(tape, x, params[ids.ln_q_gain], params[ids.ln_q_bias]);
  Var kv = affine_layer_norm(tape, context, params[ids.ln_kv_gain],
                             params[ids.ln_kv_bias]);
  Var q = tape.matmul(xq, params[ids.w_q]);
  Var k = tape.matmul(kv, params[ids.w_k]);
  Var v = tape.matmul(kv, params[ids.w_v]);

  Var core;
  switch (mode) {
    case AttentionMode::kSelf:
      core = plain_attention(tape, q, k, v);
      break;
    case AttentionMode::kWeighted:
      core = tape.matmul(attention_matrix(tape, q, k, maps.m_q, maps.m_k), v);
      break;
    case AttentionMode::kWeightedSpatial:
      if (!w_e)
        throw std::invalid_argument("transformer_block: weighted-spatial mode needs an embedding");
      core = ws_attention_combined(tape, q, k, *w_e, maps.m_q, maps.m_k);
      break;
    default:
      throw std::invalid_argument("transformer_block: unknown mode");
  }

  Var y = tape.add(x, tape.matmul(core, params[ids.w_o]));
  Var f = affine_layer_norm(tape, y, params[ids.ln_ffn_gain], params[ids.ln_ffn_bias]);
  Var hidden = tape.relu(
      tape.add_row_bias(tape.matmul(f, params[ids.ffn1]), params[ids.ffn1_b]));
  Var ffn_out =
      tape.add_row_bias(tape.matmul(hidden, params[ids.ffn2]), params[ids.ffn2_b]);
  return tape.add(y, ffn_out);
}

WamParamIds register_wam(ParamStore& store, std::string_view prefix, int channels,
                         int n_wam, Rng& rng) {
  if (n_wam < 1) throw std::invalid_argument("register_wam: n_wam must be >= 1");
  WamParamIds ids;
  ids.rounds = n_wam;
  std::string p(prefix);
  for (int r = 0; r < n_wam; ++r) {
    std::string base = p + ".round" + std::to_string(r);
    ids.cross_t.push_back(register_block(store, base + ".cross_t", channels, rng));
    ids.cross_r.push_back(register_block(store, base + ".cross_r", channels, rng));
    ids.self_t.push_back(register_block(store, base + ".self_t", channels, rng));
    ids.self_r.push_back(register_block(store, base + ".self_r", channels, rng));
  }
  return ids;
}

std::pair<Var, Var> wam_forward(Tape& tape, Var c_t, Var c_r, const WeightMap& m_t,
                                const WeightMap& m_r, const BoundParams& params,
                                const WamParamIds& ids, bool weighted) {
  BlockMaps maps_t, maps_r;
  if (weighted) {
    maps_t = {&m_t, &m_r};
    maps_r = {&m_r, &m_t};
  }
  for (int r = 0; r < ids.rounds; ++r) {
    // Both directions read the same pre-round features.
    Var t_cross = transformer_block(tape, c_t, c_r, params, ids.cross_t[r],
                                    AttentionMode::kWeighted, maps_t);
    Var r_cross = transformer_block(tape, c_r, c_t, params, ids.cross_r[r],
                                    AttentionMode::kWeighted, maps_r);
    c_t = transformer_block(tape, t_cross, t_cross, params, ids.self_t[r],
                            AttentionMode::kSelf);
    c_r = transformer_block(tape, r_cross, r_cross, params, ids.self_r[r],
                            AttentionMode::kSelf);
  }
  return {c_t, c_r};
}

WsamParamIds register_wsam(ParamStore& store, std::string_view prefix,
                           int channels, int num_classes, int n_wsam, Rng& rng) {
  if (n_wsam < 1) throw std::invalid_argument("register_wsam: n_wsam must be >= 1");
  WsamParamIds ids;
  ids.rounds = n_wsam;
  std::string p(prefix);
  for (int r = 0; r < n_wsam; ++r) {
    std::string base = p + ".round" + std::to_string(r);
    ids.ws.push_back(register_block(store, base + ".ws", channels, rng));
    ids.self.push_back(register_block(store, base + ".self", channels, rng));
  }
  // Unit-norm random rows, one semantic direction per class.
  Matrix w_e(num_classes, channels);
  for (int row = 0; row < num_classes; ++row) {
    double norm = 0.0;
    for (int c = 0; c < channels; ++c) {
      w_e(row, c) = rng.normal();
      norm += w_e(row, c) * w_e(row, c);
    }
    norm = std::sqrt(norm);
    for (int c = 0; c < channels; ++c) w_e(row, c) /= norm;
  }
  ids.w_e = store.add(p + ".w_e", std::move(w_e));
  return ids;
}

Var wsam_forward(Tape& tape, Var c_t, Var c_r, const WeightMap& m_t,
                 const WeightMap& m_r, const BoundParams& params,
                 const WsamParamIds& ids, bool weighted) {
  BlockMaps maps;
  if (weighted) maps = {&m_t, &m_r};
  for (int r = 0; r < ids.rounds; ++r) {
    c_t = transformer_block(tape, c_t, c_r, params, ids.ws[r],
                            AttentionMode::kWeightedSpatial, maps,
                            params[ids.w_e]);
    c_t = transformer_block(tape, c_t, c_t, params, ids.self[r],
                            AttentionMode::kSelf);
  }
  return c_t;
}

TwoComponentPair construct_two_component_pair(const TwoComponentSpec& spec,
                                              std::uint64_t seed) {
  if (spec.channels < 4)
    throw std::invalid_argument("two-component pair needs >= 4 channels");
  if (spec.v < 0.0 || spec.v > 1.0 || spec.u < 0.0 || spec.u > 1.0)
    throw std::invalid_argument("two-component pair: v, u must be in [0, 1]");
  Rng rng(seed);
  // Orthonormal frame {f1, f2, b1, b2}; columns of a random orthogonal init.
  Matrix frame = orthogonal_init(spec.channels, 4, 1.0, rng);
  auto direction = [&](int col, double a, double b, int col2) {
    Matrix d(1, spec.channels);
    for (int c = 0; c < spec.channels; ++c)
      d(0, c) = a * frame(c, col) + b * frame(c, col2);
    return d;
  };
  Matrix t_fg = direction(0, 1.0, 0.0, 1);
  Matrix r_fg = direction(0, spec.v, std::sqrt(1.0 - spec.v * spec.v), 1);
  Matrix t_bg = direction(2, 1.0, 0.0, 3);
  Matrix r_bg = direction(2, spec.u, std::sqrt(1.0 - spec.u * spec.u), 3);

  std::vector<bool> is_fg(spec.cells, false);
  for (int i : spec.fg_cells) {
    if (i < 0 || i >= spec.cells)
      throw std::invalid_argument("two-component pair: fg cell out of range");
    is_fg[i] = true;
  }
  FeatureGrid target(1, spec.cells, spec.channels);
  FeatureGrid reference(1, spec.cells, spec.channels);
  for (int i = 0; i < spec.cells; ++i) {
    const Matrix& t_row = is_fg[i] ? t_fg : t_bg;
    const Matrix& r_row = is_fg[i] ? r_fg : r_bg;
    for (int c = 0; c < spec.channels; ++c) {
      target.values(i, c) = t_row(0, c);
      reference.values(i, c) = r_row(0, c);
    }
  }
  return {std::move(target), std::move(reference), std::move(t_fg)};
}

}  // namespace matchdet::attn
