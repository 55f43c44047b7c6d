#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "matchdet/matrix.hpp"
#include "matchdet/rng.hpp"
#include "matchdet/tape.hpp"

namespace matchdet {

/// Flat, ordered registry of named learnable matrices. Ordering is the
/// registration order, which makes SGD updates and checkpoints byte-stable.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    num::Matrix value;
  };

  /// Registers a parameter; names must be unique. Returns its id.
  int add(std::string name, num::Matrix init);

  int count() const { return static_cast<int>(entries_.size()); }
  const Entry& at(int id) const { return entries_[id]; }
  num::Matrix& value(int id) { return entries_[id].value; }
  const num::Matrix& value(int id) const { return entries_[id].value; }
  int find(std::string_view name) const;  // -1 when absent

  /// In-place SGD step: value -= lr * grad, one grad per parameter id.
  void sgd_step(const std::vector<num::Matrix>& grads, double lr);

 private:
  std::vector<Entry> entries_;
};

/// All parameters registered as leaves on one tape, aligned with store ids.
class BoundParams {
 public:
  BoundParams(const ParamStore& store, num::Tape& tape);
  /// Binding over an explicit leaf list (gradient-check fixtures).
  explicit BoundParams(std::vector<num::Var> vars) : vars_(std::move(vars)) {}
  num::Var operator[](int id) const { return vars_[id]; }
  int count() const { return static_cast<int>(vars_.size()); }

 private:
  std::vector<num::Var> vars_;
};

/// Gradients of the last backward() for every parameter, aligned with ids.
std::vector<num::Matrix> collect_grads(const num::Tape& tape,
                                       const BoundParams& bound,
                                       const ParamStore& store);

/// Adds b into a elementwise (shape-aligned accumulation across samples).
void accumulate_grads(std::vector<num::Matrix>& a,
                      const std::vector<num::Matrix>& b);

/// Random matrix with orthonormal columns (rows if cols > rows), scaled.
num::Matrix orthogonal_init(int rows, int cols, double gain, Rng& rng);

num::Matrix normal_init(int rows, int cols, double sigma, Rng& rng);

}  // namespace matchdet
