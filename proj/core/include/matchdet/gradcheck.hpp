#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "matchdet/tape.hpp"

namespace matchdet::num {

/// |a - b| / max(1, |a|, |b|): relative error with an absolute floor so
/// near-zero gradients compare on an absolute scale.
double relative_error(double a, double b);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
};

/// Central-difference comparison of `analytic` against finite differences of
/// f around x0. f must rebuild its computation from scratch per call.
GradCheckReport compare_grads(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x0, const std::vector<double>& analytic,
    double h = 1e-5);

std::vector<double> flatten(const std::vector<Matrix>& matrices);
std::vector<Matrix> unflatten(const std::vector<double>& flat,
                              const std::vector<std::pair<int, int>>& shapes);

/// End-to-end check of a tape-built scalar: `build` receives one leaf per
/// input matrix and returns the scalar objective. Backward gradients are
/// compared against central differences over the flattened inputs.
GradCheckReport check_tape_function(
    const std::vector<Matrix>& inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    double h = 1e-5);

}  // namespace matchdet::num
