#include <benchmark/benchmark.h>

#include "matchdet/attention.hpp"
#include "matchdet/geometry.hpp"
#include "matchdet/harness.hpp"
#include "matchdet/params.hpp"
#include "matchdet/synthdata.hpp"

namespace {

using namespace matchdet;

num::Matrix random_matrix(Rng& rng, int rows, int cols) {
  num::Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_WamForwardBackward(benchmark::State& state) {
  int side = static_cast<int>(state.range(0));
  int hw = side * side, c = 16;
  Rng rng(11);
  ParamStore store;
  attn::WamParamIds ids = attn::register_wam(store, "wam", c, 2, rng);
  num::Matrix t_vals = random_matrix(rng, hw, c);
  num::Matrix r_vals = random_matrix(rng, hw, c);
  WeightMap m_t(side, side, 1.0), m_r(side, side, 2.0);
  for (auto _ : state) {
    num::Tape tape;
    BoundParams bound(store, tape);
    num::Var c_t = tape.leaf(t_vals);
    num::Var c_r = tape.leaf(r_vals);
    auto [bar_t, bar_r] = attn::wam_forward(tape, c_t, c_r, m_t, m_r, bound, ids);
    num::Var loss = tape.add(tape.mean(bar_t), tape.mean(bar_r));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(c_t));
  }
}
BENCHMARK(BM_WamForwardBackward)->Arg(8)->Arg(16);

void BM_RansacHomography(benchmark::State& state) {
  Rng rng(7);
  geo::Homography h({1.02, 0.01, 2.0, -0.015, 0.98, -1.0, 1e-4, -2e-4, 1.0});
  std::vector<geo::Correspondence> corrs;
  for (int i = 0; i < 128; ++i) {
    geo::Point p{rng.uniform(0, 64), rng.uniform(0, 64)};
    if (i % 4 == 0) {
      corrs.push_back({{rng.uniform(0, 64), rng.uniform(0, 64)}, p, 1.0});
    } else {
      corrs.push_back({geo::apply(h, p), p, 1.0});
    }
  }
  geo::RansacOptions opts;
  for (auto _ : state) {
    auto result = geo::ransac_homography(corrs, opts, 3);
    benchmark::DoNotOptimize(result.inliers.size());
  }
}
BENCHMARK(BM_RansacHomography);

void BM_TrainStepMatchDet(benchmark::State& state) {
  harness::ExperimentConfig config;
  config.epochs = 1;
  config.train_pairs = 8;
  config.eval_pairs = 1;
  config.threads = 1;
  config.wall_clock = false;
  harness::Model model(config);
  synth::SceneSample sample = synth::generate_sample(config.scene, 5);
  for (auto _ : state) {
    num::Tape tape;
    BoundParams bound(model.store, tape);
    harness::SampleForward fwd =
        harness::forward_sample(tape, model, bound, sample, config, 9, false);
    tape.backward(fwd.total_loss);
    benchmark::DoNotOptimize(fwd.matcher_loss);
  }
}
BENCHMARK(BM_TrainStepMatchDet);

}  // namespace

BENCHMARK_MAIN();
