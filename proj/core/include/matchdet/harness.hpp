#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "matchdet/attention.hpp"
#include "matchdet/geometry.hpp"
#include "matchdet/minidet.hpp"
#include "matchdet/params.hpp"
#include "matchdet/synthdata.hpp"
#include "matchdet/weightgen.hpp"

namespace matchdet::harness {

/// Pipeline variants: the baseline, the full network, and the module
/// subsets used by the ablation matrix.
enum class Variant { kMdBase, kWam, kWamBoxFilter, kWamWsam, kMatchDet };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
bool uses_wam(Variant v);
bool uses_wsam(Variant v);
bool uses_box_filter(Variant v);

struct LrSchedule {
  double initial = 0.01;
  double decay_factor = 0.1;
  int decay_epoch = 8;  // epochs before this 0-based epoch run at `initial`
};

struct ExperimentConfig {
  Variant variant = Variant::kMatchDet;
  wgen::Setting setting = wgen::Setting::kGtBoxR;
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double beta = 1.0;
  double lambda = 1.0;
  double tau = 0.1;
  double theta = 0.2;
  int n_wam = 2;
  int n_wsam = 1;
  LrSchedule lr;
  int epochs = 12;
  int batch_size = 8;
  int train_pairs = 256;
  int eval_pairs = 64;
  std::uint64_t seed = 1;
  synth::SceneSpec scene;
  int ransac_iters = 1000;
  double ransac_inlier_px = 3.0;
  int train_ransac_iters = 250;  // interim estimate during training steps
  double det_score_thresh = 0.05;
  double det_nms_iou = 0.6;
  double box_source_thresh = 0.3;  // detections feeding Box Filter / PreBoxR
  int threads = 0;                 // 0 = hardware concurrency
  bool wall_clock = true;          // false pins wall_s to 0 for byte-stable reports
  bool force_uniform_maps = false; // all-ones maps through the weighted path
  bool plain_attention = false;    // bypass map multiplication entirely
  std::string out_dir;

  void validate() const;  // throws std::invalid_argument
};

ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig config_from_json_file(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

struct EpochStats {
  double total = 0.0;
  double matcher = 0.0;
  double detector = 0.0;
  double seg = 0.0;
  double eval_total = 0.0;
};

struct RunReport {
  std::string variant;
  std::string setting;
  std::vector<EpochStats> epoch_losses;
  double auc3 = 0.0, auc5 = 0.0, auc10 = 0.0;
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
  double wall_s = 0.0;
  std::uint64_t seed = 0;
  std::string config_json;
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(std::string_view text);

/// One CSV row per report, pinned header
/// "variant,setting,AP,AP50,AP75,AUC3,AUC5,AUC10,seed,wall_s".
std::string reports_to_csv(std::span<const RunReport> reports);

/// Learnable state for one run: shared linear backbone, optional attention
/// stacks, optional segmentation decoder, detection head.
struct Model {
  explicit Model(const ExperimentConfig& config);
  ParamStore store;
  int backbone_w = -1, backbone_b = -1;
  attn::WamParamIds wam;
  attn::WsamParamIds wsam;
  wgen::DecoderParamIds decoder;
  det::HeadParamIds head;
  bool has_wam = false, has_wsam = false, has_decoder = false;
};

struct SampleForward {
  num::Var total_loss;
  double matcher_loss = 0.0;
  double detector_loss = 0.0;
  double seg_loss = 0.0;
  std::vector<det::Detection> detections;       // decoded target detections
  std::optional<geo::Homography> h_est;         // final estimate (eval mode)
  int matches_kept = 0;
};

/// Runs one sample through the configured pipeline on the caller's tape.
/// In eval mode the final homography is estimated with the full RANSAC
/// budget; during training only the interim estimate needed by the
/// detector-side maps is computed.
SampleForward forward_sample(num::Tape& tape, const Model& model,
                             const BoundParams& params,
                             const synth::SceneSample& sample,
                             const ExperimentConfig& config,
                             std::uint64_t ransac_seed, bool eval_mode);

struct TrainResult {
  RunReport report;
  Model model;
};

/// Full training run: seeded data generation, SGD with the configured
/// schedule, per-epoch held-out evaluation, final metric computation.
/// Deterministic for a fixed config: thread count does not change results.
TrainResult train(const ExperimentConfig& config);

struct GradSuiteResult {
  bool ok = false;
  double max_rel_err = 0.0;
  double seconds = 0.0;
};

/// Backward-vs-central-difference checks across every differentiable
/// operation (attention cores, blocks, decoder, match and detection
/// losses), 100 random instances each. Prints one line per group.
GradSuiteResult run_gradient_suite(std::ostream& out);

struct AblateOptions {
  std::vector<Variant> variants;
  std::vector<wgen::Setting> settings;
  int seeds = 5;
  bool assert_orderings = false;
  ExperimentConfig base;
  std::string out_dir;
};

struct AblateResult {
  std::vector<RunReport> rows;        // aggregated, one per (variant, setting)
  std::vector<RunReport> runs;        // every individual run
  bool orderings_ok = true;
  std::string summary;
};

/// Runs the (variant x setting x seed) matrix, aggregates seed means, and
/// optionally asserts the directional orderings. Writes ablate.csv and
/// runs.json into out_dir when set.
AblateResult run_ablation(const AblateOptions& options);

}  // namespace matchdet::harness
