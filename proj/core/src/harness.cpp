#include "matchdet/harness.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "matchdet/gradcheck.hpp"
#include "matchdet/io.hpp"
#include "matchdet/matchhead.hpp"

namespace matchdet::harness {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
using num::Matrix;
using num::Tape;
using num::Var;

namespace {

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int k = std::min(threads, n);
  pool.reserve(k);
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<geo::Correspondence> matches_to_correspondences(
    const match::MatchSet& matches, int w, double stride) {
  std::vector<geo::Correspondence> corrs;
  corrs.reserve(matches.pairs.size());
  for (const auto& m : matches.pairs) {
    geo::Point target{(m.i % w + 0.5) * stride, (m.i / w + 0.5) * stride};
    geo::Point reference{(m.j % w + 0.5) * stride, (m.j / w + 0.5) * stride};
    corrs.push_back({target, reference, m.p});
  }
  return corrs;
}

void fill_uniform(WeightMap& map) {
  for (double& v : map.values) v = 1.0;
}

struct SampleLossesRecord {
  double total = 0.0;
  double matcher = 0.0;
  double detector = 0.0;
  double seg = 0.0;
};

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kMdBase: return "mdbase";
    case Variant::kWam: return "wam";
    case Variant::kWamBoxFilter: return "wam_bf";
    case Variant::kWamWsam: return "wam_wsam";
    case Variant::kMatchDet: return "matchdet";
  }
  return "?";
}

Variant variant_from_string(std::string_view name) {
  if (name == "mdbase") return Variant::kMdBase;
  if (name == "wam") return Variant::kWam;
  if (name == "wam_bf") return Variant::kWamBoxFilter;
  if (name == "wam_wsam") return Variant::kWamWsam;
  if (name == "matchdet") return Variant::kMatchDet;
  throw std::invalid_argument("unknown variant: " + std::string(name));
}

bool uses_wam(Variant v) { return v != Variant::kMdBase; }
bool uses_wsam(Variant v) {
  return v == Variant::kWamWsam || v == Variant::kMatchDet;
}
bool uses_box_filter(Variant v) {
  return v == Variant::kWamBoxFilter || v == Variant::kMatchDet;
}

void ExperimentConfig::validate() const {
  if (alpha1 < 0 || alpha2 < 0 || beta < 0 || lambda < 0)
    throw std::invalid_argument("config: emphasis/balance weights must be >= 0");
  if (tau <= 0) throw std::invalid_argument("config: tau must be > 0");
  if (theta < 0) throw std::invalid_argument("config: theta must be >= 0");
  if (n_wam < 1 || n_wsam < 1)
    throw std::invalid_argument("config: n_wam and n_wsam must be >= 1");
  if (epochs < 1 || batch_size < 1 || train_pairs < 1 || eval_pairs < 1)
    throw std::invalid_argument("config: schedule counts must be >= 1");
  if (lr.initial <= 0 || lr.decay_factor <= 0)
    throw std::invalid_argument("config: learning rate must be > 0");
  if (ransac_iters < 1 || train_ransac_iters < 1)
    throw std::invalid_argument("config: ransac iterations must be >= 1");
}

// ---------------------------------------------------------------------------
// Config JSON.

namespace {
template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

ExperimentConfig config_from_json(std::string_view text) {
  json j = json::parse(text);
  ExperimentConfig c;
  static const std::set<std::string> known = {
      "variant", "setting", "alpha1", "alpha2", "beta", "lambda", "tau",
      "theta", "n_wam", "n_wsam", "lr", "epochs", "batch_size", "train_pairs",
      "eval_pairs", "seed", "scene", "ransac_iters", "ransac_inlier_px",
      "train_ransac_iters", "det_score_thresh", "det_nms_iou",
      "box_source_thresh", "threads", "wall_clock", "force_uniform_maps",
      "plain_attention", "out_dir"};
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw std::invalid_argument("config: unknown field '" + item.key() + "'");

  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("setting")) c.setting = wgen::setting_from_string(j.at("setting").get<std::string>());
  read_field(j, "alpha1", c.alpha1);
  read_field(j, "alpha2", c.alpha2);
  read_field(j, "beta", c.beta);
  read_field(j, "lambda", c.lambda);
  read_field(j, "tau", c.tau);
  read_field(j, "theta", c.theta);
  read_field(j, "n_wam", c.n_wam);
  read_field(j, "n_wsam", c.n_wsam);
  if (j.contains("lr")) {
    const json& l = j.at("lr");
    read_field(l, "initial", c.lr.initial);
    read_field(l, "decay_factor", c.lr.decay_factor);
    read_field(l, "decay_epoch", c.lr.decay_epoch);
  }
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "train_pairs", c.train_pairs);
  read_field(j, "eval_pairs", c.eval_pairs);
  read_field(j, "seed", c.seed);
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    read_field(s, "h", c.scene.h);
    read_field(s, "w", c.scene.w);
    read_field(s, "c", c.scene.c);
    read_field(s, "min_objects", c.scene.min_objects);
    read_field(s, "max_objects", c.scene.max_objects);
    read_field(s, "num_classes", c.scene.num_classes);
    read_field(s, "noise_sigma", c.scene.noise_sigma);
    read_field(s, "warp_magnitude", c.scene.warp_magnitude);
    read_field(s, "jitter_sigma", c.scene.jitter_sigma);
    read_field(s, "min_object_cells", c.scene.min_object_cells);
    read_field(s, "max_object_cells", c.scene.max_object_cells);
    read_field(s, "seed", c.scene.seed);
  }
  read_field(j, "ransac_iters", c.ransac_iters);
  read_field(j, "ransac_inlier_px", c.ransac_inlier_px);
  read_field(j, "train_ransac_iters", c.train_ransac_iters);
  read_field(j, "det_score_thresh", c.det_score_thresh);
  read_field(j, "det_nms_iou", c.det_nms_iou);
  read_field(j, "box_source_thresh", c.box_source_thresh);
  read_field(j, "threads", c.threads);
  read_field(j, "wall_clock", c.wall_clock);
  read_field(j, "force_uniform_maps", c.force_uniform_maps);
  read_field(j, "plain_attention", c.plain_attention);
  read_field(j, "out_dir", c.out_dir);
  c.validate();
  return c;
}

ExperimentConfig config_from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return config_from_json(buffer.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j{
      {"variant", std::string(to_string(c.variant))},
      {"setting", std::string(wgen::to_string(c.setting))},
      {"alpha1", c.alpha1},
      {"alpha2", c.alpha2},
      {"beta", c.beta},
      {"lambda", c.lambda},
      {"tau", c.tau},
      {"theta", c.theta},
      {"n_wam", c.n_wam},
      {"n_wsam", c.n_wsam},
      {"lr", ordered_json{{"initial", c.lr.initial},
                          {"decay_factor", c.lr.decay_factor},
                          {"decay_epoch", c.lr.decay_epoch}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"train_pairs", c.train_pairs},
      {"eval_pairs", c.eval_pairs},
      {"seed", c.seed},
      {"scene", ordered_json{{"h", c.scene.h},
                             {"w", c.scene.w},
                             {"c", c.scene.c},
                             {"min_objects", c.scene.min_objects},
                             {"max_objects", c.scene.max_objects},
                             {"num_classes", c.scene.num_classes},
                             {"noise_sigma", c.scene.noise_sigma},
                             {"warp_magnitude", c.scene.warp_magnitude},
                             {"jitter_sigma", c.scene.jitter_sigma},
                             {"min_object_cells", c.scene.min_object_cells},
                             {"max_object_cells", c.scene.max_object_cells},
                             {"seed", c.scene.seed}}},
      {"ransac_iters", c.ransac_iters},
      {"ransac_inlier_px", c.ransac_inlier_px},
      {"train_ransac_iters", c.train_ransac_iters},
      {"det_score_thresh", c.det_score_thresh},
      {"det_nms_iou", c.det_nms_iou},
      {"box_source_thresh", c.box_source_thresh},
      {"threads", c.threads},
      {"wall_clock", c.wall_clock},
      {"force_uniform_maps", c.force_uniform_maps},
      {"plain_attention", c.plain_attention},
      {"out_dir", c.out_dir}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Reports.

std::string report_to_json(const RunReport& r) {
  ordered_json epochs = ordered_json::array();
  for (const EpochStats& e : r.epoch_losses)
    epochs.push_back(ordered_json{{"total", e.total},
                                  {"matcher", e.matcher},
                                  {"detector", e.detector},
                                  {"seg", e.seg},
                                  {"eval_total", e.eval_total}});
  ordered_json j{{"variant", r.variant},
                 {"setting", r.setting},
                 {"epoch_losses", epochs},
                 {"auc3", r.auc3},
                 {"auc5", r.auc5},
                 {"auc10", r.auc10},
                 {"ap", r.ap},
                 {"ap50", r.ap50},
                 {"ap75", r.ap75},
                 {"wall_s", r.wall_s},
                 {"seed", r.seed},
                 {"config", json::parse(r.config_json.empty() ? "{}" : r.config_json)}};
  return j.dump();
}

RunReport report_from_json(std::string_view text) {
  json j = json::parse(text);
  RunReport r;
  r.variant = j.at("variant").get<std::string>();
  r.setting = j.at("setting").get<std::string>();
  for (const json& e : j.at("epoch_losses")) {
    EpochStats stats;
    stats.total = e.at("total").get<double>();
    stats.matcher = e.at("matcher").get<double>();
    stats.detector = e.at("detector").get<double>();
    stats.seg = e.at("seg").get<double>();
    stats.eval_total = e.at("eval_total").get<double>();
    r.epoch_losses.push_back(stats);
  }
  r.auc3 = j.at("auc3").get<double>();
  r.auc5 = j.at("auc5").get<double>();
  r.auc10 = j.at("auc10").get<double>();
  r.ap = j.at("ap").get<double>();
  r.ap50 = j.at("ap50").get<double>();
  r.ap75 = j.at("ap75").get<double>();
  r.wall_s = j.at("wall_s").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_json = j.at("config").dump();
  return r;
}

std::string reports_to_csv(std::span<const RunReport> reports) {
  std::string out = "variant,setting,AP,AP50,AP75,AUC3,AUC5,AUC10,seed,wall_s\n";
  char line[512];
  for (const RunReport& r : reports) {
    std::snprintf(line, sizeof line,
                  "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%llu,%.3f\n",
                  r.variant.c_str(), r.setting.c_str(), r.ap, r.ap50, r.ap75,
                  r.auc3, r.auc5, r.auc10,
                  static_cast<unsigned long long>(r.seed), r.wall_s);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model.

Model::Model(const ExperimentConfig& config) {
  Rng root(mix_seed(config.seed, 0x90de1));
  // Independent streams per component: shared components get identical
  // initial values across variants under the same seed.
  Rng backbone_rng = root.fork(1);
  Rng decoder_rng = root.fork(2);
  Rng wam_rng = root.fork(3);
  Rng wsam_rng = root.fork(4);
  Rng head_rng = root.fork(5);

  int c = config.scene.c;
  backbone_w = store.add("backbone.w", orthogonal_init(c, c, 1.0, backbone_rng));
  backbone_b = store.add("backbone.b", Matrix(1, c));

  has_wam = uses_wam(config.variant);
  has_wsam = uses_wsam(config.variant);
  // The light decoder exists whenever the weights generators are in play.
  has_decoder = has_wam || has_wsam;

  if (has_decoder) decoder = wgen::register_decoder(store, "decoder", c, decoder_rng);
  if (has_wam) wam = attn::register_wam(store, "wam", c, config.n_wam, wam_rng);
  if (has_wsam)
    wsam = attn::register_wsam(store, "wsam", c, config.scene.num_classes,
                               config.n_wsam, wsam_rng);
  head = det::register_head(store, "head", c, config.scene.num_classes, head_rng);
}

// ---------------------------------------------------------------------------
// Forward pass.

SampleForward forward_sample(Tape& tape, const Model& model,
                             const BoundParams& params,
                             const synth::SceneSample& sample,
                             const ExperimentConfig& config,
                             std::uint64_t ransac_seed, bool eval_mode) {
  const int h = sample.ref_grid.h, w = sample.ref_grid.w;
  const double stride = 1.0;
  const bool use_bf = uses_box_filter(config.variant) && !config.plain_attention;
  const bool weighted = !config.plain_attention;

  // Stage 1: shared backbone (per-cell linear projection).
  Var tgt_in = tape.constant(sample.tgt_grid.values);
  Var ref_in = tape.constant(sample.ref_grid.values);
  Var c_t = tape.add_row_bias(tape.matmul(tgt_in, params[model.backbone_w]),
                              params[model.backbone_b]);
  Var c_r = tape.add_row_bias(tape.matmul(ref_in, params[model.backbone_w]),
                              params[model.backbone_b]);

  // Decoder masks for the weights generators.
  std::optional<Var> mask_t_var, mask_r_var;
  SegMask mask_t, mask_r;
  if (model.has_decoder) {
    mask_t_var = wgen::light_decoder(tape, c_t, params, model.decoder);
    mask_r_var = wgen::light_decoder(tape, c_r, params, model.decoder);
    mask_t = wgen::mask_from_values(mask_t_var->value(), h, w);
    mask_r = wgen::mask_from_values(mask_r_var->value(), h, w);
  }

  // Reference-image predictions for the PreBoxR setting: an MDBase-style
  // pass of the detection head over the raw reference features.
  std::vector<BBox> pred_boxes_r;
  if (config.setting == wgen::Setting::kPreBoxR && (model.has_wam || model.has_wsam || use_bf)) {
    det::HeadOutputs ref_head = det::det_head(tape, c_r, params, model.head);
    for (const det::Detection& d :
         det::decode_detections(ref_head, h, w, stride, config.box_source_thresh,
                                config.det_nms_iou))
      pred_boxes_r.push_back(d.box);
  }

  // Stage 2: matcher branch.
  Var cbar_t = c_t, cbar_r = c_r;
  if (model.has_wam) {
    wgen::WamMapInputs inputs;
    inputs.gt_boxes_r = &sample.boxes_r;
    inputs.pred_boxes_r = &pred_boxes_r;
    inputs.mask_t = model.has_decoder ? &mask_t : nullptr;
    inputs.mask_r = model.has_decoder ? &mask_r : nullptr;
    auto [m_t, m_r] = wgen::generate_wam_maps(config.setting, inputs, h, w, stride,
                                              config.alpha1);
    if (config.force_uniform_maps) {
      fill_uniform(m_t);
      fill_uniform(m_r);
    }
    std::tie(cbar_t, cbar_r) =
        attn::wam_forward(tape, c_t, c_r, m_t, m_r, params, model.wam, weighted);
  }
  Var scores = match::score_matrix(tape, cbar_t, cbar_r, config.tau);
  Var p = match::dual_softmax(tape, scores);

  // Interim homography for the detector-side weights generator.
  const bool need_h_prime =
      model.has_wsam ||
      (use_bf && config.setting == wgen::Setting::kNoBoxR);
  geo::Homography h_prime;  // identity fallback keeps the run alive
  if (need_h_prime) {
    match::MatchSet interim = match::mnn_select(p.value(), config.theta);
    auto corrs = matches_to_correspondences(interim, w, stride);
    if (corrs.size() >= 4) {
      geo::RansacOptions opts;
      opts.max_iters = eval_mode ? config.ransac_iters : config.train_ransac_iters;
      opts.inlier_px = config.ransac_inlier_px;
      try {
        h_prime = geo::ransac_homography(corrs, opts, mix_seed(ransac_seed, 1)).model;
      } catch (const std::exception&) {
        // keep identity
      }
    }
  }

  // Stage 3: detector branch.
  const std::vector<BBox>& boxes_r_for_setting =
      config.setting == wgen::Setting::kGtBoxR ? sample.boxes_r : pred_boxes_r;
  WeightMap wsam_m_t, wsam_m_r;
  bool have_wsam_maps = false;
  if (model.has_wsam || use_bf) {
    std::tie(wsam_m_t, wsam_m_r) = wgen::generate_wsam_maps(
        config.setting, boxes_r_for_setting,
        model.has_decoder ? &mask_t : nullptr,
        model.has_decoder ? &mask_r : nullptr, h_prime, config.alpha2, h, w,
        stride);
    if (config.force_uniform_maps) {
      fill_uniform(wsam_m_t);
      fill_uniform(wsam_m_r);
    }
    have_wsam_maps = true;
  }
  Var c_t_det = c_t;
  if (model.has_wsam)
    c_t_det = attn::wsam_forward(tape, c_t, c_r, wsam_m_t, wsam_m_r, params,
                                 model.wsam, weighted);
  det::HeadOutputs head_out = det::det_head(tape, c_t_det, params, model.head);

  SampleForward out;
  out.detections = det::decode_detections(head_out, h, w, stride,
                                          config.det_score_thresh, config.det_nms_iou);

  // Stage 4: Box Filter and the final match probabilities.
  Var p_final = p;
  if (use_bf && have_wsam_maps) {
    std::vector<BBox> bf_boxes;
    for (const det::Detection& d : out.detections)
      if (d.score >= config.box_source_thresh) bf_boxes.push_back(d.box);
    auto [m_t_hat, m_r_hat] =
        wgen::box_filter_maps(bf_boxes, wsam_m_r, config.beta, h, w, stride);
    if (config.force_uniform_maps) {
      fill_uniform(m_t_hat);
      fill_uniform(m_r_hat);
    }
    p_final = match::apply_box_filter(tape, p, m_t_hat, m_r_hat);
  }

  // Losses. The matcher is supervised on the filtered probabilities when the
  // Box Filter is part of the variant.
  Var loss_match = match::matcher_loss(tape, p_final, sample.gt_matches);
  det::DenseTargets targets = det::assign_targets(sample.boxes_t, h, w, stride);
  Var loss_det =
      det::detection_loss(tape, head_out, targets, 1.0, config.scene.num_classes);
  Var total = tape.add(loss_match, tape.scale(loss_det, config.lambda));
  if (model.has_decoder) {
    Var seg = tape.add(
        wgen::box_projection_loss(tape, *mask_t_var, h, w, sample.boxes_t, stride),
        wgen::box_projection_loss(tape, *mask_r_var, h, w, sample.boxes_r, stride));
    total = tape.add(total, seg);
    out.seg_loss = seg.scalar();
  }
  out.total_loss = total;
  out.matcher_loss = loss_match.scalar();
  out.detector_loss = loss_det.scalar();

  // Final homography, evaluation only.
  if (eval_mode) {
    match::MatchSet final_matches = match::mnn_select(p_final.value(), config.theta);
    out.matches_kept = static_cast<int>(final_matches.pairs.size());
    auto corrs = matches_to_correspondences(final_matches, w, stride);
    if (corrs.size() >= 4) {
      geo::RansacOptions opts;
      opts.max_iters = config.ransac_iters;
      opts.inlier_px = config.ransac_inlier_px;
      try {
        out.h_est =
            geo::ransac_homography(corrs, opts, mix_seed(ransac_seed, 2)).model;
      } catch (const std::exception&) {
        out.h_est = std::nullopt;  // recorded as a failed estimation
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

TrainResult train(const ExperimentConfig& config) {
  config.validate();
  auto t0 = std::chrono::steady_clock::now();

  Model model(config);

  // Seeded, regenerable data: samples derive from (scene seed, stream, index).
  std::vector<synth::SceneSample> train_set(config.train_pairs);
  std::vector<synth::SceneSample> eval_set(config.eval_pairs);
  {
    std::uint64_t train_base = mix_seed(config.seed, 0xda7a0);
    std::uint64_t eval_base = mix_seed(config.seed, 0xe7a1);
    parallel_for(config.train_pairs, config.threads, [&](int i) {
      train_set[i] = synth::generate_sample(config.scene, mix_seed(train_base, i));
    });
    parallel_for(config.eval_pairs, config.threads, [&](int i) {
      eval_set[i] = synth::generate_sample(config.scene, mix_seed(eval_base, i));
    });
  }

  RunReport report;
  report.variant = std::string(to_string(config.variant));
  report.setting = config.variant == Variant::kMdBase
                       ? "-"
                       : std::string(wgen::to_string(config.setting));
  report.seed = config.seed;
  report.config_json = config_to_json(config);

  Rng shuffle_rng(mix_seed(config.seed, 0x5affe));

  try {
  std::uint64_t sample_counter = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = epoch < config.lr.decay_epoch
                    ? config.lr.initial
                    : config.lr.initial * config.lr.decay_factor;

    std::vector<int> order(config.train_pairs);
    std::iota(order.begin(), order.end(), 0);
    for (int i = config.train_pairs - 1; i > 0; --i) {
      int j = static_cast<int>(shuffle_rng.below(i + 1));
      std::swap(order[i], order[j]);
    }

    EpochStats stats;
    int batches = 0;
    for (int start = 0; start < config.train_pairs; start += config.batch_size) {
      int count = std::min(config.batch_size, config.train_pairs - start);
      std::vector<std::vector<Matrix>> grads(count);
      std::vector<SampleLossesRecord> losses(count);
      std::uint64_t batch_base = sample_counter;
      parallel_for(count, config.threads, [&](int slot) {
        const synth::SceneSample& sample = train_set[order[start + slot]];
        Tape tape;
        BoundParams bound(model.store, tape);
        SampleForward fwd = forward_sample(
            tape, model, bound, sample, config,
            mix_seed(config.seed ^ 0x4a5ac, batch_base + slot), /*eval=*/false);
        tape.backward(fwd.total_loss);
        grads[slot] = collect_grads(tape, bound, model.store);
        losses[slot] = {fwd.total_loss.scalar(), fwd.matcher_loss,
                        fwd.detector_loss, fwd.seg_loss};
      });
      sample_counter += count;

      std::vector<Matrix> batch_grads;
      for (int slot = 0; slot < count; ++slot) accumulate_grads(batch_grads, grads[slot]);
      model.store.sgd_step(batch_grads, lr / count);

      for (int slot = 0; slot < count; ++slot) {
        stats.total += losses[slot].total;
        stats.matcher += losses[slot].matcher;
        stats.detector += losses[slot].detector;
        stats.seg += losses[slot].seg;
      }
      ++batches;
    }
    stats.total /= config.train_pairs;
    stats.matcher /= config.train_pairs;
    stats.detector /= config.train_pairs;
    stats.seg /= config.train_pairs;

    // Held-out loss, cheap per-epoch signal.
    std::vector<double> eval_losses(config.eval_pairs);
    parallel_for(config.eval_pairs, config.threads, [&](int i) {
      Tape tape;
      BoundParams bound(model.store, tape);
      SampleForward fwd =
          forward_sample(tape, model, bound, eval_set[i], config,
                         mix_seed(config.seed ^ 0xeba1, i), /*eval=*/false);
      eval_losses[i] = fwd.total_loss.scalar();
    });
    stats.eval_total =
        std::accumulate(eval_losses.begin(), eval_losses.end(), 0.0) /
        config.eval_pairs;
    report.epoch_losses.push_back(stats);
  }

  // Final metrics on the held-out split.
  std::vector<double> corner_errors(config.eval_pairs);
  std::vector<std::vector<det::Detection>> all_detections(config.eval_pairs);
  parallel_for(config.eval_pairs, config.threads, [&](int i) {
    Tape tape;
    BoundParams bound(model.store, tape);
    SampleForward fwd =
        forward_sample(tape, model, bound, eval_set[i], config,
                       mix_seed(config.seed ^ 0xf1a1, i), /*eval=*/true);
    if (fwd.h_est) {
      corner_errors[i] =
          geo::corner_error(*fwd.h_est, eval_set[i].h_gt,
                            eval_set[i].ref_grid.w, eval_set[i].ref_grid.h);
    } else {
      corner_errors[i] = std::numeric_limits<double>::infinity();
    }
    all_detections[i] = std::move(fwd.detections);
  });
  report.auc3 = geo::auc(corner_errors, 3.0);
  report.auc5 = geo::auc(corner_errors, 5.0);
  report.auc10 = geo::auc(corner_errors, 10.0);

  det::ApAccumulator ap;
  for (int i = 0; i < config.eval_pairs; ++i)
    ap.add_image(std::move(all_detections[i]), eval_set[i].boxes_t);
  det::ApResult ap_result = ap.compute();
  report.ap = ap_result.ap;
  report.ap50 = ap_result.ap50;
  report.ap75 = ap_result.ap75;
  } catch (const std::exception& e) {
    // Non-finite loss or another hard failure: drop a diagnostic snapshot
    // and re-raise so callers see the aborted run.
    if (!config.out_dir.empty()) {
      std::filesystem::create_directories(config.out_dir);
      io::save_checkpoint(model.store,
                          std::filesystem::path(config.out_dir) / "diagnostic_params.json");
      std::ofstream diag(std::filesystem::path(config.out_dir) / "diagnostic.json");
      diag << ordered_json{{"error", e.what()},
                           {"epochs_completed", report.epoch_losses.size()},
                           {"config", json::parse(report.config_json)}}
                  .dump(1)
           << '\n';
    }
    throw std::runtime_error(std::string("training aborted: ") + e.what());
  }

  if (config.wall_clock) {
    report.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return {std::move(report), std::move(model)};
}

// ---------------------------------------------------------------------------
// Gradient suite.

namespace {

constexpr double kGradTol = 1e-5;

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

WeightMap random_map(Rng& rng, int cells) {
  WeightMap map(1, cells);
  for (double& v : map.values) v = rng.uniform(0.5, 2.0);
  return map;
}

/// One suite group: `instance` builds inputs and an objective for a derived
/// seed and returns the worst relative error. Instances that land within h
/// of a kink (relu / max ties) are retried once on a derived seed.
struct SuiteGroup {
  const char* name;
  std::function<double(std::uint64_t seed)> instance;
};

GradSuiteResult run_groups(std::ostream& out, const std::vector<SuiteGroup>& groups,
                           int instances) {
  auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult result;
  result.ok = true;
  for (const auto& group : groups) {
    double worst = 0.0;
    int failures = 0;
    for (int i = 0; i < instances; ++i) {
      double err = group.instance(mix_seed(0x6ead, i));
      // A sample can land within h of a relu/max kink where central
      // differences are invalid; one deterministic retry filters those.
      if (err >= kGradTol) err = group.instance(mix_seed(0x6ead ^ 0x12e7, i));
      worst = std::max(worst, err);
      if (err >= kGradTol) ++failures;
    }
    bool ok = failures == 0;
    result.ok = result.ok && ok;
    result.max_rel_err = std::max(result.max_rel_err, worst);
    out << (ok ? "PASS" : "FAIL") << "  " << group.name << "  instances=" << instances
        << "  max_rel_err=" << worst << "\n";
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace

GradSuiteResult run_gradient_suite(std::ostream& out) {
  using num::check_tape_function;

  std::vector<SuiteGroup> groups;

  groups.push_back({"weighted_attention", [](std::uint64_t seed) {
    Rng rng(seed);
    int nq = 2 + static_cast<int>(rng.below(4));
    int nk = 2 + static_cast<int>(rng.below(4));
    int c = 3 + static_cast<int>(rng.below(4));
    WeightMap m_q = random_map(rng, nq), m_k = random_map(rng, nk);
    Matrix proj = random_matrix(rng, nq, c);
    std::vector<Matrix> inputs = {random_matrix(rng, nq, c), random_matrix(rng, nk, c),
                                  random_matrix(rng, nk, c)};
    return check_tape_function(inputs, [&](Tape& t, const std::vector<Var>& v) {
      Var outp = attn::weighted_attention(t, v[0], v[1], v[2], m_q, m_k);
      return t.sum(t.hadamard(outp, t.constant(proj)));
    }).max_rel_err;
  }});

  groups.push_back({"ws_attention", [](std::uint64_t seed) {
    Rng rng(seed);
    int nq = 2 + static_cast<int>(rng.below(4));
    int nk = 2 + static_cast<int>(rng.below(4));
    int c = 3 + static_cast<int>(rng.below(4));
    WeightMap m_q = random_map(rng, nq), m_k = random_map(rng, nk);
    Matrix proj = random_matrix(rng, nq, c);
    std::vector<Matrix> inputs = {random_matrix(rng, nq, c), random_matrix(rng, nk, c),
                                  random_matrix(rng, nk, c)};
    return check_tape_function(inputs, [&](Tape& t, const std::vector<Var>& v) {
      Var outp = attn::ws_attention(t, v[0], v[1], v[2], &m_q, &m_k);
      return t.sum(t.hadamard(outp, t.constant(proj)));
    }).max_rel_err;
  }});

  groups.push_back({"transformer_block", [](std::uint64_t seed) {
    Rng rng(seed);
    int side = 2 + static_cast<int>(rng.below(2));  // 2x2 .. 3x3 cells
    int hw = side * side;
    int c = 4 + static_cast<int>(rng.below(5));
    int classes = 2;
    auto mode = static_cast<attn::AttentionMode>(rng.below(3));
    WeightMap m_q = random_map(rng, hw), m_k = random_map(rng, hw);

    ParamStore proto;
    attn::BlockParamIds ids = attn::register_block(proto, "blk", c, rng);
    std::vector<Matrix> inputs;
    for (int i = 0; i < proto.count(); ++i) {
      const Matrix& shape = proto.value(i);
      inputs.push_back(random_matrix(rng, shape.rows(), shape.cols(), 0.5));
    }
    int x_idx = static_cast<int>(inputs.size());
    inputs.push_back(random_matrix(rng, hw, c));
    inputs.push_back(random_matrix(rng, hw, c));
    int we_idx = static_cast<int>(inputs.size());
    inputs.push_back(random_matrix(rng, classes, c));
    Matrix proj = random_matrix(rng, hw, c);

    return check_tape_function(inputs, [&](Tape& t, const std::vector<Var>& v) {
      BoundParams bound(std::vector<Var>(v.begin(), v.begin() + x_idx));
      attn::BlockMaps maps{&m_q, &m_k};
      std::optional<Var> w_e;
      if (mode == attn::AttentionMode::kWeightedSpatial) w_e = v[we_idx];
      Var outp = attn::transformer_block(t, v[x_idx], v[x_idx + 1], bound, ids,
                                         mode, maps, w_e);
      return t.sum(t.hadamard(outp, t.constant(proj)));
    }).max_rel_err;
  }});

  groups.push_back({"light_decoder+projection_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    int side = 3, c = 5;
    ParamStore proto;
    Rng proto_rng = rng.fork(7);
    wgen::DecoderParamIds ids = wgen::register_decoder(proto, "dec", c, proto_rng);
    std::vector<Matrix> inputs;
    for (int i = 0; i < proto.count(); ++i) {
      const Matrix& shape = proto.value(i);
      inputs.push_back(random_matrix(rng, shape.rows(), shape.cols(), 0.6));
    }
    int f_idx = static_cast<int>(inputs.size());
    inputs.push_back(random_matrix(rng, side * side, c));
    std::vector<BBox> boxes = {{0.2, 0.4, 2.1, 2.4, 1}};
    return check_tape_function(inputs, [&](Tape& t, const std::vector<Var>& v) {
      BoundParams bound(std::vector<Var>(v.begin(), v.begin() + f_idx));
      Var mask = wgen::light_decoder(t, v[f_idx], bound, ids);
      return wgen::box_projection_loss(t, mask, side, side, boxes, 1.0);
    }).max_rel_err;
  }});

  groups.push_back({"matcher_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    int nt = 3 + static_cast<int>(rng.below(3));
    int nr = 3 + static_cast<int>(rng.below(3));
    int c = 4;
    std::vector<Matrix> inputs = {random_matrix(rng, nt, c), random_matrix(rng, nr, c)};
    std::vector<std::pair<int, int>> gt = {
        {static_cast<int>(rng.below(nt)), static_cast<int>(rng.below(nr))},
        {static_cast<int>(rng.below(nt)), static_cast<int>(rng.below(nr))}};
    return check_tape_function(inputs, [&](Tape& t, const std::vector<Var>& v) {
      Var p = match::dual_softmax(t, match::score_matrix(t, v[0], v[1], 0.2));
      return match::matcher_loss(t, p, gt);
    }).max_rel_err;
  }});

  groups.push_back({"detection_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    int side = 3, c = 5, classes = 3;
    ParamStore proto;
    Rng proto_rng = rng.fork(9);
    det::HeadParamIds ids = det::register_head(proto, "head", c, classes, proto_rng);
    std::vector<Matrix> inputs;
    for (int i = 0; i < proto.count(); ++i) {
      const Matrix& shape = proto.value(i);
      inputs.push_back(random_matrix(rng, shape.rows(), shape.cols(), 0.4));
    }
    int f_idx = static_cast<int>(inputs.size());
    inputs.push_back(random_matrix(rng, side * side, c));
    std::vector<BBox> boxes = {{0.1, 0.1, 2.2, 2.3, 1 + static_cast<int>(rng.below(classes))}};
    det::DenseTargets targets = det::assign_targets(boxes, side, side, 1.0);
    return check_tape_function(inputs, [&](Tape& t, const std::vector<Var>& v) {
      BoundParams bound(std::vector<Var>(v.begin(), v.begin() + f_idx));
      det::HeadOutputs outp = det::det_head(t, v[f_idx], bound, ids);
      return det::detection_loss(t, outp, targets, 1.0, classes);
    }).max_rel_err;
  }});

  return run_groups(out, groups, 100);
}

// ---------------------------------------------------------------------------
// Ablation.

AblateResult run_ablation(const AblateOptions& options) {
  if (options.variants.empty() || options.settings.empty() || options.seeds < 1)
    throw std::invalid_argument("run_ablation: empty variant/setting/seed matrix");

  AblateResult result;
  using Key = std::pair<std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<RunReport>> groups;

  for (Variant variant : options.variants) {
    for (wgen::Setting setting : options.settings) {
      Key key{std::string(to_string(variant)),
              variant == Variant::kMdBase ? "-" : std::string(wgen::to_string(setting))};
      if (groups.count(key)) continue;  // mdbase collapses across settings
      order.push_back(key);
      auto& runs = groups[key];
      for (int k = 0; k < options.seeds; ++k) {
        ExperimentConfig config = options.base;
        config.variant = variant;
        config.setting = setting;
        config.seed = options.base.seed + static_cast<std::uint64_t>(k);
        TrainResult tr = train(config);
        runs.push_back(tr.report);
        result.runs.push_back(std::move(tr.report));
      }
    }
  }

  // Seed-mean aggregation, one row per (variant, setting).
  for (const Key& key : order) {
    const auto& runs = groups[key];
    RunReport row;
    row.variant = key.first;
    row.setting = key.second;
    row.seed = options.base.seed;
    row.config_json = runs.front().config_json;
    for (const RunReport& r : runs) {
      row.auc3 += r.auc3;
      row.auc5 += r.auc5;
      row.auc10 += r.auc10;
      row.ap += r.ap;
      row.ap50 += r.ap50;
      row.ap75 += r.ap75;
      row.wall_s += r.wall_s;
    }
    double n = static_cast<double>(runs.size());
    row.auc3 /= n;
    row.auc5 /= n;
    row.auc10 /= n;
    row.ap /= n;
    row.ap50 /= n;
    row.ap75 /= n;
    result.rows.push_back(std::move(row));
  }

  // Directional orderings over seed means.
  std::ostringstream summary;
  auto find_row = [&](std::string_view variant, std::string_view setting)
      -> const RunReport* {
    for (const RunReport& row : result.rows)
      if (row.variant == variant && row.setting == setting) return &row;
    return nullptr;
  };
  auto check = [&](const char* label, double lhs, double rhs, bool strict) {
    bool ok = strict ? lhs < rhs : lhs <= rhs;
    summary << (ok ? "PASS" : "FAIL") << "  " << label << "  (" << lhs
            << (strict ? " < " : " <= ") << rhs << ")\n";
    if (!ok) result.orderings_ok = false;
  };

  std::string module_setting = "gtboxr";
  if (!find_row("wam", module_setting) && !options.settings.empty())
    module_setting = std::string(wgen::to_string(options.settings.front()));
  const RunReport* mdbase = find_row("mdbase", "-");
  const RunReport* wam_row = find_row("wam", module_setting);
  const RunReport* wam_bf = find_row("wam_bf", module_setting);
  const RunReport* wam_wsam = find_row("wam_wsam", module_setting);
  if (mdbase && wam_row)
    check("auc3: mdbase < +wam", mdbase->auc3, wam_row->auc3, true);
  if (wam_row && wam_bf)
    check("auc3: +wam < +wam+boxfilter", wam_row->auc3, wam_bf->auc3, true);
  if (mdbase && wam_wsam)
    check("ap: mdbase < +wam+wsam", mdbase->ap, wam_wsam->ap, true);

  const RunReport* g = find_row("matchdet", "gtboxr");
  const RunReport* p = find_row("matchdet", "preboxr");
  const RunReport* nb = find_row("matchdet", "noboxr");
  if (g && p) {
    check("auc3: preboxr <= gtboxr", p->auc3, g->auc3, false);
    check("ap: preboxr <= gtboxr", p->ap, g->ap, false);
  }
  if (p && nb) {
    check("auc3: noboxr <= preboxr", nb->auc3, p->auc3, false);
    check("ap: noboxr <= preboxr", nb->ap, p->ap, false);
  }
  if (nb && mdbase) {
    check("auc3: mdbase <= noboxr", mdbase->auc3, nb->auc3, false);
    check("ap: mdbase <= noboxr", mdbase->ap, nb->ap, false);
  }
  result.summary = summary.str();

  if (!options.out_dir.empty()) {
    std::filesystem::path dir(options.out_dir);
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "ablate.csv", std::ios::binary);
    csv << reports_to_csv(result.rows);
    std::ofstream runs_json(dir / "runs.json", std::ios::binary);
    runs_json << "[\n";
    for (std::size_t i = 0; i < result.runs.size(); ++i)
      runs_json << report_to_json(result.runs[i]) << (i + 1 < result.runs.size() ? ",\n" : "\n");
    runs_json << "]\n";
    std::ofstream summary_file(dir / "summary.txt", std::ios::binary);
    summary_file << result.summary;
  }
  return result;
}

}  // namespace matchdet::harness
