// Command-line front end: single runs, the ablation matrix, and the
// gradient-check suite.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "matchdet/harness.hpp"
#include "matchdet/io.hpp"

namespace {

using namespace matchdet;

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::int64_t seed_override) {
  harness::ExperimentConfig config = config_path.empty()
                                         ? harness::ExperimentConfig{}
                                         : harness::config_from_json_file(config_path);
  if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_dir.empty()) config.out_dir = out_dir;

  harness::TrainResult result = harness::train(config);
  const harness::RunReport& report = result.report;
  std::cout << "variant=" << report.variant << " setting=" << report.setting
            << " AUC@3=" << report.auc3 << " AUC@5=" << report.auc5
            << " AUC@10=" << report.auc10 << " AP=" << report.ap
            << " AP50=" << report.ap50 << " AP75=" << report.ap75
            << " wall_s=" << report.wall_s << "\n";

  if (!config.out_dir.empty()) {
    std::filesystem::path dir(config.out_dir);
    std::filesystem::create_directories(dir);
    std::ofstream json_out(dir / "report.json", std::ios::binary);
    json_out << harness::report_to_json(report) << "\n";
    std::ofstream csv_out(dir / "report.csv", std::ios::binary);
    csv_out << harness::reports_to_csv({&report, 1});
    io::save_checkpoint(result.model.store, dir / "params.json");
    std::cout << "wrote " << (dir / "report.json").string() << ", report.csv, params.json\n";
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::string& settings_csv, const std::string& variants_csv,
               int seeds, bool assert_mode, std::int64_t seed_override) {
  harness::AblateOptions options;
  options.base = config_path.empty() ? harness::ExperimentConfig{}
                                     : harness::config_from_json_file(config_path);
  if (seed_override >= 0) options.base.seed = static_cast<std::uint64_t>(seed_override);
  options.seeds = seeds;
  options.assert_orderings = assert_mode;
  options.out_dir = out_dir;
  for (const std::string& s : split_csv(settings_csv))
    options.settings.push_back(wgen::setting_from_string(s));
  for (const std::string& v : split_csv(variants_csv))
    options.variants.push_back(harness::variant_from_string(v));

  harness::AblateResult result = harness::run_ablation(options);
  std::cout << harness::reports_to_csv(result.rows);
  if (!result.summary.empty()) std::cout << result.summary;
  if (assert_mode && !result.orderings_ok) {
    std::cerr << "ablate: ordering assertions failed\n";
    return 2;
  }
  return 0;
}

int cmd_gradcheck() {
  harness::GradSuiteResult result = harness::run_gradient_suite(std::cout);
  std::cout << "gradient suite: " << (result.ok ? "PASS" : "FAIL")
            << "  max_rel_err=" << result.max_rel_err
            << "  seconds=" << result.seconds << "\n";
  return result.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative image matching and detection on synthetic warped pairs"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::int64_t seed_override = -1;

  CLI::App* run = app.add_subcommand("run", "Train and evaluate one configuration");
  run->add_option("--config", config_path, "JSON experiment config");
  run->add_option("--out", out_dir, "Output directory for report and checkpoint");
  run->add_option("--seed", seed_override, "Seed override");

  std::string settings_csv = "gtboxr,preboxr,noboxr";
  std::string variants_csv = "mdbase,matchdet";
  int seeds = 5;
  bool assert_mode = false;
  CLI::App* ablate = app.add_subcommand("ablate", "Run the (variant x setting x seed) matrix");
  ablate->add_option("--config", config_path, "JSON experiment config (base protocol)");
  ablate->add_option("--settings", settings_csv, "Comma-separated settings");
  ablate->add_option("--variants", variants_csv,
                     "Comma-separated variants (mdbase,wam,wam_bf,wam_wsam,matchdet)");
  ablate->add_option("--seeds", seeds, "Seeds per cell");
  ablate->add_flag("--assert", assert_mode, "Exit 2 when orderings fail");
  ablate->add_option("--out", out_dir, "Output directory for ablate.csv and runs.json");
  ablate->add_option("--seed", seed_override, "Base seed override");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Run the gradient-check suite");
  (void)gradcheck;

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("run")) return cmd_run(config_path, out_dir, seed_override);
    if (app.got_subcommand("ablate"))
      return cmd_ablate(config_path, out_dir, settings_csv, variants_csv, seeds,
                        assert_mode, seed_override);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
