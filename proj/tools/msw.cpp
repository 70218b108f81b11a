#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "msw/config.hpp"
#include "msw/eval.hpp"
#include "msw/rng.hpp"
#include "msw/synthdata.hpp"
#include "msw/train.hpp"
#include "msw/viz.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string split = "train";
  int n = 0;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string resume;
  std::string axes = "components,fusion";
  int index = 0;
  double max_flow = 0.0;
  int64_t iterations = -1;
  int64_t seed_flag = -1;
};

msw::AppConfig load_app_config(const Options& opt) {
  msw::AppConfig cfg = opt.config_path.empty()
                           ? msw::parse_config_text(msw::default_config_json())
                           : msw::load_config(opt.config_path);
  if (const char* env = std::getenv("MSW_SEED")) {
    cfg.seed = static_cast<uint64_t>(std::strtoull(env, nullptr, 10));
  }
  if (opt.seed_flag >= 0) cfg.seed = static_cast<uint64_t>(opt.seed_flag);
  cfg.scene.seed = cfg.seed;
  return cfg;
}

msw::TwoStreamModel load_model(const msw::AppConfig& cfg, const std::string& checkpoint) {
  msw::Rng rng(cfg.seed);
  msw::TwoStreamModel model(cfg.model, rng);
  model.load(checkpoint);
  return model;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int cmd_gen_data(const Options& opt) {
  auto cfg = load_app_config(opt);
  if (opt.split == "val") cfg.scene.seed = cfg.seed ^ 0x76616c21ULL;
  const auto summary = msw::generate_split(cfg.scene, opt.n, opt.out);
  std::cout << "wrote " << summary.images << " images, " << summary.instances
            << " instances to " << opt.out << "\n"
            << "camouflage: " << (cfg.scene.camouflage ? "on" : "off")
            << ", mean fill-vs-background deltaE: " << summary.mean_local_delta_e
            << "\n";
  return 0;
}

int cmd_train(const Options& opt) {
  auto cfg = load_app_config(opt);
  auto train_cfg = cfg.train_config(opt.data, opt.out);
  if (opt.iterations >= 0) train_cfg.iterations = opt.iterations;
  const auto result = msw::train(train_cfg, opt.resume);
  std::cout << "trained " << result.steps << " steps, final loss "
            << result.final_loss << "\n"
            << "checkpoint: " << result.final_checkpoint << "\n";
  return 0;
}

int cmd_eval(const Options& opt) {
  auto cfg = load_app_config(opt);
  if (!fs::exists(opt.checkpoint)) {
    throw std::runtime_error("missing checkpoint: " + opt.checkpoint);
  }
  const auto model = load_model(cfg, opt.checkpoint);
  const auto dataset = msw::Dataset::load(opt.data);
  const auto result = msw::evaluate(model, dataset, cfg.neutral_flow);
  const std::string out_path =
      opt.out.empty()
          ? (fs::path(opt.checkpoint).parent_path() / "eval_result.json").string()
          : opt.out;
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << result.to_json() << "\n";
  std::cout << result.to_table() << "results written to " << out_path << "\n";
  return 0;
}

int cmd_ablate(const Options& opt) {
  auto cfg = load_app_config(opt);
  auto base = cfg.train_config(opt.data, opt.out);
  const auto rows = msw::ablate(base, split_csv(opt.axes));
  const auto csv = msw::ablation_csv(rows);
  fs::create_directories(opt.out);
  const std::string csv_path = (fs::path(opt.out) / "ablation.csv").string();
  std::ofstream os(csv_path);
  if (!os) throw std::runtime_error("cannot write " + csv_path);
  os << csv;
  std::cout << msw::ablation_table(rows) << "table written to " << csv_path << "\n";
  return 0;
}

int cmd_visualize(const Options& opt) {
  auto cfg = load_app_config(opt);
  if (!fs::exists(opt.checkpoint)) {
    throw std::runtime_error("missing checkpoint: " + opt.checkpoint);
  }
  const auto model = load_model(cfg, opt.checkpoint);
  const auto dataset = msw::Dataset::load(opt.data);
  if (opt.index < 0 || opt.index >= static_cast<int>(dataset.samples.size())) {
    throw std::runtime_error("sample index out of range");
  }
  fs::create_directories(opt.out);
  char stem[16];
  std::snprintf(stem, sizeof(stem), "%06d", opt.index);
  const auto result = msw::visualize_sample(
      model, dataset.samples[static_cast<size_t>(opt.index)], dataset.width,
      dataset.height, cfg.supervision, cfg.neutral_flow,
      (fs::path(opt.out) / stem).string(), opt.max_flow);
  for (const auto& f : result.files) std::cout << f << "\n";
  std::cout << "appearance-stream contrast: " << result.appearance_contrast
            << "\nflow-stream contrast: " << result.flow_contrast << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moving-shapes box-supervised instance segmentation"};
  app.require_subcommand(1);
  Options opt;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic split");
  gen->add_option("--config", opt.config_path, "config file (JSON)");
  gen->add_option("--split", opt.split, "train or val")
      ->check(CLI::IsMember({"train", "val"}));
  gen->add_option("--n", opt.n, "number of samples")->required();
  gen->add_option("--out", opt.out, "output directory")->required();
  gen->add_option("--seed", opt.seed_flag, "override the config seed");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", opt.config_path, "config file (JSON)");
  train->add_option("--data", opt.data, "dataset directory")->required();
  train->add_option("--out", opt.out, "run directory")->required();
  train->add_option("--iterations", opt.iterations, "override config iterations");
  train->add_option("--resume", opt.resume, "checkpoint to continue from");
  train->add_option("--seed", opt.seed_flag, "override the config seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", opt.config_path, "config file (JSON)");
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint path")->required();
  eval->add_option("--data", opt.data, "dataset directory")->required();
  eval->add_option("--out", opt.out, "result JSON path");
  eval->add_option("--seed", opt.seed_flag, "override the config seed");

  auto* ablate = app.add_subcommand("ablate", "train and score ablation variants");
  ablate->add_option("--config", opt.config_path, "config file (JSON)");
  ablate->add_option("--data", opt.data, "dataset directory")->required();
  ablate->add_option("--out", opt.out, "output directory")->required();
  ablate->add_option("--axes", opt.axes, "comma list: components, fusion");
  ablate->add_option("--seed", opt.seed_flag, "override the config seed");

  auto* viz = app.add_subcommand("visualize", "emit diagnostic images for one sample");
  viz->add_option("--config", opt.config_path, "config file (JSON)");
  viz->add_option("--checkpoint", opt.checkpoint, "checkpoint path")->required();
  viz->add_option("--data", opt.data, "dataset directory")->required();
  viz->add_option("--index", opt.index, "sample index")->required();
  viz->add_option("--out", opt.out, "output directory")->required();
  viz->add_option("--max-flow", opt.max_flow,
                  "explicit color-wheel magnitude for cross-frame comparability");
  viz->add_option("--seed", opt.seed_flag, "override the config seed");

  auto* defaults = app.add_subcommand("default-config", "print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opt);
    if (train->parsed()) return cmd_train(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (ablate->parsed()) return cmd_ablate(opt);
    if (viz->parsed()) return cmd_visualize(opt);
    if (defaults->parsed()) {
      std::cout << msw::default_config_json() << "\n";
      return 0;
    }
  } catch (const msw::TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
