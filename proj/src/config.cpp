#include "msw/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace msw {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& section) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("config: unknown key '" +
                                  (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ShapeKind shape_from_name(const std::string& name) {
  if (name == "rectangle") return ShapeKind::kRectangle;
  if (name == "ellipse") return ShapeKind::kEllipse;
  if (name == "triangle") return ShapeKind::kTriangle;
  throw std::invalid_argument("config: unknown shape '" + name + "'");
}

void parse_scene(const json& j, SceneConfig& scene, bool& neutral_flow) {
  reject_unknown(j, {"width", "height", "min_instances", "max_instances", "shapes",
                     "speed_min", "speed_max", "background", "camouflage",
                     "allow_occlusion", "pan_x", "pan_y", "noise_sigma",
                     "size_min_frac", "size_max_frac", "neutral_flow"},
                 "data");
  read(j, "width", scene.width);
  read(j, "height", scene.height);
  read(j, "min_instances", scene.min_instances);
  read(j, "max_instances", scene.max_instances);
  if (j.contains("shapes")) {
    scene.shapes.clear();
    for (const auto& name : j.at("shapes")) {
      scene.shapes.push_back(shape_from_name(name.get<std::string>()));
    }
  }
  read(j, "speed_min", scene.speed_min);
  read(j, "speed_max", scene.speed_max);
  if (j.contains("background")) {
    const auto mode = j.at("background").get<std::string>();
    if (mode == "flat") {
      scene.background = BackgroundMode::kFlat;
    } else if (mode == "textured") {
      scene.background = BackgroundMode::kTexturedNoise;
    } else {
      throw std::invalid_argument("config: unknown background '" + mode + "'");
    }
  }
  read(j, "camouflage", scene.camouflage);
  read(j, "allow_occlusion", scene.allow_occlusion);
  read(j, "pan_x", scene.pan_x);
  read(j, "pan_y", scene.pan_y);
  read(j, "noise_sigma", scene.noise_sigma);
  read(j, "size_min_frac", scene.size_min_frac);
  read(j, "size_max_frac", scene.size_max_frac);
  read(j, "neutral_flow", neutral_flow);
}

void parse_supervision(const json& j, SupervisionParams& p) {
  reject_unknown(j, {"theta_color", "theta_flow", "tau_color", "tau_flow",
                     "kernel_size", "dilation", "flow_similarity_space"},
                 "supervision");
  read(j, "theta_color", p.theta_color);
  read(j, "theta_flow", p.theta_flow);
  read(j, "tau_color", p.tau_color);
  read(j, "tau_flow", p.tau_flow);
  read(j, "kernel_size", p.kernel_size);
  read(j, "dilation", p.dilation);
  if (j.contains("flow_similarity_space")) {
    const auto space = j.at("flow_similarity_space").get<std::string>();
    if (space == "rgb") {
      p.flow_space = FlowSimilaritySpace::kRgb;
    } else if (space == "uv") {
      p.flow_space = FlowSimilaritySpace::kUv;
    } else {
      throw std::invalid_argument("config: unknown flow_similarity_space '" + space + "'");
    }
  }
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j, {"widths", "mask_branch_channels", "c_mask", "detection_fusion",
                     "mask_fusion", "motion_for_detection", "motion_for_mask",
                     "score_threshold", "nms_iou"},
                 "model");
  if (j.contains("widths")) m.widths = j.at("widths").get<std::vector<int>>();
  read(j, "mask_branch_channels", m.mask_branch_channels);
  read(j, "c_mask", m.c_mask);
  if (j.contains("detection_fusion")) {
    const auto f = j.at("detection_fusion").get<std::string>();
    if (f == "sum") {
      m.fusion.detection = DetectionFusion::kSum;
    } else if (f == "max") {
      m.fusion.detection = DetectionFusion::kMax;
    } else {
      throw std::invalid_argument("config: unknown detection_fusion '" + f + "'");
    }
  }
  if (j.contains("mask_fusion")) {
    const auto f = j.at("mask_fusion").get<std::string>();
    if (f == "sum") {
      m.fusion.mask = MaskFusion::kSum;
    } else if (f == "max") {
      m.fusion.mask = MaskFusion::kMax;
    } else if (f == "concat") {
      m.fusion.mask = MaskFusion::kConcat;
    } else {
      throw std::invalid_argument("config: unknown mask_fusion '" + f + "'");
    }
  }
  read(j, "motion_for_detection", m.motion_for_detection);
  read(j, "motion_for_mask", m.motion_for_mask);
  read(j, "score_threshold", m.score_threshold);
  read(j, "nms_iou", m.nms_iou);
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j, {"iterations", "batch_size", "lr", "momentum", "weight_decay",
                     "clip_norm", "lr_decay_at", "lr_decay_factor", "lambda_proj",
                     "lambda_pair", "warmup_fraction", "checkpoint_interval",
                     "log_interval"},
                 "train");
  read(j, "iterations", t.iterations);
  read(j, "batch_size", t.batch_size);
  read(j, "lr", t.lr);
  read(j, "momentum", t.momentum);
  read(j, "weight_decay", t.weight_decay);
  read(j, "clip_norm", t.clip_norm);
  read(j, "lr_decay_at", t.lr_decay_at);
  read(j, "lr_decay_factor", t.lr_decay_factor);
  read(j, "lambda_proj", t.lambda_proj);
  read(j, "lambda_pair", t.lambda_pair);
  read(j, "warmup_fraction", t.warmup_fraction);
  read(j, "checkpoint_interval", t.checkpoint_interval);
  read(j, "log_interval", t.log_interval);
}

}  // namespace

TrainConfig AppConfig::train_config(const std::string& data_dir,
                                    const std::string& out_dir) const {
  TrainConfig cfg = train;
  cfg.seed = seed;
  cfg.neutral_flow = neutral_flow;
  cfg.supervision = supervision;
  cfg.model = model;
  cfg.data_dir = data_dir;
  cfg.out_dir = out_dir;
  return cfg;
}

AppConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j, {"seed", "data", "supervision", "model", "train"}, "");

  AppConfig cfg;
  read(j, "seed", cfg.seed);
  cfg.scene.seed = cfg.seed;
  if (j.contains("data")) parse_scene(j.at("data"), cfg.scene, cfg.neutral_flow);
  if (j.contains("supervision")) parse_supervision(j.at("supervision"), cfg.supervision);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  cfg.scene.seed = cfg.seed;
  cfg.scene.validate();
  cfg.supervision.validate();
  cfg.model.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string default_config_json() {
  json j;
  j["seed"] = 1;
  j["data"] = {{"width", 64},
               {"height", 64},
               {"min_instances", 1},
               {"max_instances", 2},
               {"shapes", {"rectangle", "ellipse", "triangle"}},
               {"speed_min", 1},
               {"speed_max", 3},
               {"background", "textured"},
               {"camouflage", false},
               {"allow_occlusion", false},
               {"pan_x", 0},
               {"pan_y", 0},
               {"noise_sigma", 8.0 / 255.0},
               {"size_min_frac", 0.16},
               {"size_max_frac", 0.30},
               {"neutral_flow", false}};
  j["supervision"] = {{"theta_color", 2.0}, {"theta_flow", 0.5},
                      {"tau_color", 0.3},   {"tau_flow", 0.6},
                      {"kernel_size", 3},   {"dilation", 2},
                      {"flow_similarity_space", "rgb"}};
  j["model"] = {{"widths", {8, 16, 32}},
                {"mask_branch_channels", 32},
                {"c_mask", 8},
                {"detection_fusion", "sum"},
                {"mask_fusion", "concat"},
                {"motion_for_detection", true},
                {"motion_for_mask", true},
                {"score_threshold", 0.3},
                {"nms_iou", 0.6}};
  j["train"] = {{"iterations", 5000},
                {"batch_size", 8},
                {"lr", 0.01},
                {"momentum", 0.9},
                {"weight_decay", 1e-4},
                {"clip_norm", 10.0},
                {"lr_decay_at", 0.8},
                {"lr_decay_factor", 0.1},
                {"lambda_proj", 1.0},
                {"lambda_pair", 1.0},
                {"warmup_fraction", 0.1},
                {"checkpoint_interval", 1000},
                {"log_interval", 50}};
  return j.dump(2);
}

}  // namespace msw
