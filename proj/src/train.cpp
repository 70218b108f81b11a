#include "msw/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msw/checkpoint.hpp"
#include "msw/rng.hpp"

namespace fs = std::filesystem;

namespace msw {

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("train: negative iterations");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("train: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("train: momentum must lie in [0, 1)");
  }
  if (clip_norm <= 0.0) throw std::invalid_argument("train: clip_norm must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
    throw std::invalid_argument("train: warmup_fraction must lie in [0, 1]");
  }
  if (lr_decay_at < 0.0 || lr_decay_at > 1.0) {
    throw std::invalid_argument("train: lr_decay_at must lie in [0, 1]");
  }
  if (checkpoint_interval < 1 || log_interval < 1) {
    throw std::invalid_argument("train: intervals must be >= 1");
  }
  supervision.validate();
  model.validate();
  if (data_dir.empty()) throw std::invalid_argument("train: data_dir not set");
  if (out_dir.empty()) throw std::invalid_argument("train: out_dir not set");
}

namespace {

struct PreparedInstance {
  Box grid_box;
  PairSet pairs;
  int center_row = 0;
  int center_col = 0;
};

struct PreparedSample {
  ad::Tensor image;     // 3 x H x W in [0, 1]
  ad::Tensor flow_rgb;  // 3 x H x W color-wheel encoding (or neutral white)
  std::vector<Box> gt_boxes;
  std::vector<PreparedInstance> instances;
};

ad::Tensor image_to_tensor(const ImageU8& img) {
  const int64_t hw = static_cast<int64_t>(img.width) * img.height;
  std::vector<double> data(3 * static_cast<size_t>(hw));
  for (int c = 0; c < 3; ++c) {
    for (int64_t p = 0; p < hw; ++p) {
      data[static_cast<size_t>(c * hw + p)] = img.pixels[3 * p + c] / 255.0;
    }
  }
  return ad::Tensor::from_data({3, img.height, img.width}, std::move(data));
}

ad::Tensor flow_rgb_to_tensor(const FlowColorImage& img) {
  const int64_t hw = static_cast<int64_t>(img.width) * img.height;
  std::vector<double> data(3 * static_cast<size_t>(hw));
  for (int c = 0; c < 3; ++c) {
    for (int64_t p = 0; p < hw; ++p) {
      data[static_cast<size_t>(c * hw + p)] = img.rgb[3 * p + c];
    }
  }
  return ad::Tensor::from_data({3, img.height, img.width}, std::move(data));
}

/// Supervision targets live on the score-map grid: Lab and the flow
/// encoding are nearest-neighbor resampled there before the kernels run.
PreparedSample prepare_sample(const Dataset::Sample& sample, int width, int height,
                              int stride, const SupervisionParams& params,
                              bool neutral_flow) {
  PreparedSample out;
  out.image = image_to_tensor(sample.frame_t);
  const auto flow_rgb = flow_to_rgb(sample.flow);
  if (neutral_flow) {
    FlowColorImage neutral;
    neutral.width = width;
    neutral.height = height;
    neutral.rgb.assign(3 * static_cast<size_t>(width) * height, 1.0);
    out.flow_rgb = flow_rgb_to_tensor(neutral);
  } else {
    out.flow_rgb = flow_rgb_to_tensor(flow_rgb);
  }

  const int gw = width / stride, gh = height / stride;
  const auto lab_grid = resize_nearest(srgb_to_lab(sample.frame_t), gw, gh);
  const auto flow_rgb_grid = resize_nearest(flow_rgb, gw, gh);
  const auto flow_uv_grid = resize_nearest(sample.flow, gw, gh);

  for (const auto& inst : sample.instances) {
    out.gt_boxes.push_back(inst.box);
    PreparedInstance p;
    p.grid_box = box_to_grid(inst.box, stride);
    p.grid_box.x1 = std::min(p.grid_box.x1, gw - 1);
    p.grid_box.y1 = std::min(p.grid_box.y1, gh - 1);
    p.pairs = build_pair_set(lab_grid, flow_rgb_grid, flow_uv_grid, p.grid_box, params);
    p.center_row = std::clamp((p.grid_box.y0 + p.grid_box.y1) / 2, 0, gh - 1);
    p.center_col = std::clamp((p.grid_box.x0 + p.grid_box.x1) / 2, 0, gw - 1);
    out.instances.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::string& resume_checkpoint) {
  config.validate();
  fs::create_directories(config.out_dir);

  const Dataset dataset = Dataset::load(config.data_dir);
  if (dataset.samples.empty()) throw std::runtime_error("train: empty dataset");

  Rng init_rng(config.seed);
  TwoStreamModel model(config.model, init_rng);
  auto params = model.parameters();

  std::vector<std::vector<double>> velocity(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    velocity[i].assign(params[i].data().size(), 0.0);
  }

  int64_t start_step = 0;
  if (!resume_checkpoint.empty()) {
    model.load(resume_checkpoint);
    const auto stored = load_checkpoint(resume_checkpoint);
    if (auto t = find_tensor(stored, "trainer.step"); t.defined()) {
      start_step = static_cast<int64_t>(t.data()[0]);
    }
    for (size_t i = 0; i < params.size(); ++i) {
      if (auto t = find_tensor(stored, "trainer.momentum." + params[i].name());
          t.defined() && t.data().size() == velocity[i].size()) {
        std::copy(t.data().begin(), t.data().end(), velocity[i].begin());
      }
    }
  }

  auto write_checkpoint = [&](const std::string& path, int64_t step) {
    std::vector<ad::Tensor> tensors = params;
    auto step_t = ad::Tensor::scalar(static_cast<double>(step));
    step_t.set_name("trainer.step");
    tensors.push_back(step_t);
    for (size_t i = 0; i < params.size(); ++i) {
      auto v = ad::Tensor::from_data(params[i].shape(),
                                     std::vector<double>(velocity[i]));
      v.set_name("trainer.momentum." + params[i].name());
      tensors.push_back(v);
    }
    save_checkpoint(path, tensors);
  };

  const int stride = model.stride();
  std::vector<PreparedSample> prepared;
  prepared.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    prepared.push_back(prepare_sample(s, dataset.width, dataset.height, stride,
                                      config.supervision, config.neutral_flow));
  }

  LossWeights weights;
  weights.lambda_proj = config.lambda_proj;
  weights.lambda_pair = config.lambda_pair;
  weights.warmup_steps =
      static_cast<int64_t>(std::llround(config.warmup_fraction * config.iterations));

  std::ofstream log(fs::path(config.out_dir) / "train_log.jsonl",
                    resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("train: cannot open the log for writing");

  const std::string final_path =
      (fs::path(config.out_dir) / "checkpoint_final.mswt").string();
  if (config.iterations <= start_step) {
    write_checkpoint(final_path, start_step);
    return {start_step, 0.0, 0.0, final_path};
  }

  Rng batch_rng = Rng::for_index(config.seed, 0xba7c4);
  const int64_t decay_step =
      static_cast<int64_t>(std::llround(config.lr_decay_at * config.iterations));

  TrainResult result;
  double last_good_loss = 0.0;
  for (int64_t step = start_step; step < config.iterations; ++step) {
    for (auto& p : params) p.zero_grad();

    ad::Graph g;
    ad::Tensor batch_loss;
    LossReport report;
    int64_t n_pairs = 0;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& ps = prepared[static_cast<size_t>(batch_rng.uniform_int(
          0, static_cast<int64_t>(prepared.size()) - 1))];
      auto feats = model.forward(g, ps.image, ps.flow_rgb);
      auto head = model.detection_head(g, feats.f_det);
      auto det = detection_loss(g, head.objectness, head.ltrb, ps.gt_boxes, stride);

      ad::Tensor proj, pair;
      for (const auto& inst : ps.instances) {
        auto ctrl = model.controller_at(g, head.controllers, inst.center_row,
                                        inst.center_col);
        auto m = model.mask_head(g, feats.f_mask, ctrl, inst.center_row,
                                 inst.center_col);
        auto p_loss = projection_loss(g, m, inst.grid_box);
        auto w_loss = pairwise_loss(g, m, inst.pairs);
        proj = proj.defined() ? g.add(proj, p_loss) : p_loss;
        pair = pair.defined() ? g.add(pair, w_loss) : w_loss;
        n_pairs += static_cast<int64_t>(inst.pairs.size());
      }
      const double inv = ps.instances.empty()
                             ? 0.0
                             : 1.0 / static_cast<double>(ps.instances.size());
      proj = proj.defined() ? g.affine(proj, inv, 0.0) : ad::Tensor::scalar(0.0);
      pair = pair.defined() ? g.affine(pair, inv, 0.0) : ad::Tensor::scalar(0.0);

      auto total = total_loss(g, det, proj, pair, step, weights);
      batch_loss = batch_loss.defined() ? g.add(batch_loss, total) : total;
      report.detection += det.value();
      report.projection += proj.value();
      report.pairwise += pair.value();
    }
    batch_loss = g.affine(batch_loss, 1.0 / config.batch_size, 0.0);
    const double loss_value = batch_loss.value();

    if (!std::isfinite(loss_value)) {
      write_checkpoint((fs::path(config.out_dir) / "checkpoint_abort.mswt").string(),
                       step);
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (last good loss "
          << last_good_loss << ")";
      throw TrainAbort(step, msg.str());
    }
    last_good_loss = loss_value;
    if (step == start_step) result.first_loss = loss_value;
    result.final_loss = loss_value;

    g.backward(batch_loss);

    // global gradient-norm clip
    double norm_sq = 0.0;
    for (auto& p : params) {
      for (double gv : p.grad()) norm_sq += gv * gv;
    }
    const double norm = std::sqrt(norm_sq);
    const double clip_scale = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

    const double lr = config.lr * (step >= decay_step ? config.lr_decay_factor : 1.0);
    for (size_t i = 0; i < params.size(); ++i) {
      auto data = params[i].data();
      auto grad = params[i].grad();
      auto& vel = velocity[i];
      for (size_t k = 0; k < vel.size(); ++k) {
        const double gv = grad[k] * clip_scale + config.weight_decay * data[k];
        vel[k] = config.momentum * vel[k] + gv;
        data[k] -= lr * vel[k];
      }
    }

    if ((step + 1) % config.log_interval == 0 || step + 1 == config.iterations) {
      report.detection /= config.batch_size;
      report.projection /= config.batch_size;
      report.pairwise /= config.batch_size;
      report.total = loss_value;
      report.n_pairs = n_pairs;
      log << report.to_json_line(step + 1) << "\n";
      log.flush();
    }
    if ((step + 1) % config.checkpoint_interval == 0 &&
        step + 1 != config.iterations) {
      std::ostringstream name;
      name << "checkpoint_" << (step + 1) << ".mswt";
      write_checkpoint((fs::path(config.out_dir) / name.str()).string(), step + 1);
    }
    result.steps = step + 1;
  }

  write_checkpoint(final_path, config.iterations);
  result.final_checkpoint = final_path;
  return result;
}

namespace {

struct Variant {
  std::string name;
  TrainConfig config;
};

std::vector<Variant> expand_axes(const TrainConfig& base,
                                 const std::vector<std::string>& axes) {
  std::vector<Variant> variants;
  auto add = [&](const std::string& name, auto mutate) {
    Variant v{name, base};
    mutate(v.config);
    variants.push_back(std::move(v));
  };
  auto add_components = [&] {
    add("w/o motion feat. for detection",
        [](TrainConfig& c) { c.model.motion_for_detection = false; });
    add("w/o motion feat. for segmentation",
        [](TrainConfig& c) { c.model.motion_for_mask = false; });
    add("w/o optical flow for pairwise loss",
        [](TrainConfig& c) { c.supervision.tau_flow = 0.0; });
    add("full model", [](TrainConfig&) {});
  };
  auto add_fusion = [&] {
    add("detection fusion: maximum",
        [](TrainConfig& c) { c.model.fusion.detection = DetectionFusion::kMax; });
    add("detection fusion: summation",
        [](TrainConfig& c) { c.model.fusion.detection = DetectionFusion::kSum; });
    add("mask fusion: maximum",
        [](TrainConfig& c) { c.model.fusion.mask = MaskFusion::kMax; });
    add("mask fusion: summation",
        [](TrainConfig& c) { c.model.fusion.mask = MaskFusion::kSum; });
    add("mask fusion: concat",
        [](TrainConfig& c) { c.model.fusion.mask = MaskFusion::kConcat; });
  };

  for (const auto& axis : axes) {
    if (axis == "components") {
      add_components();
    } else if (axis == "fusion") {
      add_fusion();
    } else if (axis == "no-motion-det") {
      add("w/o motion feat. for detection",
          [](TrainConfig& c) { c.model.motion_for_detection = false; });
    } else if (axis == "no-motion-seg") {
      add("w/o motion feat. for segmentation",
          [](TrainConfig& c) { c.model.motion_for_mask = false; });
    } else if (axis == "no-flow-pairwise") {
      add("w/o optical flow for pairwise loss",
          [](TrainConfig& c) { c.supervision.tau_flow = 0.0; });
    } else {
      throw std::invalid_argument("ablate: unknown axis '" + axis + "'");
    }
  }
  if (variants.empty()) add("full model", [](TrainConfig&) {});
  return variants;
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
  }
  return out;
}

}  // namespace

std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<std::string>& axes,
                                const std::string& eval_dir) {
  const auto variants = expand_axes(base, axes);
  const std::string eval_path = eval_dir.empty() ? base.data_dir : eval_dir;
  const Dataset eval_data = Dataset::load(eval_path);

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    TrainConfig cfg = variant.config;
    cfg.out_dir = (fs::path(base.out_dir) / sanitize(variant.name)).string();
    const auto trained = train(cfg);

    Rng rng(cfg.seed);
    TwoStreamModel model(cfg.model, rng);
    model.load(trained.final_checkpoint);
    rows.push_back({variant.name, evaluate(model, eval_data, cfg.neutral_flow)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,mask_ap,mask_ap50,mask_ap75,box_ap,box_ap50,box_ap75\n";
  for (const auto& row : rows) {
    os << '"' << row.name << '"';
    for (double v : {row.result.mask.ap, row.result.mask.ap50, row.result.mask.ap75,
                     row.result.box.ap, row.result.box.ap50, row.result.box.ap75}) {
      char buf[24];
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  size_t width = 12;
  for (const auto& row : rows) width = std::max(width, row.name.size());
  os << std::string(width, ' ') << "  mask AP  AP50    AP75    box AP  AP50    AP75\n";
  for (const auto& row : rows) {
    os << row.name << std::string(width - row.name.size(), ' ');
    for (double v : {row.result.mask.ap, row.result.mask.ap50, row.result.mask.ap75,
                     row.result.box.ap, row.result.box.ap50, row.result.box.ap75}) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "  %6.3f", v);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace msw
