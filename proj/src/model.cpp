#include "msw/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msw/checkpoint.hpp"

namespace msw {

namespace {
constexpr int kHeadHidden = 8;  // dynamic head width, in+2 -> 8 -> 8 -> 1
}

void ModelConfig::validate() const {
  if (widths.size() < 2) {
    throw std::invalid_argument("model: at least two backbone stages required");
  }
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("model: widths must be positive");
  }
  if (mask_branch_channels <= 0 || c_mask <= 0) {
    throw std::invalid_argument("model: channel counts must be positive");
  }
  if (score_threshold < 0.0 || score_threshold > 1.0 || nms_iou < 0.0 ||
      nms_iou > 1.0) {
    throw std::invalid_argument("model: thresholds must lie in [0, 1]");
  }
}

TwoStreamModel::TwoStreamModel(ModelConfig config, Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  const auto& w = config_.widths;
  int in_ch = 3;
  for (size_t s = 0; s < w.size(); ++s) {
    const int stride = s == 0 ? 1 : 2;
    backbone_convs_.push_back(make_conv(
        rng, "backbone.s" + std::to_string(s) + ".conv0", in_ch, w[s], 3, stride, 1));
    backbone_convs_.push_back(make_conv(
        rng, "backbone.s" + std::to_string(s) + ".conv1", w[s], w[s], 3, 1, 1));
    in_ch = w[s];
  }

  auto build_branch = [&](const std::string& prefix) {
    std::vector<Conv> branch;
    int ch = w.back();
    for (int i = 0; i < 4; ++i) {
      branch.push_back(make_conv(rng, prefix + ".conv" + std::to_string(i), ch,
                                 config_.mask_branch_channels, 3, 1, 1));
      ch = config_.mask_branch_channels;
    }
    branch.push_back(make_conv(rng, prefix + ".out", ch, config_.c_mask, 3, 1, 1));
    return branch;
  };
  mask_branch_img_ = build_branch("mask_branch_img");
  mask_branch_flow_ = build_branch("mask_branch_flow");

  det_tower_ = make_conv(rng, "det.tower", w.back(), w.back(), 3, 1, 1);
  det_obj_ = make_conv(rng, "det.obj", w.back(), 1, 1, 1, 0);
  det_ltrb_ = make_conv(rng, "det.ltrb", w.back(), 4, 1, 1, 0);
  det_ctrl_ = make_conv(rng, "det.ctrl", w.back(), controller_length(), 1, 1, 0);
}

TwoStreamModel::Conv TwoStreamModel::make_conv(Rng& rng, const std::string& name,
                                               int in_ch, int out_ch, int kernel,
                                               int stride, int padding) {
  const int fan_in = in_ch * kernel * kernel;
  const double std_dev = std::sqrt(2.0 / fan_in);
  std::vector<double> w(static_cast<size_t>(out_ch) * in_ch * kernel * kernel);
  for (auto& v : w) v = rng.normal(0.0, std_dev);
  Conv conv;
  conv.weight = ad::Tensor::from_data({out_ch, in_ch, kernel, kernel},
                                      std::move(w), true);
  conv.weight.set_name(name + ".weight");
  conv.bias = ad::Tensor::zeros({out_ch}, true);
  conv.bias.set_name(name + ".bias");
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

ad::Tensor TwoStreamModel::apply(ad::Graph& g, const Conv& conv,
                                 const ad::Tensor& x) const {
  return g.conv2d(x, conv.weight, conv.bias, conv.stride, conv.padding);
}

ad::Tensor TwoStreamModel::backbone(ad::Graph& g, const ad::Tensor& x) const {
  ad::Tensor h = x;
  for (const auto& conv : backbone_convs_) h = g.relu(apply(g, conv, h));
  return h;
}

ad::Tensor TwoStreamModel::mask_branch(ad::Graph& g, const std::vector<Conv>& branch,
                                       const ad::Tensor& x) const {
  ad::Tensor h = x;
  for (size_t i = 0; i + 1 < branch.size(); ++i) h = g.relu(apply(g, branch[i], h));
  return apply(g, branch.back(), h);  // linear output layer
}

TwoStreamModel::Features TwoStreamModel::forward(ad::Graph& g,
                                                 const ad::Tensor& image,
                                                 const ad::Tensor& flow_rgb) const {
  if (image.shape() != flow_rgb.shape()) {
    throw std::invalid_argument("forward: image and flow extents differ");
  }
  Features out;
  // One backbone, applied twice: the parameter tensors are shared.
  auto f_img = backbone(g, image);
  auto f_flow = backbone(g, flow_rgb);

  if (config_.motion_for_detection) {
    out.f_det = config_.fusion.detection == DetectionFusion::kSum
                    ? g.channel_sum(f_img, f_flow)
                    : g.channel_max(f_img, f_flow);
  } else {
    out.f_det = f_img;
  }

  out.f_mask_img = mask_branch(g, mask_branch_img_, f_img);
  out.f_mask_flow = mask_branch(g, mask_branch_flow_, f_flow);
  if (!config_.motion_for_mask) {
    out.f_mask = out.f_mask_img;
  } else {
    switch (config_.fusion.mask) {
      case MaskFusion::kConcat:
        out.f_mask = g.concat_channels(out.f_mask_img, out.f_mask_flow);
        break;
      case MaskFusion::kSum:
        out.f_mask = g.channel_sum(out.f_mask_img, out.f_mask_flow);
        break;
      case MaskFusion::kMax:
        out.f_mask = g.channel_max(out.f_mask_img, out.f_mask_flow);
        break;
    }
  }
  return out;
}

TwoStreamModel::HeadOutputs TwoStreamModel::detection_head(
    ad::Graph& g, const ad::Tensor& f_det) const {
  HeadOutputs out;
  auto tower = g.relu(apply(g, det_tower_, f_det));
  out.objectness = apply(g, det_obj_, tower);
  out.ltrb = apply(g, det_ltrb_, tower);
  out.controllers = apply(g, det_ctrl_, tower);
  return out;
}

int TwoStreamModel::mask_head_in_channels() const {
  if (!config_.motion_for_mask) return config_.c_mask;
  return config_.fusion.mask == MaskFusion::kConcat ? 2 * config_.c_mask
                                                    : config_.c_mask;
}

int TwoStreamModel::controller_length() const {
  const int in = mask_head_in_channels() + 2;  // two coordinate channels
  return (in * kHeadHidden + kHeadHidden) +
         (kHeadHidden * kHeadHidden + kHeadHidden) + (kHeadHidden + 1);
}

ad::Tensor TwoStreamModel::controller_at(ad::Graph& g,
                                         const ad::Tensor& controllers, int row,
                                         int col) const {
  const auto& s = controllers.shape();
  if (s.size() != 3) throw std::invalid_argument("controller_at: bad controller map");
  const int Hg = s[1], Wg = s[2];
  if (row < 0 || row >= Hg || col < 0 || col >= Wg) {
    throw std::out_of_range("controller_at: location outside the grid");
  }
  std::vector<int64_t> idx(static_cast<size_t>(s[0]));
  for (int c = 0; c < s[0]; ++c) {
    idx[static_cast<size_t>(c)] =
        static_cast<int64_t>(c) * Hg * Wg + static_cast<int64_t>(row) * Wg + col;
  }
  return g.gather(controllers, std::move(idx));
}

ad::Tensor TwoStreamModel::mask_head(ad::Graph& g, const ad::Tensor& f_mask,
                                     const ad::Tensor& controller, int center_row,
                                     int center_col) const {
  const auto& s = f_mask.shape();
  if (s.size() != 3 || s[0] != mask_head_in_channels()) {
    throw std::invalid_argument("mask_head: wrong mask feature channel count");
  }
  if (controller.numel() != controller_length()) {
    throw std::invalid_argument("mask_head: controller length mismatch");
  }
  const int Hg = s[1], Wg = s[2];

  // relative coordinates, scaled by half the grid diagonal
  const double scale = 0.5 * std::sqrt(static_cast<double>(Hg) * Hg +
                                       static_cast<double>(Wg) * Wg);
  std::vector<double> coords(2 * static_cast<size_t>(Hg) * Wg);
  for (int i = 0; i < Hg; ++i) {
    for (int j = 0; j < Wg; ++j) {
      coords[static_cast<size_t>(i) * Wg + j] = (j - center_col) / scale;
      coords[static_cast<size_t>(Hg) * Wg + static_cast<size_t>(i) * Wg + j] =
          (i - center_row) / scale;
    }
  }
  auto coord_t = ad::Tensor::from_data({2, Hg, Wg}, std::move(coords));
  auto x = g.concat_channels(f_mask, coord_t);

  const int in = mask_head_in_channels() + 2;
  int64_t off = 0;
  auto slice = [&](int64_t count) {
    std::vector<int64_t> idx(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = off + i;
    off += count;
    return g.gather(controller, std::move(idx));
  };
  auto w1 = g.reshape(slice(static_cast<int64_t>(kHeadHidden) * in),
                      {kHeadHidden, in, 1, 1});
  auto b1 = slice(kHeadHidden);
  auto w2 = g.reshape(slice(kHeadHidden * kHeadHidden),
                      {kHeadHidden, kHeadHidden, 1, 1});
  auto b2 = slice(kHeadHidden);
  auto w3 = g.reshape(slice(kHeadHidden), {1, kHeadHidden, 1, 1});
  auto b3 = slice(1);

  auto h = g.relu(g.conv2d(x, w1, b1, 1, 0));
  h = g.relu(g.conv2d(h, w2, b2, 1, 0));
  return g.sigmoid(g.conv2d(h, w3, b3, 1, 0));
}

std::vector<TwoStreamModel::Detection> TwoStreamModel::detect(
    const ad::Tensor& objectness, const ad::Tensor& ltrb) const {
  const auto& s = objectness.shape();
  const int Hg = s[1], Wg = s[2];
  const int stride_px = stride();
  const auto logits = objectness.data();
  const auto offs = ltrb.data();
  const int64_t cells = static_cast<int64_t>(Hg) * Wg;

  std::vector<Detection> candidates;
  for (int i = 0; i < Hg; ++i) {
    for (int j = 0; j < Wg; ++j) {
      const int64_t cell = static_cast<int64_t>(i) * Wg + j;
      const double x = logits[static_cast<size_t>(cell)];
      const double score = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                    : std::exp(x) / (1.0 + std::exp(x));
      if (score < config_.score_threshold) continue;
      const double cx = (j + 0.5) * stride_px;
      const double cy = (i + 0.5) * stride_px;
      const double l = std::max(0.0, offs[static_cast<size_t>(cell)]) * stride_px;
      const double t = std::max(0.0, offs[static_cast<size_t>(cells + cell)]) * stride_px;
      const double r = std::max(0.0, offs[static_cast<size_t>(2 * cells + cell)]) * stride_px;
      const double b = std::max(0.0, offs[static_cast<size_t>(3 * cells + cell)]) * stride_px;
      Detection d;
      d.box = {std::max(0.0, cx - l), std::max(0.0, cy - t),
               std::min(static_cast<double>(Wg) * stride_px, cx + r),
               std::min(static_cast<double>(Hg) * stride_px, cy + b)};
      d.score = score;
      d.grid_row = i;
      d.grid_col = j;
      candidates.push_back(d);
    }
  }
  // stable order: score desc, then grid position
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.grid_row != b.grid_row) return a.grid_row < b.grid_row;
    return a.grid_col < b.grid_col;
  });
  std::vector<Detection> kept;
  for (const auto& c : candidates) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (box_iou(c.box, k.box) > config_.nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

void TwoStreamModel::collect(std::vector<ad::Tensor>& out,
                             const std::vector<Conv>& convs) const {
  for (const auto& c : convs) {
    out.push_back(c.weight);
    out.push_back(c.bias);
  }
}

std::vector<ad::Tensor> TwoStreamModel::parameters() const {
  std::vector<ad::Tensor> out;
  collect(out, backbone_convs_);
  collect(out, mask_branch_img_);
  collect(out, mask_branch_flow_);
  collect(out, {det_tower_, det_obj_, det_ltrb_, det_ctrl_});
  return out;
}

std::vector<ad::Tensor> TwoStreamModel::backbone_parameters() const {
  std::vector<ad::Tensor> out;
  collect(out, backbone_convs_);
  return out;
}

void TwoStreamModel::save(const std::string& path) const {
  save_checkpoint(path, parameters());
}

void TwoStreamModel::load(const std::string& path) {
  const auto stored = load_checkpoint(path);
  for (auto& param : parameters()) {
    ad::Tensor src = find_tensor(stored, param.name());
    if (!src.defined()) {
      throw std::runtime_error("checkpoint lacks parameter " + param.name());
    }
    if (src.shape() != param.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + param.name());
    }
    std::copy(src.data().begin(), src.data().end(), param.data().begin());
  }
}

}  // namespace msw
