#include "msw/viz.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "msw/eval.hpp"

namespace msw {

namespace {

// compact viridis-style gradient, linearly interpolated
const double kStops[6][3] = {{0.267, 0.005, 0.329}, {0.283, 0.141, 0.458},
                             {0.254, 0.265, 0.530}, {0.164, 0.471, 0.558},
                             {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144}};

void colorize(double v, uint8_t* px) {
  v = std::clamp(v, 0.0, 1.0) * 5.0;
  const int k = std::min(4, static_cast<int>(v));
  const double f = v - k;
  for (int c = 0; c < 3; ++c) {
    const double val = kStops[k][c] * (1.0 - f) + kStops[k + 1][c] * f;
    px[c] = static_cast<uint8_t>(std::lround(val * 255.0));
  }
}

ImageU8 heatmap_image(const std::vector<double>& grid, int gh, int gw, int h, int w) {
  // normalize to [0, 1] per image, then colorize and upscale
  double lo = grid.empty() ? 0.0 : grid[0], hi = lo;
  for (double v : grid) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  std::vector<double> norm(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) norm[i] = (grid[i] - lo) / span;
  const auto up = upsample_bilinear(norm, gh, gw, h, w);
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.pixels.resize(3 * static_cast<size_t>(w) * h);
  for (size_t p = 0; p < up.size(); ++p) colorize(up[p], &img.pixels[3 * p]);
  return img;
}

std::vector<double> channel_mean_abs(const ad::Tensor& t) {
  const auto& s = t.shape();
  const int C = s[0], H = s[1], W = s[2];
  std::vector<double> out(static_cast<size_t>(H) * W, 0.0);
  const auto data = t.data();
  for (int c = 0; c < C; ++c) {
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
      out[static_cast<size_t>(p)] += std::abs(data[static_cast<size_t>(c) * H * W + p]);
    }
  }
  for (auto& v : out) v /= C;
  return out;
}

double contrast_ratio(const std::vector<double>& grid, int gh, int gw,
                      const std::vector<const InstanceAnnotation*>& instances,
                      int h, int w) {
  double fg = 0.0, bg = 0.0;
  int64_t n_fg = 0, n_bg = 0;
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      // nearest source pixel of this grid cell
      const int sr = std::min(h - 1, static_cast<int>((r + 0.5) * h / gh));
      const int sc = std::min(w - 1, static_cast<int>((c + 0.5) * w / gw));
      bool is_fg = false;
      for (const auto* inst : instances) {
        if (inst->mask[static_cast<size_t>(sr) * w + sc]) {
          is_fg = true;
          break;
        }
      }
      const double v = grid[static_cast<size_t>(r) * gw + c];
      if (is_fg) {
        fg += v;
        ++n_fg;
      } else {
        bg += v;
        ++n_bg;
      }
    }
  }
  const double mean_fg = n_fg > 0 ? fg / n_fg : 0.0;
  const double mean_bg = n_bg > 0 ? bg / n_bg : 0.0;
  return (mean_fg + 1e-9) / (mean_bg + 1e-9);
}

const uint8_t kPalette[6][3] = {{230, 60, 60},  {60, 200, 90},  {70, 110, 240},
                                {240, 200, 40}, {200, 80, 220}, {60, 210, 210}};

ImageU8 flow_color_to_u8(const FlowColorImage& fc) {
  ImageU8 img;
  img.width = fc.width;
  img.height = fc.height;
  img.pixels.resize(3 * static_cast<size_t>(fc.width) * fc.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(fc.rgb[i], 0.0, 1.0) * 255.0));
  }
  return img;
}

}  // namespace

VisualizeResult visualize_sample(const TwoStreamModel& model,
                                 const Dataset::Sample& sample, int width,
                                 int height, const SupervisionParams& params,
                                 bool neutral_flow, const std::string& out_prefix,
                                 double explicit_flow_max) {
  VisualizeResult result;
  const int W = width, H = height;

  const auto flow_rgb =
      explicit_flow_max > 0.0
          ? flow_to_rgb(sample.flow, explicit_flow_max)
          : flow_to_rgb(sample.flow);

  // model inputs
  std::vector<double> image_data(3 * static_cast<size_t>(H) * W);
  for (int c = 0; c < 3; ++c) {
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
      image_data[static_cast<size_t>(c) * H * W + p] = sample.frame_t.pixels[3 * p + c] / 255.0;
    }
  }
  std::vector<double> flow_data(3 * static_cast<size_t>(H) * W, 1.0);
  if (!neutral_flow) {
    for (int c = 0; c < 3; ++c) {
      for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
        flow_data[static_cast<size_t>(c) * H * W + p] = flow_rgb.rgb[3 * p + c];
      }
    }
  }
  ad::Graph g;
  auto image_t = ad::Tensor::from_data({3, H, W}, std::move(image_data));
  auto flow_t = ad::Tensor::from_data({3, H, W}, std::move(flow_data));
  const auto feats = model.forward(g, image_t, flow_t);
  const auto head = model.detection_head(g, feats.f_det);

  auto emit = [&](const std::string& suffix, const ImageU8& img) {
    const std::string path = out_prefix + "_" + suffix + ".png";
    write_png(path, img);
    result.files.push_back(path);
  };

  // 1. input frame, 2. flow color image
  emit("frame", sample.frame_t);
  emit("flow", flow_color_to_u8(flow_rgb));

  // 3./4. mask-branch activation heatmaps
  const int gh = feats.f_mask_img.shape()[1], gw = feats.f_mask_img.shape()[2];
  const auto act_img = channel_mean_abs(feats.f_mask_img);
  const auto act_flow = channel_mean_abs(feats.f_mask_flow);
  emit("act_img", heatmap_image(act_img, gh, gw, H, W));
  emit("act_flow", heatmap_image(act_flow, gh, gw, H, W));

  std::vector<const InstanceAnnotation*> insts;
  for (const auto& inst : sample.instances) insts.push_back(&inst);
  result.appearance_contrast = contrast_ratio(act_img, gh, gw, insts, H, W);
  result.flow_contrast = contrast_ratio(act_flow, gh, gw, insts, H, W);

  // 5. predicted masks overlaid on the frame
  ImageU8 overlay = sample.frame_t;
  const auto detections = model.detect(head.objectness, head.ltrb);
  for (size_t d = 0; d < detections.size(); ++d) {
    const auto& det = detections[d];
    auto ctrl = model.controller_at(g, head.controllers, det.grid_row, det.grid_col);
    auto score_map = model.mask_head(g, feats.f_mask, ctrl, det.grid_row, det.grid_col);
    std::vector<double> grid(score_map.data().begin(), score_map.data().end());
    const auto up = upsample_bilinear(grid, gh, gw, H, W);
    const uint8_t* tint = kPalette[d % 6];
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
      if (up[static_cast<size_t>(p)] < 0.5) continue;
      for (int c = 0; c < 3; ++c) {
        overlay.pixels[3 * p + c] =
            static_cast<uint8_t>((overlay.pixels[3 * p + c] + tint[c]) / 2);
      }
    }
  }
  emit("masks", overlay);

  // 6. positive pseudo-label pairs over the frame
  ImageU8 pair_map = sample.frame_t;
  const int stride = model.stride();
  const auto lab_grid = resize_nearest(srgb_to_lab(sample.frame_t), gw, gh);
  const auto flow_rgb_grid = resize_nearest(flow_rgb, gw, gh);
  const auto flow_uv_grid = resize_nearest(sample.flow, gw, gh);
  auto mark = [&](int gr, int gc) {
    for (int r = gr * stride; r < std::min(H, (gr + 1) * stride); ++r) {
      for (int c = gc * stride; c < std::min(W, (gc + 1) * stride); ++c) {
        uint8_t* px = pair_map.at(r, c);
        px[1] = static_cast<uint8_t>((px[1] + 255) / 2);  // green tint
      }
    }
  };
  for (const auto& inst : sample.instances) {
    Box grid_box = box_to_grid(inst.box, stride);
    grid_box.x1 = std::min(grid_box.x1, gw - 1);
    grid_box.y1 = std::min(grid_box.y1, gh - 1);
    const auto set = build_pair_set(lab_grid, flow_rgb_grid, flow_uv_grid, grid_box, params);
    for (size_t i = 0; i < set.size(); ++i) {
      if (!set.labels[i]) continue;
      mark(set.pairs[i].r1, set.pairs[i].c1);
      mark(set.pairs[i].r2, set.pairs[i].c2);
    }
  }
  emit("pairs", pair_map);

  return result;
}

}  // namespace msw
