#include "msw/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "msw/losses.hpp"

namespace msw {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_iou: extent mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0, pb = b[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

constexpr double kCocoArea = 640.0 * 640.0;

struct PooledDet {
  double score = 0.0;
  int image = 0;
  int index = 0;
  double area = 0.0;          // predicted area for banding
  std::vector<double> ious;   // against this image's kept ground truth
};

/// AP at one IoU threshold from pooled detections and a ground-truth count.
/// Greedy matching per image in (score desc, index asc) order; the PR curve
/// advances one score group at a time.
double ap_at_threshold(const std::vector<std::vector<PooledDet>>& per_image,
                       int64_t gt_total,
                       const std::vector<std::vector<char>>& gt_keep,
                       double threshold) {
  struct Flagged {
    double score;
    bool tp;
  };
  std::vector<Flagged> flags;
  for (size_t img = 0; img < per_image.size(); ++img) {
    std::vector<char> taken(gt_keep[img].size(), 0);
    for (const auto& det : per_image[img]) {
      double best = threshold;
      int best_gt = -1;
      for (size_t g = 0; g < det.ious.size(); ++g) {
        if (!gt_keep[img][g] || taken[g]) continue;
        if (det.ious[g] >= best) {
          best = det.ious[g];
          best_gt = static_cast<int>(g);
        }
      }
      if (best_gt >= 0) {
        taken[static_cast<size_t>(best_gt)] = 1;
        flags.push_back({det.score, true});
      } else {
        flags.push_back({det.score, false});
      }
    }
  }
  if (gt_total == 0) return -1.0;
  std::sort(flags.begin(), flags.end(),
            [](const Flagged& a, const Flagged& b) { return a.score > b.score; });

  // PR points per score group
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  int64_t tp = 0, fp = 0;
  for (size_t i = 0; i < flags.size();) {
    size_t j = i;
    while (j < flags.size() && flags[j].score == flags[i].score) {
      tp += flags[j].tp;
      fp += !flags[j].tp;
      ++j;
    }
    pr.emplace_back(static_cast<double>(tp) / static_cast<double>(gt_total),
                    static_cast<double>(tp) / static_cast<double>(tp + fp));
    i = j;
  }

  double ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    for (const auto& [recall, precision] : pr) {
      if (recall >= r) best = std::max(best, precision);
    }
    ap += best;
  }
  return ap / 101.0;
}

enum class AreaBand { kAll, kSmall, kMedium, kLarge };

bool in_band(double area, AreaBand band, double small_max, double medium_max) {
  switch (band) {
    case AreaBand::kAll: return true;
    case AreaBand::kSmall: return area < small_max;
    case AreaBand::kMedium: return area >= small_max && area < medium_max;
    case AreaBand::kLarge: return area >= medium_max;
  }
  return true;
}

TaskMetrics score_task(const std::vector<EvalImage>& images, bool use_mask) {
  // area bands scaled from the COCO thresholds by relative image area
  double image_area = 0.0;
  for (const auto& img : images) {
    image_area = std::max(image_area, static_cast<double>(img.width) * img.height);
  }
  const double scale = image_area / kCocoArea;
  const double small_max = 32.0 * 32.0 * scale;
  const double medium_max = 96.0 * 96.0 * scale;

  // per-image IoU tables, detections in (score desc, index asc) order
  std::vector<std::vector<PooledDet>> dets(images.size());
  std::vector<std::vector<double>> gt_areas(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    for (const auto& gt : img.ground_truth) {
      gt_areas[i].push_back(use_mask ? gt.area
                                     : BoxF::from_pixels(gt.box).area());
    }
    for (size_t d = 0; d < img.predictions.size(); ++d) {
      const auto& pred = img.predictions[d];
      PooledDet det;
      det.score = pred.score;
      det.image = static_cast<int>(i);
      det.index = static_cast<int>(d);
      if (use_mask) {
        double area = 0.0;
        for (uint8_t v : pred.mask) area += v != 0;
        det.area = area;
      } else {
        det.area = pred.box.area();
      }
      det.ious.reserve(img.ground_truth.size());
      for (const auto& gt : img.ground_truth) {
        det.ious.push_back(use_mask ? mask_iou(pred.mask, gt.mask)
                                    : box_iou(pred.box, BoxF::from_pixels(gt.box)));
      }
      dets[i].push_back(std::move(det));
    }
    std::stable_sort(dets[i].begin(), dets[i].end(),
                     [](const PooledDet& a, const PooledDet& b) {
                       return a.score > b.score;
                     });
  }

  auto evaluate_band = [&](AreaBand band) {
    std::vector<std::vector<char>> gt_keep(images.size());
    int64_t gt_total = 0;
    for (size_t i = 0; i < images.size(); ++i) {
      gt_keep[i].resize(gt_areas[i].size());
      for (size_t g = 0; g < gt_areas[i].size(); ++g) {
        gt_keep[i][g] = in_band(gt_areas[i][g], band, small_max, medium_max);
        gt_total += gt_keep[i][g];
      }
    }
    std::vector<std::vector<PooledDet>> banded(dets.size());
    for (size_t i = 0; i < dets.size(); ++i) {
      for (const auto& d : dets[i]) {
        if (in_band(d.area, band, small_max, medium_max)) banded[i].push_back(d);
      }
    }
    std::vector<double> aps;
    for (int t = 0; t < 10; ++t) {
      aps.push_back(ap_at_threshold(banded, gt_total, gt_keep, 0.5 + 0.05 * t));
    }
    return aps;
  };

  const auto all = evaluate_band(AreaBand::kAll);
  TaskMetrics m;
  m.ap = 0.0;
  for (double v : all) m.ap += v;
  m.ap /= 10.0;
  m.ap50 = all[0];
  m.ap75 = all[5];
  auto band_mean = [&](AreaBand band) {
    const auto aps = evaluate_band(band);
    if (aps[0] < 0.0) return -1.0;
    double acc = 0.0;
    for (double v : aps) acc += v;
    return acc / 10.0;
  };
  m.ap_s = band_mean(AreaBand::kSmall);
  m.ap_m = band_mean(AreaBand::kMedium);
  m.ap_l = band_mean(AreaBand::kLarge);
  return m;
}

}  // namespace

EvalResult evaluate_detections(const std::vector<EvalImage>& images) {
  if (images.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult result;
  result.mask = score_task(images, true);
  result.box = score_task(images, false);
  return result;
}

std::vector<double> upsample_bilinear(const std::vector<double>& src, int src_h,
                                      int src_w, int dst_h, int dst_w) {
  std::vector<double> out(static_cast<size_t>(dst_h) * dst_w);
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src_h - 1);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < dst_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src_w - 1);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const double top = src[static_cast<size_t>(y0) * src_w + x0] * (1.0 - wx) +
                         src[static_cast<size_t>(y0) * src_w + x1] * wx;
      const double bot = src[static_cast<size_t>(y1) * src_w + x0] * (1.0 - wx) +
                         src[static_cast<size_t>(y1) * src_w + x1] * wx;
      out[static_cast<size_t>(y) * dst_w + x] = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

EvalResult evaluate(const TwoStreamModel& model, const Dataset& dataset,
                    bool neutral_flow) {
  if (dataset.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<EvalImage> images;
  images.reserve(dataset.samples.size());
  for (const auto& sample : dataset.samples) {
    EvalImage img;
    img.width = dataset.width;
    img.height = dataset.height;
    for (const auto& inst : sample.instances) {
      GroundTruthInstance gt;
      gt.box = inst.box;
      gt.mask = inst.mask;
      gt.area = 0.0;
      for (uint8_t v : inst.mask) gt.area += v;
      img.ground_truth.push_back(std::move(gt));
    }

    const int W = dataset.width, H = dataset.height;
    std::vector<double> image_data(3 * static_cast<size_t>(H) * W);
    for (int c = 0; c < 3; ++c) {
      for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
        image_data[static_cast<size_t>(c) * H * W + p] =
            sample.frame_t.pixels[3 * p + c] / 255.0;
      }
    }
    auto flow_rgb = neutral_flow ? FlowColorImage{}
                                 : flow_to_rgb(sample.flow);
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
    auto feats = model.forward(g, image_t, flow_t);
    auto head = model.detection_head(g, feats.f_det);
    const auto detections = model.detect(head.objectness, head.ltrb);
    for (const auto& det : detections) {
      auto ctrl = model.controller_at(g, head.controllers, det.grid_row, det.grid_col);
      auto score_map = model.mask_head(g, feats.f_mask, ctrl, det.grid_row, det.grid_col);
      const int hg = score_map.shape()[1], wg = score_map.shape()[2];
      std::vector<double> grid(score_map.data().begin(), score_map.data().end());
      const auto up = upsample_bilinear(grid, hg, wg, H, W);
      PredictedInstance pred;
      pred.box = det.box;
      pred.score = det.score;
      pred.mask.resize(up.size());
      for (size_t p = 0; p < up.size(); ++p) pred.mask[p] = up[p] >= 0.5 ? 1 : 0;
      img.predictions.push_back(std::move(pred));
    }
    images.push_back(std::move(img));
  }
  return evaluate_detections(images);
}

std::string EvalResult::to_json() const {
  nlohmann::json j;
  auto fill = [](const TaskMetrics& m) {
    return nlohmann::json{{"ap", m.ap},   {"ap50", m.ap50}, {"ap75", m.ap75},
                          {"ap_s", m.ap_s}, {"ap_m", m.ap_m}, {"ap_l", m.ap_l}};
  };
  j["mask"] = fill(mask);
  j["box"] = fill(box);
  return j.dump(2);
}

std::string EvalResult::to_table() const {
  std::ostringstream os;
  os << "task   AP      AP50    AP75    AP_S    AP_M    AP_L\n";
  auto row = [&](const char* name, const TaskMetrics& m) {
    os << name;
    for (double v : {m.ap, m.ap50, m.ap75, m.ap_s, m.ap_m, m.ap_l}) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "  %6.3f", v);
      os << buf;
    }
    os << "\n";
  };
  row("mask", mask);
  row("box ", box);
  return os.str();
}

}  // namespace msw
