#pragma once

// Test-only reference implementations, written independently of the library
// code they check: everything here recomputes its answer from first
// principles with plain double loops.

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <vector>

#include "msw/eval.hpp"
#include "msw/geometry.hpp"
#include "msw/imaging.hpp"
#include "msw/pairwise.hpp"

namespace oracle {

using IndexPair = std::tuple<int, int, int, int>;  // r1, c1, r2, c2 canonical

/// All unordered local pixel pairs with at least one endpoint inside the
/// box: double loop over every ordered pixel pair, neighborhood test,
/// canonicalization into a set.
inline std::set<IndexPair> enumerate_pairs_bruteforce(const msw::Box& box,
                                                      int width, int height,
                                                      int kernel_size,
                                                      int dilation) {
  const int radius = (kernel_size - 1) / 2;
  auto in_neighborhood = [&](int r1, int c1, int r2, int c2) {
    const int dy = r2 - r1;
    const int dx = c2 - c1;
    if (dy == 0 && dx == 0) return false;
    if (dy % dilation != 0 || dx % dilation != 0) return false;
    return std::abs(dy / dilation) <= radius && std::abs(dx / dilation) <= radius;
  };
  std::set<IndexPair> out;
  for (int r1 = 0; r1 < height; ++r1) {
    for (int c1 = 0; c1 < width; ++c1) {
      for (int r2 = 0; r2 < height; ++r2) {
        for (int c2 = 0; c2 < width; ++c2) {
          if (!in_neighborhood(r1, c1, r2, c2)) continue;
          const bool first_in = box.contains(r1, c1);
          const bool second_in = box.contains(r2, c2);
          if (!first_in && !second_in) continue;
          if (std::pair{r1, c1} <= std::pair{r2, c2}) {
            out.insert({r1, c1, r2, c2});
          } else {
            out.insert({r2, c2, r1, c1});
          }
        }
      }
    }
  }
  return out;
}

/// From-scratch pairwise loss: enumerates pairs by brute force, recomputes
/// both similarity kernels and the threshold rule directly from the inputs,
/// then averages -y_e log P over the full pair count.
inline double pairwise_loss_bruteforce(const std::vector<double>& score_map,
                                       int width, int height,
                                       const msw::LabImage& lab,
                                       const msw::FlowColorImage& flow_rgb,
                                       const msw::Box& box,
                                       const msw::SupervisionParams& params) {
  const auto pairs = enumerate_pairs_bruteforce(box, width, height,
                                                params.kernel_size, params.dilation);
  double acc = 0.0;
  for (const auto& [r1, c1, r2, c2] : pairs) {
    double dc = 0.0, df = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      const double lc = lab.at(r1, c1)[ch] - lab.at(r2, c2)[ch];
      const double lf = flow_rgb.at(r1, c1)[ch] - flow_rgb.at(r2, c2)[ch];
      dc += lc * lc;
      df += lf * lf;
    }
    const double s_color = std::exp(-std::sqrt(dc) / params.theta_color);
    const double s_flow = std::exp(-std::sqrt(df) / params.theta_flow);
    const bool label = s_color >= params.tau_color && s_flow >= params.tau_flow;
    if (!label) continue;
    const double a = score_map[static_cast<size_t>(r1) * width + c1];
    const double b = score_map[static_cast<size_t>(r2) * width + c2];
    const double p = std::max(a * b + (1.0 - a) * (1.0 - b), 1e-8);
    acc += std::log(p);
  }
  if (pairs.empty()) return 0.0;
  return -acc / static_cast<double>(pairs.size());
}

/// Independent COCO-style evaluator. Recomputes IoUs, matching, and the
/// 101-point interpolated AP from scratch per threshold with plain loops.
namespace coco_ref {

inline double iou_masks(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  int64_t inter = 0, a_count = 0, b_count = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    a_count += a[i] != 0;
    b_count += b[i] != 0;
    inter += (a[i] != 0) && (b[i] != 0);
  }
  const int64_t uni = a_count + b_count - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double iou_boxes(const msw::BoxF& a, const msw::BoxF& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0.0 || h <= 0.0) {
    const double uni = a.area() + b.area();
    return uni <= 0.0 ? 0.0 : 0.0;
  }
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

struct BandLimits {
  double small_max = 0.0;
  double medium_max = 0.0;
};

// band: 0 all, 1 small, 2 medium, 3 large
inline bool band_ok(double area, int band, const BandLimits& lim) {
  if (band == 0) return true;
  if (band == 1) return area < lim.small_max;
  if (band == 2) return area >= lim.small_max && area < lim.medium_max;
  return area >= lim.medium_max;
}

inline double ap_one_threshold(const std::vector<msw::EvalImage>& images,
                               bool use_mask, double threshold, int band,
                               const BandLimits& lim) {
  std::vector<std::pair<double, int>> scored;  // (score, tp flag)
  int64_t n_gt = 0;
  for (const auto& img : images) {
    std::vector<int> used(img.ground_truth.size(), 0);
    std::vector<int> keep(img.ground_truth.size(), 0);
    for (size_t g = 0; g < img.ground_truth.size(); ++g) {
      const double area = use_mask
                              ? img.ground_truth[g].area
                              : msw::BoxF::from_pixels(img.ground_truth[g].box).area();
      keep[g] = band_ok(area, band, lim);
      n_gt += keep[g];
    }
    // detections ordered by score descending, stable in input order
    std::vector<size_t> order(img.predictions.size());
    for (size_t d = 0; d < order.size(); ++d) order[d] = d;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return img.predictions[a].score > img.predictions[b].score;
    });
    for (size_t d : order) {
      const auto& pred = img.predictions[d];
      double pred_area = 0.0;
      if (use_mask) {
        for (uint8_t v : pred.mask) pred_area += v != 0;
      } else {
        pred_area = pred.box.area();
      }
      if (!band_ok(pred_area, band, lim)) continue;
      int best = -1;
      double best_iou = threshold;
      for (size_t g = 0; g < img.ground_truth.size(); ++g) {
        if (!keep[g] || used[g]) continue;
        const double iou =
            use_mask ? iou_masks(pred.mask, img.ground_truth[g].mask)
                     : iou_boxes(pred.box, msw::BoxF::from_pixels(img.ground_truth[g].box));
        if (iou >= best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) used[static_cast<size_t>(best)] = 1;
      scored.emplace_back(pred.score, best >= 0 ? 1 : 0);
    }
  }
  if (n_gt == 0) return -1.0;
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  // cut points only at score-group boundaries
  std::vector<double> recalls, precisions;
  int64_t tp = 0, total = 0;
  for (size_t i = 0; i < scored.size(); ++i) {
    tp += scored[i].second;
    ++total;
    const bool boundary = i + 1 == scored.size() || scored[i + 1].first != scored[i].first;
    if (boundary) {
      recalls.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
      precisions.push_back(static_cast<double>(tp) / static_cast<double>(total));
    }
  }
  double acc = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double want = k / 100.0;
    double best = 0.0;
    for (size_t i = 0; i < recalls.size(); ++i) {
      if (recalls[i] >= want && precisions[i] > best) best = precisions[i];
    }
    acc += best;
  }
  return acc / 101.0;
}

inline msw::TaskMetrics task(const std::vector<msw::EvalImage>& images, bool use_mask) {
  double max_area = 0.0;
  for (const auto& img : images) {
    max_area = std::max(max_area, static_cast<double>(img.width) * img.height);
  }
  BandLimits lim;
  lim.small_max = 1024.0 * max_area / (640.0 * 640.0);
  lim.medium_max = 9216.0 * max_area / (640.0 * 640.0);

  auto mean_ap = [&](int band) {
    double acc = 0.0;
    for (int t = 0; t < 10; ++t) {
      const double ap = ap_one_threshold(images, use_mask, 0.5 + 0.05 * t, band, lim);
      if (ap < 0.0) return -1.0;
      acc += ap;
    }
    return acc / 10.0;
  };
  msw::TaskMetrics m;
  m.ap = mean_ap(0);
  m.ap50 = ap_one_threshold(images, use_mask, 0.50, 0, lim);
  m.ap75 = ap_one_threshold(images, use_mask, 0.75, 0, lim);
  m.ap_s = mean_ap(1);
  m.ap_m = mean_ap(2);
  m.ap_l = mean_ap(3);
  return m;
}

inline msw::EvalResult evaluate(const std::vector<msw::EvalImage>& images) {
  msw::EvalResult r;
  r.mask = task(images, true);
  r.box = task(images, false);
  return r;
}

}  // namespace coco_ref

}  // namespace oracle
