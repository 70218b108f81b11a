#include "msw/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msw {

PixelPair make_canonical_pair(int r1, int c1, int r2, int c2) {
  if (std::pair{r1, c1} <= std::pair{r2, c2}) return {r1, c1, r2, c2};
  return {r2, c2, r1, c1};
}

void SupervisionParams::validate() const {
  if (!(theta_color > 0.0) || !(theta_flow > 0.0)) {
    throw std::invalid_argument("supervision: theta values must be positive");
  }
  if (tau_color < 0.0 || tau_color >= 1.0 || tau_flow < 0.0 || tau_flow >= 1.0) {
    throw std::invalid_argument("supervision: tau values must lie in [0, 1)");
  }
  if (kernel_size < 3 || kernel_size % 2 == 0) {
    throw std::invalid_argument("supervision: kernel_size must be odd and >= 3");
  }
  if (dilation < 1) throw std::invalid_argument("supervision: dilation must be >= 1");
}

size_t PairSet::positive_count() const {
  size_t n = 0;
  for (uint8_t y : labels) n += y;
  return n;
}

std::vector<PixelPair> enumerate_pairs(const Box& box, int image_width,
                                       int image_height, int kernel_size,
                                       int dilation) {
  if (box.empty()) throw std::invalid_argument("enumerate_pairs: empty box");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 >= image_width || box.y1 >= image_height) {
    throw std::invalid_argument("enumerate_pairs: box outside the image");
  }
  if (kernel_size < 3 || kernel_size % 2 == 0 || dilation < 1) {
    throw std::invalid_argument("enumerate_pairs: bad kernel or dilation");
  }
  const int radius = (kernel_size - 1) / 2;
  std::vector<PixelPair> pairs;
  pairs.reserve(static_cast<size_t>(box.area()) * kernel_size * kernel_size);
  for (int r = box.y0; r <= box.y1; ++r) {
    for (int c = box.x0; c <= box.x1; ++c) {
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int qr = r + dy * dilation;
          const int qc = c + dx * dilation;
          if (qr < 0 || qr >= image_height || qc < 0 || qc >= image_width) continue;
          pairs.push_back(make_canonical_pair(r, c, qr, qc));
        }
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

namespace {

void check_pair_bounds(int width, int height, const PixelPair& p, const char* what) {
  if (p.r1 < 0 || p.r1 >= height || p.c1 < 0 || p.c1 >= width || p.r2 < 0 ||
      p.r2 >= height || p.c2 < 0 || p.c2 >= width) {
    throw std::out_of_range(std::string(what) + ": pair index out of bounds");
  }
}

}  // namespace

double color_similarity(const LabImage& lab, const PixelPair& pair,
                        double theta_color) {
  check_pair_bounds(lab.width, lab.height, pair, "color_similarity");
  const double* a = lab.at(pair.r1, pair.c1);
  const double* b = lab.at(pair.r2, pair.c2);
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return std::exp(-std::sqrt(d0 * d0 + d1 * d1 + d2 * d2) / theta_color);
}

double flow_similarity(const FlowColorImage& flow_rgb, const PixelPair& pair,
                       double theta_flow) {
  check_pair_bounds(flow_rgb.width, flow_rgb.height, pair, "flow_similarity");
  const double* a = flow_rgb.at(pair.r1, pair.c1);
  const double* b = flow_rgb.at(pair.r2, pair.c2);
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return std::exp(-std::sqrt(d0 * d0 + d1 * d1 + d2 * d2) / theta_flow);
}

double flow_similarity_uv(const FlowField& flow, const PixelPair& pair,
                          double theta_flow) {
  check_pair_bounds(flow.width, flow.height, pair, "flow_similarity_uv");
  const float* a = flow.at(pair.r1, pair.c1);
  const float* b = flow.at(pair.r2, pair.c2);
  const double du = static_cast<double>(a[0]) - b[0];
  const double dv = static_cast<double>(a[1]) - b[1];
  return std::exp(-std::sqrt(du * du + dv * dv) / theta_flow);
}

std::vector<uint8_t> pseudo_labels(std::span<const double> s_color,
                                   std::span<const double> s_flow,
                                   const SupervisionParams& params) {
  if (s_color.size() != s_flow.size()) {
    throw std::invalid_argument("pseudo_labels: similarity arrays differ in length");
  }
  std::vector<uint8_t> labels(s_color.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    labels[i] = s_color[i] >= params.tau_color && s_flow[i] >= params.tau_flow;
  }
  return labels;
}

PairSet build_pair_set(const LabImage& lab, const FlowColorImage& flow_rgb,
                       const FlowField& flow_uv, const Box& box,
                       const SupervisionParams& params) {
  params.validate();
  PairSet set;
  set.pairs = enumerate_pairs(box, lab.width, lab.height, params.kernel_size,
                              params.dilation);
  set.s_color.reserve(set.pairs.size());
  set.s_flow.reserve(set.pairs.size());
  for (const auto& p : set.pairs) {
    set.s_color.push_back(color_similarity(lab, p, params.theta_color));
    set.s_flow.push_back(
        params.flow_space == FlowSimilaritySpace::kRgb
            ? flow_similarity(flow_rgb, p, params.theta_flow)
            : flow_similarity_uv(flow_uv, p, params.theta_flow));
  }
  set.labels = pseudo_labels(set.s_color, set.s_flow, params);
  return set;
}

}  // namespace msw
