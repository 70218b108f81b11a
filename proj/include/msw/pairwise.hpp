#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msw/geometry.hpp"
#include "msw/imaging.hpp"

namespace msw {

/// Undirected local pixel pair in canonical order: the lexicographically
/// smaller (row, col) endpoint comes first.
struct PixelPair {
  int r1 = 0;
  int c1 = 0;
  int r2 = 0;
  int c2 = 0;

  bool operator==(const PixelPair&) const = default;
  auto operator<=>(const PixelPair&) const = default;
};

PixelPair make_canonical_pair(int r1, int c1, int r2, int c2);

enum class FlowSimilaritySpace { kRgb, kUv };

struct SupervisionParams {
  double theta_color = 2.0;
  double theta_flow = 0.5;
  double tau_color = 0.3;
  double tau_flow = 0.6;
  int kernel_size = 3;
  int dilation = 2;
  FlowSimilaritySpace flow_space = FlowSimilaritySpace::kRgb;

  /// Throws std::invalid_argument when out of range. tau_flow = 0 is
  /// allowed: it disables the flow test and recovers color-only labels.
  void validate() const;
};

/// Pair set over one instance box: pairs, pseudo labels and the two
/// similarities, all index-aligned.
struct PairSet {
  std::vector<PixelPair> pairs;
  std::vector<uint8_t> labels;
  std::vector<double> s_color;
  std::vector<double> s_flow;

  size_t size() const { return pairs.size(); }
  size_t positive_count() const;
};

/// All pairs (p, q) with p inside the box and q in the kernel_size x
/// kernel_size neighborhood of p at the given dilation, center excluded,
/// clipped to the image, deduplicated, sorted canonically.
std::vector<PixelPair> enumerate_pairs(const Box& box, int image_width,
                                       int image_height, int kernel_size,
                                       int dilation);

double color_similarity(const LabImage& lab, const PixelPair& pair,
                        double theta_color);
double flow_similarity(const FlowColorImage& flow_rgb, const PixelPair& pair,
                       double theta_flow);
double flow_similarity_uv(const FlowField& flow, const PixelPair& pair,
                          double theta_flow);

/// y_e = 1 iff s_color >= tau_color and s_flow >= tau_flow (inclusive).
std::vector<uint8_t> pseudo_labels(std::span<const double> s_color,
                                   std::span<const double> s_flow,
                                   const SupervisionParams& params);

/// Enumerate pairs for the box and attach similarities and labels. The Lab
/// image and flow encoding must already live on the score-map grid.
PairSet build_pair_set(const LabImage& lab, const FlowColorImage& flow_rgb,
                       const FlowField& flow_uv, const Box& box,
                       const SupervisionParams& params);

}  // namespace msw
