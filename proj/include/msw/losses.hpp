#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msw/geometry.hpp"
#include "msw/pairwise.hpp"
#include "msw/tensor.hpp"

namespace msw {

struct LossWeights {
  double lambda_proj = 1.0;
  double lambda_pair = 1.0;
  int64_t warmup_steps = 0;
};

struct LossReport {
  double pairwise = 0.0;
  double projection = 0.0;
  double detection = 0.0;
  double total = 0.0;
  int64_t n_pairs = 0;

  std::string to_json_line(int64_t step) const;
};

/// Probability that both endpoints share one label given foreground
/// probabilities a and b: a*b + (1-a)*(1-b).
double pair_probability(double a, double b);
/// Same probability read off a 1xHxW score map, forward only.
double pair_probability(const ad::Tensor& score_map, const PixelPair& e);
/// Differentiable variant.
ad::Tensor pair_probability(ad::Graph& g, const ad::Tensor& score_map,
                            const PixelPair& e);

/// -(1/N) sum over positive pairs of log P(y_e = 1), N = |E_in|. The
/// probability is clamped to [1e-8, 1] before the log. Throws on an empty
/// pair set.
ad::Tensor pairwise_loss(ad::Graph& g, const ad::Tensor& score_map,
                         const PairSet& pairs);

/// (1 - dice) of the column-max projection against the box's column
/// indicator, plus the same for rows. dice(p, q) = 2 sum(pq) /
/// (sum(p^2) + sum(q^2) + 1e-8).
ad::Tensor projection_loss(ad::Graph& g, const ad::Tensor& score_map,
                           const Box& box);

/// Supervised single-level detection loss: binary cross-entropy on
/// centered-in-box objectness (mean over locations) plus smooth-L1 on the
/// LTRB offsets at positive locations (mean per coordinate, normalized by
/// the positive count). Boxes are image-resolution; offsets live in grid
/// units at the given stride.
ad::Tensor detection_loss(ad::Graph& g, const ad::Tensor& objectness_logits,
                          const ad::Tensor& ltrb_pred,
                          const std::vector<Box>& gt_boxes, int stride);

/// Linear pairwise warmup: 0 at step 0, 1 from warmup_steps on.
double pairwise_warmup(int64_t step, int64_t warmup_steps);

/// detection + lambda_proj * projection + w(step) * lambda_pair * pairwise.
ad::Tensor total_loss(ad::Graph& g, const ad::Tensor& detection,
                      const ad::Tensor& projection, const ad::Tensor& pairwise,
                      int64_t step, const LossWeights& weights);

}  // namespace msw
