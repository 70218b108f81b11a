#include "msw/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace msw {

namespace {

constexpr double kProbEps = 1e-8;
constexpr double kDiceEps = 1e-8;

void check_map(const ad::Tensor& m, const char* what) {
  const auto& s = m.shape();
  if (s.size() != 3 || s[0] != 1) {
    throw std::invalid_argument(std::string(what) + ": score map must be 1xHxW");
  }
}

int64_t flat_index(const ad::Tensor& m, int row, int col) {
  const auto& s = m.shape();
  if (row < 0 || row >= s[1] || col < 0 || col >= s[2]) {
    throw std::out_of_range("score map index out of bounds");
  }
  return static_cast<int64_t>(row) * s[2] + col;
}

}  // namespace

std::string LossReport::to_json_line(int64_t step) const {
  nlohmann::json j;
  j["step"] = step;
  j["detection"] = detection;
  j["projection"] = projection;
  j["pairwise"] = pairwise;
  j["total"] = total;
  j["n_pairs"] = n_pairs;
  return j.dump();
}

double pair_probability(double a, double b) {
  return a * b + (1.0 - a) * (1.0 - b);
}

double pair_probability(const ad::Tensor& score_map, const PixelPair& e) {
  check_map(score_map, "pair_probability");
  const auto data = score_map.data();
  return pair_probability(data[flat_index(score_map, e.r1, e.c1)],
                          data[flat_index(score_map, e.r2, e.c2)]);
}

ad::Tensor pair_probability(ad::Graph& g, const ad::Tensor& score_map,
                            const PixelPair& e) {
  check_map(score_map, "pair_probability");
  auto a = g.gather(score_map, {flat_index(score_map, e.r1, e.c1)});
  auto b = g.gather(score_map, {flat_index(score_map, e.r2, e.c2)});
  return g.add(g.mul(a, b), g.mul(g.affine(a, -1.0, 1.0), g.affine(b, -1.0, 1.0)));
}

ad::Tensor pairwise_loss(ad::Graph& g, const ad::Tensor& score_map,
                         const PairSet& pairs) {
  check_map(score_map, "pairwise_loss");
  if (pairs.size() == 0) throw std::invalid_argument("pairwise_loss: empty pair set");
  const int64_t total = static_cast<int64_t>(pairs.size());
  std::vector<int64_t> first, second;
  first.reserve(pairs.size());
  second.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs.labels[i]) continue;
    first.push_back(flat_index(score_map, pairs.pairs[i].r1, pairs.pairs[i].c1));
    second.push_back(flat_index(score_map, pairs.pairs[i].r2, pairs.pairs[i].c2));
  }
  if (first.empty()) return ad::Tensor::scalar(0.0);
  auto a = g.gather(score_map, std::move(first));
  auto b = g.gather(score_map, std::move(second));
  auto p = g.add(g.mul(a, b), g.mul(g.affine(a, -1.0, 1.0), g.affine(b, -1.0, 1.0)));
  auto log_p = g.log(g.clamp_min(p, kProbEps));
  return g.affine(g.sum(log_p), -1.0 / static_cast<double>(total), 0.0);
}

ad::Tensor projection_loss(ad::Graph& g, const ad::Tensor& score_map,
                           const Box& box) {
  check_map(score_map, "projection_loss");
  const int H = score_map.shape()[1];
  const int W = score_map.shape()[2];
  if (box.empty()) throw std::invalid_argument("projection_loss: degenerate box");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 >= W || box.y1 >= H) {
    throw std::invalid_argument("projection_loss: box outside the map");
  }

  auto axis_term = [&](int axis) {
    const int len = axis == 0 ? W : H;
    const int lo = axis == 0 ? box.x0 : box.y0;
    const int hi = axis == 0 ? box.x1 : box.y1;
    std::vector<double> indicator(static_cast<size_t>(len), 0.0);
    double q_sq = 0.0;
    for (int i = lo; i <= hi; ++i) {
      indicator[static_cast<size_t>(i)] = 1.0;
      q_sq += 1.0;
    }
    auto proj = g.max_project(score_map, axis);
    auto target = ad::Tensor::from_data({len}, std::move(indicator));
    auto num = g.affine(g.sum(g.mul(proj, target)), 2.0, 0.0);
    auto denom = g.affine(g.sum(g.mul(proj, proj)), 1.0, q_sq + kDiceEps);
    auto dice = g.div(num, denom);
    return g.affine(dice, -1.0, 1.0);  // 1 - dice
  };

  return g.add(axis_term(0), axis_term(1));
}

ad::Tensor detection_loss(ad::Graph& g, const ad::Tensor& objectness_logits,
                          const ad::Tensor& ltrb_pred,
                          const std::vector<Box>& gt_boxes, int stride) {
  check_map(objectness_logits, "detection_loss");
  const int Hg = objectness_logits.shape()[1];
  const int Wg = objectness_logits.shape()[2];
  if (ltrb_pred.shape() != ad::Shape{4, Hg, Wg}) {
    throw std::invalid_argument("detection_loss: ltrb map must be 4xHgxWg");
  }

  const int64_t cells = static_cast<int64_t>(Hg) * Wg;
  std::vector<double> target(static_cast<size_t>(cells), 0.0);
  std::vector<int64_t> pos_indices;
  std::vector<double> pos_targets;
  for (int i = 0; i < Hg; ++i) {
    for (int j = 0; j < Wg; ++j) {
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      const Box* best = nullptr;
      for (const auto& b : gt_boxes) {
        if (b.empty()) continue;
        if (cx >= b.x0 && cx < b.x1 + 1.0 && cy >= b.y0 && cy < b.y1 + 1.0) {
          if (!best || b.area() < best->area()) best = &b;
        }
      }
      if (!best) continue;
      const int64_t cell = static_cast<int64_t>(i) * Wg + j;
      target[static_cast<size_t>(cell)] = 1.0;
      const double l = (cx - best->x0) / stride;
      const double t = (cy - best->y0) / stride;
      const double r = (best->x1 + 1.0 - cx) / stride;
      const double b2 = (best->y1 + 1.0 - cy) / stride;
      for (int ch = 0; ch < 4; ++ch) pos_indices.push_back(ch * cells + cell);
      pos_targets.insert(pos_targets.end(), {l, t, r, b2});
    }
  }

  // objectness BCE, mean over locations
  auto t_pos = ad::Tensor::from_data({1, Hg, Wg}, target);
  std::vector<double> inv(target.size());
  for (size_t i = 0; i < target.size(); ++i) inv[i] = 1.0 - target[i];
  auto t_neg = ad::Tensor::from_data({1, Hg, Wg}, std::move(inv));
  auto prob = g.sigmoid(objectness_logits);
  auto log_p = g.log(g.clamp_min(prob, kProbEps));
  auto log_q = g.log(g.clamp_min(g.affine(prob, -1.0, 1.0), kProbEps));
  auto bce_sum = g.neg(g.sum(g.add(g.mul(t_pos, log_p), g.mul(t_neg, log_q))));
  auto loss = g.affine(bce_sum, 1.0 / static_cast<double>(cells), 0.0);

  if (!pos_indices.empty()) {
    const double norm = 1.0 / (static_cast<double>(pos_indices.size()));
    const int n_coords = static_cast<int>(pos_targets.size());
    auto pred = g.gather(ltrb_pred, std::move(pos_indices));
    auto tgt = ad::Tensor::from_data({n_coords}, std::move(pos_targets));
    auto reg = g.affine(g.sum(g.smooth_l1(g.sub(pred, tgt))), norm, 0.0);
    loss = g.add(loss, reg);
  }
  return loss;
}

double pairwise_warmup(int64_t step, int64_t warmup_steps) {
  if (warmup_steps <= 0) return 1.0;
  if (step >= warmup_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(warmup_steps);
}

ad::Tensor total_loss(ad::Graph& g, const ad::Tensor& detection,
                      const ad::Tensor& projection, const ad::Tensor& pairwise,
                      int64_t step, const LossWeights& weights) {
  if (step < 0) throw std::invalid_argument("total_loss: negative step");
  const double w = pairwise_warmup(step, weights.warmup_steps);
  auto weighted = g.add(g.affine(projection, weights.lambda_proj, 0.0),
                        g.affine(pairwise, w * weights.lambda_pair, 0.0));
  return g.add(detection, weighted);
}

}  // namespace msw
