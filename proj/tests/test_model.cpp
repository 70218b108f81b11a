#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "msw/losses.hpp"
#include "msw/model.hpp"
#include "msw/pairwise.hpp"
#include "msw/rng.hpp"

using namespace msw;
using msw::ad::Graph;
using msw::ad::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.widths = {4, 6};
  cfg.mask_branch_channels = 8;
  cfg.c_mask = 4;
  return cfg;
}

Tensor random_image(int h, int w, Rng& rng) {
  std::vector<double> v(3 * static_cast<size_t>(h) * w);
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from_data({3, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("identical inputs give identical stream features (shared backbone)") {
  Rng rng(1);
  auto cfg = tiny_config();
  TwoStreamModel model(cfg, rng);
  Rng rng2(1);
  TwoStreamModel img_only(
      [&] {
        auto c = tiny_config();
        c.motion_for_detection = false;
        return c;
      }(),
      rng2);
  // same init stream -> identical parameters
  REQUIRE(model.parameters().size() == img_only.parameters().size());

  Rng data_rng(2);
  auto x = random_image(16, 16, data_rng);
  Graph g;
  auto fused = model.forward(g, x, x);       // F_det = F_img + F_flow, F_img == F_flow
  auto single = img_only.forward(g, x, x);   // F_det = F_img
  REQUIRE(fused.f_det.shape() == single.f_det.shape());
  for (size_t i = 0; i < fused.f_det.data().size(); ++i) {
    CHECK(fused.f_det.data()[i] == 2.0 * single.f_det.data()[i]);
  }
}

TEST_CASE("max fusion with a zero appearance stream returns the motion stream") {
  Rng rng(3);
  auto cfg = tiny_config();
  cfg.fusion.detection = DetectionFusion::kMax;
  TwoStreamModel model(cfg, rng);
  Rng rng2(3);
  auto cfg2 = tiny_config();
  cfg2.motion_for_detection = false;
  TwoStreamModel ref(cfg2, rng2);

  Rng data_rng(4);
  auto flow_rgb = random_image(16, 16, data_rng);
  auto zeros = Tensor::zeros({3, 16, 16});
  Graph g;
  auto fused = model.forward(g, zeros, flow_rgb);
  auto flow_alone = ref.forward(g, flow_rgb, zeros);  // image stream fed the flow
  for (size_t i = 0; i < fused.f_det.data().size(); ++i) {
    CHECK(fused.f_det.data()[i] == flow_alone.f_det.data()[i]);
  }
}

TEST_CASE("two-stream encoder parameter count equals a single stream's") {
  Rng rng(5);
  TwoStreamModel model(tiny_config(), rng);
  // the backbone appears exactly once in the parameter list
  const auto params = model.parameters();
  const auto backbone = model.backbone_parameters();
  size_t backbone_hits = 0;
  for (const auto& p : params) {
    for (const auto& b : backbone) {
      if (p.same_storage(b)) ++backbone_hits;
    }
  }
  CHECK(backbone_hits == backbone.size());
  // names are unique
  for (size_t i = 0; i < params.size(); ++i) {
    for (size_t j = i + 1; j < params.size(); ++j) {
      CHECK(params[i].name() != params[j].name());
    }
  }
}

TEST_CASE("mask branch output shape and zero response") {
  Rng rng(6);
  auto cfg = tiny_config();
  TwoStreamModel model(cfg, rng);
  Rng data_rng(7);
  auto image = random_image(16, 16, data_rng);
  Graph g;
  auto feats = model.forward(g, image, image);
  const int hg = 16 / model.stride(), wg = 16 / model.stride();
  CHECK(feats.f_mask_img.shape() == msw::ad::Shape{cfg.c_mask, hg, wg});
  CHECK(feats.f_mask_flow.shape() == msw::ad::Shape{cfg.c_mask, hg, wg});
  CHECK(feats.f_mask.shape() == msw::ad::Shape{2 * cfg.c_mask, hg, wg});  // concat

  // zero input with zero-initialized biases stays zero through the branch
  auto zeros = Tensor::zeros({3, 16, 16});
  auto zfeats = model.forward(g, zeros, zeros);
  for (double v : zfeats.f_mask_img.data()) CHECK(v == 0.0);
}

TEST_CASE("mask fusion modes and channel-count adaptation") {
  for (auto fusion : {MaskFusion::kSum, MaskFusion::kMax, MaskFusion::kConcat}) {
    Rng rng(8);
    auto cfg = tiny_config();
    cfg.fusion.mask = fusion;
    TwoStreamModel model(cfg, rng);
    const int expect = fusion == MaskFusion::kConcat ? 2 * cfg.c_mask : cfg.c_mask;
    CHECK(model.mask_head_in_channels() == expect);

    Rng data_rng(9);
    auto image = random_image(16, 16, data_rng);
    Graph g;
    auto feats = model.forward(g, image, image);
    REQUIRE(feats.f_mask.shape()[0] == expect);
    // the dynamic head accepts the adapted channel count
    auto ctrl = Tensor::zeros({model.controller_length()});
    auto m = model.mask_head(g, feats.f_mask, ctrl, 2, 2);
    const int grid = 16 / model.stride();
    CHECK(m.shape() == msw::ad::Shape{1, grid, grid});
  }

  // sum fusion with a zero motion stream leaves the appearance stream as is
  Rng rng(10);
  auto cfg = tiny_config();
  cfg.fusion.mask = MaskFusion::kSum;
  TwoStreamModel model(cfg, rng);
  Rng data_rng(11);
  auto image = random_image(16, 16, data_rng);
  auto zeros = Tensor::zeros({3, 16, 16});
  Graph g;
  auto feats = model.forward(g, image, zeros);
  for (size_t i = 0; i < feats.f_mask.data().size(); ++i) {
    CHECK(feats.f_mask.data()[i] == feats.f_mask_img.data()[i]);
  }
}

TEST_CASE("controller length follows the head architecture") {
  // (in+2)*8+8 + 8*8+8 + 8*1+1
  Rng rng(12);
  auto cfg = tiny_config();
  cfg.c_mask = 8;
  cfg.fusion.mask = MaskFusion::kSum;  // in = 8 -> 169
  TwoStreamModel sum_model(cfg, rng);
  CHECK(sum_model.controller_length() == 169);

  Rng rng2(12);
  cfg.fusion.mask = MaskFusion::kConcat;  // in = 16 -> 233
  TwoStreamModel concat_model(cfg, rng2);
  CHECK(concat_model.controller_length() == 233);
}

TEST_CASE("zero controller gives a flat 0.5 score map") {
  Rng rng(13);
  TwoStreamModel model(tiny_config(), rng);
  Rng data_rng(14);
  auto image = random_image(16, 16, data_rng);
  Graph g;
  auto feats = model.forward(g, image, image);
  auto ctrl = Tensor::zeros({model.controller_length()});
  auto m = model.mask_head(g, feats.f_mask, ctrl, 1, 1);
  for (double v : m.data()) CHECK(v == 0.5);

  auto bad = Tensor::zeros({model.controller_length() + 1});
  CHECK_THROWS_AS(model.mask_head(g, feats.f_mask, bad, 1, 1), std::invalid_argument);
}

TEST_CASE("moving the center translates the coordinate conditioning") {
  Rng rng(15);
  TwoStreamModel model(tiny_config(), rng);
  const int hg = 8, wg = 8;
  auto f_mask = Tensor::zeros({model.mask_head_in_channels(), hg, wg});

  std::vector<double> ctrl_data(static_cast<size_t>(model.controller_length()));
  Rng crng(16);
  for (auto& v : ctrl_data) v = crng.uniform(-1.0, 1.0);
  auto ctrl = Tensor::from_data({model.controller_length()}, ctrl_data);

  Graph g;
  auto m0 = model.mask_head(g, f_mask, ctrl, 2, 3);
  auto m1 = model.mask_head(g, f_mask, ctrl, 4, 4);  // center moved by (2, 1)
  for (int i = 0; i < hg; ++i) {
    for (int j = 0; j < wg; ++j) {
      const int i2 = i + 2, j2 = j + 1;
      if (i2 >= hg || j2 >= wg) continue;
      CHECK(m0.data()[static_cast<size_t>(i) * wg + j] ==
            doctest::Approx(m1.data()[static_cast<size_t>(i2) * wg + j2]).epsilon(1e-12));
    }
  }
}

TEST_CASE("distinct controllers give distinct score maps") {
  Rng rng(17);
  TwoStreamModel model(tiny_config(), rng);
  Rng data_rng(18);
  auto image = random_image(16, 16, data_rng);
  Graph g;
  auto feats = model.forward(g, image, image);

  std::vector<double> c1(static_cast<size_t>(model.controller_length()));
  std::vector<double> c2 = c1;
  Rng crng(19);
  for (auto& v : c1) v = crng.uniform(-1.0, 1.0);
  for (auto& v : c2) v = crng.uniform(-1.0, 1.0);
  auto m1 = model.mask_head(g, feats.f_mask, Tensor::from_data({model.controller_length()}, c1), 2, 2);
  auto m2 = model.mask_head(g, feats.f_mask, Tensor::from_data({model.controller_length()}, c2), 2, 2);
  double diff = 0.0;
  for (size_t i = 0; i < m1.data().size(); ++i) diff += std::abs(m1.data()[i] - m2.data()[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("detect thresholds, decodes and suppresses") {
  Rng rng(20);
  auto cfg = tiny_config();
  TwoStreamModel model(cfg, rng);
  const int hg = 8, wg = 8;

  // all below threshold -> empty
  auto quiet = Tensor::full({1, hg, wg}, -5.0);
  auto ltrb = Tensor::full({4, hg, wg}, 1.0);
  CHECK(model.detect(quiet, ltrb).empty());

  // two neighboring cells decode to the same box; NMS keeps the higher score
  std::vector<double> logits(static_cast<size_t>(hg) * wg, -9.0);
  const auto logit_of = [](double p) { return std::log(p / (1.0 - p)); };
  logits[3 * wg + 3] = logit_of(0.9);
  logits[3 * wg + 4] = logit_of(0.8);
  std::vector<double> offs(4 * static_cast<size_t>(hg) * wg, 0.0);
  const int64_t cells = hg * wg;
  auto set_ltrb = [&](int r, int c, double l, double t, double rr, double bb) {
    const int64_t cell = r * wg + c;
    offs[static_cast<size_t>(cell)] = l;
    offs[static_cast<size_t>(cells + cell)] = t;
    offs[static_cast<size_t>(2 * cells + cell)] = rr;
    offs[static_cast<size_t>(3 * cells + cell)] = bb;
  };
  set_ltrb(3, 3, 1.0, 1.0, 2.0, 2.0);  // box in grid units around (3.5, 3.5)
  set_ltrb(3, 4, 2.0, 1.0, 1.0, 2.0);  // same box from the neighbor cell
  auto obj = Tensor::from_data({1, hg, wg}, logits);
  auto reg = Tensor::from_data({4, hg, wg}, offs);
  const auto dets = model.detect(obj, reg);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == doctest::Approx(0.9));
  CHECK(dets[0].grid_col == 3);
  // decoded box: center (3.5, 3.5)*stride, extents (1+2, 1+2)*stride
  const double s = model.stride();
  CHECK(dets[0].box.x0 == doctest::Approx((3.5 - 1.0) * s));
  CHECK(dets[0].box.x1 == doctest::Approx((3.5 + 2.0) * s));
}

TEST_CASE("checkpoint save/load restores every parameter bit-exactly") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "msw_model_ckpt";
  fs::create_directories(dir);
  const auto path = (dir / "model.mswt").string();

  Rng rng(21);
  TwoStreamModel model(tiny_config(), rng);
  model.save(path);

  Rng rng2(99);  // different init
  TwoStreamModel other(tiny_config(), rng2);
  other.load(path);
  const auto a = model.parameters();
  const auto b = other.parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t k = 0; k < a[i].data().size(); ++k) {
      CHECK(a[i].data()[k] == b[i].data()[k]);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("end-to-end gradient check through detection, mask head and losses") {
  Rng rng(22);
  TwoStreamModel model(tiny_config(), rng);

  Rng data_rng(23);
  auto image = random_image(16, 16, data_rng);
  auto flow_rgb = random_image(16, 16, data_rng);
  const std::vector<Box> gt = {{4, 4, 11, 11}};
  const Box grid_box = box_to_grid(gt[0], model.stride());

  // synthetic supervision at grid resolution
  PairSet pairs;
  const int wg = 16 / model.stride();
  for (int r = grid_box.y0; r <= grid_box.y1; ++r) {
    for (int c = grid_box.x0; c < grid_box.x1; ++c) {
      pairs.pairs.push_back({r, c, r, c + 1});
      pairs.labels.push_back(1);
      pairs.s_color.push_back(1.0);
      pairs.s_flow.push_back(1.0);
    }
  }
  REQUIRE(pairs.size() > 0);
  (void)wg;

  auto pipeline = [&](Graph& g, const std::vector<Tensor>&) {
    auto feats = model.forward(g, image, flow_rgb);
    auto head = model.detection_head(g, feats.f_det);
    auto det = detection_loss(g, head.objectness, head.ltrb, gt, model.stride());
    const int cr = (grid_box.y0 + grid_box.y1) / 2;
    const int cc = (grid_box.x0 + grid_box.x1) / 2;
    auto ctrl = model.controller_at(g, head.controllers, cr, cc);
    auto m = model.mask_head(g, feats.f_mask, ctrl, cr, cc);
    auto proj = projection_loss(g, m, grid_box);
    auto pair = pairwise_loss(g, m, pairs);
    LossWeights weights;
    weights.warmup_steps = 10;
    return total_loss(g, det, proj, pair, 5, weights);
  };

  const double err =
      msw::ad::grad_check(pipeline, model.parameters(), 1e-5, /*max_coords=*/6);
  CHECK(err < 1e-3);
}
