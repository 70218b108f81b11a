#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "msw/pairwise.hpp"
#include "msw/synthdata.hpp"

using namespace msw;
namespace fs = std::filesystem;

namespace {

SceneConfig small_config() {
  SceneConfig cfg;
  cfg.width = 48;
  cfg.height = 40;
  cfg.min_instances = 1;
  cfg.max_instances = 2;
  cfg.seed = 11;
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("flow equals the instance translation at every visible pixel") {
  const auto cfg = small_config();
  for (int idx = 0; idx < 8; ++idx) {
    const auto sample = generate_sample(cfg, idx);
    REQUIRE(!sample.instances.empty());
    for (const auto& inst : sample.instances) {
      int64_t pixels = 0;
      for (int r = 0; r < cfg.height; ++r) {
        for (int c = 0; c < cfg.width; ++c) {
          if (!inst.mask[static_cast<size_t>(r) * cfg.width + c]) continue;
          CHECK(sample.flow.at(r, c)[0] == static_cast<float>(inst.velocity_x));
          CHECK(sample.flow.at(r, c)[1] == static_cast<float>(inst.velocity_y));
          ++pixels;
        }
      }
      CHECK(pixels >= 12);
      CHECK(std::max(std::abs(inst.velocity_x), std::abs(inst.velocity_y)) >= cfg.speed_min);
    }
  }
}

TEST_CASE("static scene: zero flow and identical frames") {
  auto cfg = small_config();
  cfg.speed_min = 0;
  cfg.speed_max = 0;
  const auto sample = generate_sample(cfg, 0);
  for (float v : sample.flow.uv) CHECK(v == 0.0f);
  REQUIRE(sample.frame_t.pixels.size() == sample.frame_t1.pixels.size());
  for (size_t i = 0; i < sample.frame_t.pixels.size(); ++i) {
    CHECK(sample.frame_t.pixels[i] == sample.frame_t1.pixels[i]);
  }
}

TEST_CASE("generation is deterministic in (seed, index)") {
  const auto cfg = small_config();
  const auto a = generate_sample(cfg, 3);
  const auto b = generate_sample(cfg, 3);
  CHECK(a.frame_t.pixels == b.frame_t.pixels);
  CHECK(a.frame_t1.pixels == b.frame_t1.pixels);
  CHECK(a.flow.uv == b.flow.uv);
  REQUIRE(a.instances.size() == b.instances.size());
  for (size_t i = 0; i < a.instances.size(); ++i) {
    CHECK(a.instances[i].mask == b.instances[i].mask);
    CHECK(a.instances[i].box == b.instances[i].box);
  }
  const auto c = generate_sample(cfg, 4);
  CHECK(a.frame_t.pixels != c.frame_t.pixels);
}

TEST_CASE("boxes are tight bounds of masks and masks are disjoint") {
  auto cfg = small_config();
  cfg.max_instances = 3;
  cfg.allow_occlusion = true;
  for (int idx = 0; idx < 6; ++idx) {
    const auto sample = generate_sample(cfg, idx);
    std::vector<int> owners(static_cast<size_t>(cfg.width) * cfg.height, 0);
    for (const auto& inst : sample.instances) {
      Box tight{cfg.width, cfg.height, -1, -1};
      for (int r = 0; r < cfg.height; ++r) {
        for (int c = 0; c < cfg.width; ++c) {
          const size_t at = static_cast<size_t>(r) * cfg.width + c;
          if (!inst.mask[at]) continue;
          owners[at] += 1;
          tight.x0 = std::min(tight.x0, c);
          tight.x1 = std::max(tight.x1, c);
          tight.y0 = std::min(tight.y0, r);
          tight.y1 = std::max(tight.y1, r);
        }
      }
      CHECK(tight == inst.box);
    }
    for (int v : owners) CHECK(v <= 1);  // disjoint after occlusion resolution
  }
}

TEST_CASE("warping frame_t by the flow reproduces frame_t1") {
  auto cfg = small_config();
  cfg.pan_x = 1;
  cfg.pan_y = -1;
  cfg.max_instances = 2;
  for (int idx = 0; idx < 5; ++idx) {
    const auto sample = generate_sample(cfg, idx);
    const int W = cfg.width, H = cfg.height;

    // owner of a pixel at t (instances are disjoint), -1 for background
    auto owner_t = [&](int r, int c) {
      for (size_t i = 0; i < sample.instances.size(); ++i) {
        if (sample.instances[i].mask[static_cast<size_t>(r) * W + c]) {
          return static_cast<int>(i);
        }
      }
      return -1;
    };
    // owner at t+1 via masks translated by their velocities
    auto owner_t1 = [&](int r, int c) {
      for (size_t i = sample.instances.size(); i-- > 0;) {
        const auto& inst = sample.instances[i];
        const int sr = r - inst.velocity_y, sc = c - inst.velocity_x;
        if (sr < 0 || sr >= H || sc < 0 || sc >= W) continue;
        if (inst.mask[static_cast<size_t>(sr) * W + sc]) return static_cast<int>(i);
      }
      return -1;
    };

    double abs_err = 0.0;
    int64_t counted = 0;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const float* f = sample.flow.at(r, c);
        const int tr = r + static_cast<int>(f[1]);
        const int tc = c + static_cast<int>(f[0]);
        if (tr < 0 || tr >= H || tc < 0 || tc >= W) continue;
        if (owner_t(r, c) != owner_t1(tr, tc)) continue;  // (dis)occlusion
        const uint8_t* a = sample.frame_t.at(r, c);
        const uint8_t* b = sample.frame_t1.at(tr, tc);
        for (int ch = 0; ch < 3; ++ch) {
          abs_err += std::abs(static_cast<int>(a[ch]) - b[ch]) / 255.0;
        }
        ++counted;
      }
    }
    REQUIRE(counted > 0);
    CHECK(abs_err / (3.0 * counted) < 2.0 / 255.0);
  }
}

TEST_CASE("camouflage: flow-aware rule rejects boundary pairs color passes") {
  auto cfg = small_config();
  cfg.camouflage = true;
  cfg.seed = 21;

  SupervisionParams flow_aware;  // tau_flow = 0.6, theta_flow = 0.5
  SupervisionParams color_only = flow_aware;
  color_only.tau_flow = 0.0;

  int64_t crossing = 0, pos_color = 0, pos_flow = 0;
  for (int idx = 0; idx < 10; ++idx) {
    const auto sample = generate_sample(cfg, idx);
    const auto lab = srgb_to_lab(sample.frame_t);
    const auto frgb = flow_to_rgb(sample.flow);
    for (size_t i = 0; i < sample.instances.size(); ++i) {
      const auto& inst = sample.instances[i];
      const auto pairs = enumerate_pairs(inst.box, cfg.width, cfg.height,
                                         flow_aware.kernel_size, flow_aware.dilation);
      for (const auto& p : pairs) {
        const bool in1 = inst.mask[static_cast<size_t>(p.r1) * cfg.width + p.c1];
        const bool in2 = inst.mask[static_cast<size_t>(p.r2) * cfg.width + p.c2];
        if (in1 == in2) continue;  // only boundary-crossing pairs
        ++crossing;
        const double sc = color_similarity(lab, p, flow_aware.theta_color);
        const double sf = flow_similarity(frgb, p, flow_aware.theta_flow);
        pos_color += (sc >= color_only.tau_color);
        pos_flow += (sc >= flow_aware.tau_color && sf >= flow_aware.tau_flow);
      }
    }
  }
  REQUIRE(crossing > 100);
  // the quantitative premise: color alone wrongly keeps most of these
  CHECK(pos_color > pos_flow);
  CHECK(static_cast<double>(pos_color) / crossing >
        2.0 * static_cast<double>(pos_flow) / crossing);
}

TEST_CASE("scene config validation") {
  SceneConfig cfg;
  cfg.width = 16;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.min_instances = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.speed_max = 50;  // shapes cannot stay in frame
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.shapes.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("unsatisfiable placement reports an error") {
  auto cfg = small_config();
  cfg.min_instances = 40;
  cfg.max_instances = 40;
  cfg.allow_occlusion = false;  // 40 disjoint shapes cannot fit
  CHECK_THROWS_AS(generate_sample(cfg, 0), std::runtime_error);
}

TEST_CASE("generate_split writes the documented layout") {
  auto cfg = small_config();
  cfg.camouflage = true;
  cfg.seed = 31;
  const auto dir = fs::temp_directory_path() / "msw_split_test";
  fs::remove_all(dir);

  const auto summary = generate_split(cfg, 10, dir.string());
  CHECK(summary.images == 10);
  CHECK(summary.instances >= 10);
  CHECK(summary.mean_local_delta_e < 5.0);

  std::ifstream is(dir / "annotations.json");
  REQUIRE(is.good());
  nlohmann::json root;
  is >> root;
  CHECK(root.at("images").size() == 10);
  CHECK(root.at("categories").size() == 3);

  // every bbox equals the tight bounds recomputed from its mask PNG
  for (const auto& ann : root.at("annotations")) {
    const auto mask = read_png((dir / ann.at("mask_file").get<std::string>()).string());
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    int64_t area = 0;
    for (int r = 0; r < mask.height; ++r) {
      for (int c = 0; c < mask.width; ++c) {
        if (mask.at(r, c)[0] < 128) continue;
        x0 = std::min(x0, c);
        x1 = std::max(x1, c);
        y0 = std::min(y0, r);
        y1 = std::max(y1, r);
        ++area;
      }
    }
    const auto& bbox = ann.at("bbox");
    CHECK(bbox[0].get<int>() == x0);
    CHECK(bbox[1].get<int>() == y0);
    CHECK(bbox[2].get<int>() == x1 - x0 + 1);
    CHECK(bbox[3].get<int>() == y1 - y0 + 1);
    CHECK(ann.at("area").get<int64_t>() == area);
  }

  // regeneration is byte-identical
  const auto dir2 = fs::temp_directory_path() / "msw_split_test2";
  fs::remove_all(dir2);
  generate_split(cfg, 10, dir2.string());
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir);
    CHECK(read_file(entry.path()) == read_file(dir2 / rel));
  }

  // loading recovers extents, masks and boxes
  const auto ds = Dataset::load(dir.string());
  CHECK(ds.width == cfg.width);
  CHECK(ds.height == cfg.height);
  REQUIRE(ds.samples.size() == 10);
  for (int i = 0; i < 10; ++i) {
    const auto direct = generate_sample(cfg, i);
    REQUIRE(ds.samples[static_cast<size_t>(i)].instances.size() == direct.instances.size());
    CHECK(ds.samples[static_cast<size_t>(i)].frame_t.pixels == direct.frame_t.pixels);
    for (size_t k = 0; k < direct.instances.size(); ++k) {
      CHECK(ds.samples[static_cast<size_t>(i)].instances[k].mask == direct.instances[k].mask);
      CHECK(ds.samples[static_cast<size_t>(i)].instances[k].box == direct.instances[k].box);
    }
  }

  fs::remove_all(dir);
  fs::remove_all(dir2);
}
