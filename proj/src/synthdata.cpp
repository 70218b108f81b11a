#include "msw/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "msw/rng.hpp"

namespace fs = std::filesystem;

namespace msw {

namespace {

constexpr int kSupersample = 4;
constexpr int kMaxAttempts = 100;
constexpr int kMinVisiblePixels = 12;

struct ShapeInstance {
  ShapeKind kind = ShapeKind::kRectangle;
  // integer anchor plus fractional offset; integer translation then shifts
  // the rendered coverage pattern bit-exactly
  int anchor_x = 0;
  int anchor_y = 0;
  double frac_x = 0.0;
  double frac_y = 0.0;
  double half_w = 0.0;
  double half_h = 0.0;
  uint8_t fill[3] = {0, 0, 0};
  int vx = 0;
  int vy = 0;

  bool contains(double dx, double dy) const {
    switch (kind) {
      case ShapeKind::kRectangle:
        return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
      case ShapeKind::kEllipse: {
        const double nx = dx / half_w, ny = dy / half_h;
        return nx * nx + ny * ny <= 1.0;
      }
      case ShapeKind::kTriangle: {
        // isosceles, apex up: (0,-hh), (-hw,+hh), (+hw,+hh)
        if (dy < -half_h || dy > half_h) return false;
        const double span = half_w * (dy + half_h) / (2.0 * half_h);
        return std::abs(dx) <= span;
      }
    }
    return false;
  }

  /// Coverage of the unit pixel whose top-left corner sits at
  /// (col - anchor_x - offset_x, row - anchor_y - offset_y) relative to the
  /// shape center, via a fixed subsample grid.
  double coverage(int row, int col, int offset_x, int offset_y) const {
    const int bx = col - anchor_x - offset_x;
    const int by = row - anchor_y - offset_y;
    const double reach_x = half_w + 1.5, reach_y = half_h + 1.5;
    if (bx < -reach_x || bx > reach_x || by < -reach_y || by > reach_y) return 0.0;
    int hits = 0;
    for (int sy = 0; sy < kSupersample; ++sy) {
      const double dy = by + (sy + 0.5) / kSupersample - frac_y;
      for (int sx = 0; sx < kSupersample; ++sx) {
        const double dx = bx + (sx + 0.5) / kSupersample - frac_x;
        if (contains(dx, dy)) ++hits;
      }
    }
    return hits / static_cast<double>(kSupersample * kSupersample);
  }
};

struct Scene {
  std::vector<uint8_t> texture;  // extended background canvas, RGB
  int tex_w = 0, tex_h = 0;
  int origin_t_x = 0, origin_t_y = 0;    // frame_t window into the texture
  int origin_t1_x = 0, origin_t1_y = 0;  // frame_t+1 window
  std::vector<ShapeInstance> shapes;
};

int shape_category(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kRectangle: return 1;
    case ShapeKind::kEllipse: return 2;
    case ShapeKind::kTriangle: return 3;
  }
  return 0;
}

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

ImageU8 render_frame(const SceneConfig& cfg, const Scene& scene, bool second) {
  ImageU8 img;
  img.width = cfg.width;
  img.height = cfg.height;
  img.pixels.resize(3 * static_cast<size_t>(cfg.width) * cfg.height);
  const int ox = second ? scene.origin_t1_x : scene.origin_t_x;
  const int oy = second ? scene.origin_t1_y : scene.origin_t_y;
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      const uint8_t* tex =
          &scene.texture[3 * (static_cast<size_t>(r + oy) * scene.tex_w + (c + ox))];
      double col[3] = {tex[0] / 255.0, tex[1] / 255.0, tex[2] / 255.0};
      for (const auto& s : scene.shapes) {
        const double cov = s.coverage(r, c, second ? s.vx : 0, second ? s.vy : 0);
        if (cov == 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) {
          col[ch] = cov * (s.fill[ch] / 255.0) + (1.0 - cov) * col[ch];
        }
      }
      uint8_t* px = img.at(r, c);
      for (int ch = 0; ch < 3; ++ch) px[ch] = clamp_u8(std::round(col[ch] * 255.0));
    }
  }
  return img;
}

}  // namespace

void SceneConfig::validate() const {
  if (width < 32 || height < 32) {
    throw std::invalid_argument("scene: extents must be at least 32");
  }
  if (min_instances < 1 || max_instances < min_instances) {
    throw std::invalid_argument("scene: bad instance count range");
  }
  if (shapes.empty()) throw std::invalid_argument("scene: empty shape set");
  if (speed_min < 0 || speed_max < speed_min) {
    throw std::invalid_argument("scene: bad speed range");
  }
  if (size_min_frac <= 0.0 || size_max_frac < size_min_frac || size_max_frac > 0.45) {
    throw std::invalid_argument("scene: bad size fraction range");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("scene: negative noise sigma");
  const int min_extent = std::min(width, height);
  // shapes must be able to stay in frame after one step
  if (2.0 * size_max_frac * min_extent + 2.0 * (speed_max + std::max(std::abs(pan_x), std::abs(pan_y))) + 4 >= min_extent) {
    throw std::invalid_argument("scene: speeds leave no room to keep shapes in frame");
  }
}

SceneSample generate_sample(const SceneConfig& config, int index) {
  config.validate();
  Rng rng = Rng::for_index(config.seed, static_cast<uint64_t>(index));

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Scene scene;
    // background base color; camouflage keeps it mid-range so the fill
    // perturbation fits inside the gamut
    uint8_t base[3];
    for (auto& b : base) {
      b = static_cast<uint8_t>(config.camouflage ? rng.uniform_int(70, 185)
                                                 : rng.uniform_int(0, 255));
    }
    scene.tex_w = config.width + std::abs(config.pan_x);
    scene.tex_h = config.height + std::abs(config.pan_y);
    scene.origin_t_x = std::max(config.pan_x, 0);
    scene.origin_t_y = std::max(config.pan_y, 0);
    scene.origin_t1_x = std::max(-config.pan_x, 0);
    scene.origin_t1_y = std::max(-config.pan_y, 0);
    scene.texture.resize(3 * static_cast<size_t>(scene.tex_w) * scene.tex_h);
    for (size_t i = 0; i < scene.texture.size(); ++i) {
      double v = base[i % 3];
      if (config.background == BackgroundMode::kTexturedNoise) {
        v += rng.normal(0.0, config.noise_sigma * 255.0);
      }
      scene.texture[i] = clamp_u8(std::round(v));
    }
    const auto base_lab = srgb_to_lab(base[0], base[1], base[2]);

    const int count = static_cast<int>(
        rng.uniform_int(config.min_instances, config.max_instances));
    const double min_extent = std::min(config.width, config.height);
    bool scene_ok = true;
    for (int k = 0; k < count && scene_ok; ++k) {
      bool placed = false;
      for (int tries = 0; tries < kMaxAttempts; ++tries) {
        ShapeInstance s;
        s.kind = config.shapes[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(config.shapes.size()) - 1))];
        s.half_w = rng.uniform(config.size_min_frac, config.size_max_frac) * min_extent;
        s.half_h = rng.uniform(config.size_min_frac, config.size_max_frac) * min_extent;
        s.frac_x = rng.uniform();
        s.frac_y = rng.uniform();

        // integer velocity; while motion is possible the instance never
        // moves with the background
        do {
          s.vx = static_cast<int>(rng.uniform_int(-config.speed_max, config.speed_max));
          s.vy = static_cast<int>(rng.uniform_int(-config.speed_max, config.speed_max));
        } while (std::max(std::abs(s.vx), std::abs(s.vy)) < config.speed_min ||
                 (config.speed_max > 0 && s.vx == config.pan_x && s.vy == config.pan_y));

        // keep the shape fully inside the frame at t and t+1
        const int mx = static_cast<int>(std::ceil(s.half_w)) + 2;
        const int my = static_cast<int>(std::ceil(s.half_h)) + 2;
        const int x_lo = mx + std::max(0, -s.vx);
        const int x_hi = config.width - 1 - mx - std::max(0, s.vx);
        const int y_lo = my + std::max(0, -s.vy);
        const int y_hi = config.height - 1 - my - std::max(0, s.vy);
        if (x_lo > x_hi || y_lo > y_hi) continue;
        s.anchor_x = static_cast<int>(rng.uniform_int(x_lo, x_hi));
        s.anchor_y = static_cast<int>(rng.uniform_int(y_lo, y_hi));

        if (!config.allow_occlusion) {
          bool overlaps = false;
          for (const auto& other : scene.shapes) {
            const double gap_x = std::abs((s.anchor_x + s.frac_x) - (other.anchor_x + other.frac_x));
            const double gap_y = std::abs((s.anchor_y + s.frac_y) - (other.anchor_y + other.frac_y));
            if (gap_x < s.half_w + other.half_w + std::abs(s.vx) + std::abs(other.vx) + 2 &&
                gap_y < s.half_h + other.half_h + std::abs(s.vy) + std::abs(other.vy) + 2) {
              overlaps = true;
              break;
            }
          }
          if (overlaps) continue;
        }

        // fill color: near the background in Lab for camouflage scenes,
        // clearly separated otherwise
        bool colored = false;
        for (int ct = 0; ct < kMaxAttempts; ++ct) {
          if (config.camouflage) {
            for (int ch = 0; ch < 3; ++ch) {
              s.fill[ch] = clamp_u8(base[ch] + static_cast<double>(rng.uniform_int(-6, 6)));
            }
            const double de = lab_delta_e(srgb_to_lab(s.fill[0], s.fill[1], s.fill[2]), base_lab);
            if (de >= 0.75 && de <= 3.0) {
              colored = true;
              break;
            }
          } else {
            for (int ch = 0; ch < 3; ++ch) {
              s.fill[ch] = static_cast<uint8_t>(rng.uniform_int(0, 255));
            }
            if (lab_delta_e(srgb_to_lab(s.fill[0], s.fill[1], s.fill[2]), base_lab) >= 25.0) {
              colored = true;
              break;
            }
          }
        }
        if (!colored) continue;
        scene.shapes.push_back(s);
        placed = true;
        break;
      }
      if (!placed) scene_ok = false;
    }
    if (!scene_ok) continue;

    // render and annotate
    SceneSample sample;
    sample.frame_t = render_frame(config, scene, false);
    sample.frame_t1 = render_frame(config, scene, true);
    sample.flow = FlowField::zero(config.width, config.height);

    const size_t n = scene.shapes.size();
    std::vector<std::vector<double>> cov(n);
    for (size_t i = 0; i < n; ++i) {
      cov[i].resize(static_cast<size_t>(config.width) * config.height);
      for (int r = 0; r < config.height; ++r) {
        for (int c = 0; c < config.width; ++c) {
          cov[i][static_cast<size_t>(r) * config.width + c] =
              scene.shapes[i].coverage(r, c, 0, 0);
        }
      }
    }

    sample.instances.resize(n);
    bool visible_ok = true;
    for (size_t i = 0; i < n; ++i) {
      auto& inst = sample.instances[i];
      inst.category_id = shape_category(scene.shapes[i].kind);
      inst.velocity_x = scene.shapes[i].vx;
      inst.velocity_y = scene.shapes[i].vy;
      inst.mask.assign(static_cast<size_t>(config.width) * config.height, 0);
      int64_t own_area = 0, visible_area = 0;
      Box box;
      box.x0 = config.width;
      box.y0 = config.height;
      box.x1 = -1;
      box.y1 = -1;
      for (int r = 0; r < config.height; ++r) {
        for (int c = 0; c < config.width; ++c) {
          const size_t at = static_cast<size_t>(r) * config.width + c;
          if (cov[i][at] < 0.5) continue;
          ++own_area;
          bool occluded = false;
          for (size_t j = i + 1; j < n; ++j) {
            if (cov[j][at] >= 0.5) {
              occluded = true;
              break;
            }
          }
          if (occluded) continue;
          inst.mask[at] = 1;
          ++visible_area;
          box.x0 = std::min(box.x0, c);
          box.x1 = std::max(box.x1, c);
          box.y0 = std::min(box.y0, r);
          box.y1 = std::max(box.y1, r);
        }
      }
      inst.box = box;
      if (visible_area < kMinVisiblePixels ||
          (own_area > 0 && visible_area * 4 < own_area)) {
        visible_ok = false;
        break;
      }
    }
    if (!visible_ok) continue;

    // exact flow: front-most instance velocity, background pan elsewhere
    for (int r = 0; r < config.height; ++r) {
      for (int c = 0; c < config.width; ++c) {
        const size_t at = static_cast<size_t>(r) * config.width + c;
        float u = static_cast<float>(config.pan_x);
        float v = static_cast<float>(config.pan_y);
        for (size_t i = n; i-- > 0;) {
          if (cov[i][at] >= 0.5) {
            u = static_cast<float>(scene.shapes[i].vx);
            v = static_cast<float>(scene.shapes[i].vy);
            break;
          }
        }
        sample.flow.uv[2 * at] = u;
        sample.flow.uv[2 * at + 1] = v;
      }
    }

    if (config.camouflage) {
      bool camo_ok = true;
      for (size_t i = 0; i < n; ++i) {
        if (local_background_delta_e(sample, i) >= 5.0) {
          camo_ok = false;
          break;
        }
      }
      if (!camo_ok) continue;
    }
    return sample;
  }
  throw std::runtime_error("generate_sample: constraints unsatisfiable after 100 attempts");
}

double local_background_delta_e(const SceneSample& sample, size_t instance) {
  if (instance >= sample.instances.size()) {
    throw std::out_of_range("local_background_delta_e: no such instance");
  }
  const auto& inst = sample.instances[instance];
  const int W = sample.frame_t.width, H = sample.frame_t.height;

  // fill estimate: mean color over the visible mask
  double fill[3] = {0, 0, 0};
  int64_t area = 0;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (!inst.mask[static_cast<size_t>(r) * W + c]) continue;
      const uint8_t* px = sample.frame_t.at(r, c);
      for (int ch = 0; ch < 3; ++ch) fill[ch] += px[ch];
      ++area;
    }
  }
  if (area == 0) return 0.0;
  const auto fill_lab = srgb_to_lab(clamp_u8(std::round(fill[0] / area)),
                                    clamp_u8(std::round(fill[1] / area)),
                                    clamp_u8(std::round(fill[2] / area)));

  // mean background color in a ring around the box, every instance excluded
  const int pad = 4;
  const Box ring{std::max(0, inst.box.x0 - pad), std::max(0, inst.box.y0 - pad),
                 std::min(W - 1, inst.box.x1 + pad), std::min(H - 1, inst.box.y1 + pad)};
  double bg[3] = {0, 0, 0};
  int64_t count = 0;
  for (int r = ring.y0; r <= ring.y1; ++r) {
    for (int c = ring.x0; c <= ring.x1; ++c) {
      const size_t at = static_cast<size_t>(r) * W + c;
      bool foreground = false;
      for (const auto& other : sample.instances) {
        if (other.mask[at]) {
          foreground = true;
          break;
        }
      }
      if (foreground) continue;
      const uint8_t* px = sample.frame_t.at(r, c);
      for (int ch = 0; ch < 3; ++ch) bg[ch] += px[ch];
      ++count;
    }
  }
  if (count == 0) return 0.0;
  const auto bg_lab = srgb_to_lab(clamp_u8(std::round(bg[0] / count)),
                                  clamp_u8(std::round(bg[1] / count)),
                                  clamp_u8(std::round(bg[2] / count)));
  return lab_delta_e(bg_lab, fill_lab);
}

namespace {

std::string index_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", idx);
  return buf;
}

}  // namespace

SplitSummary generate_split(const SceneConfig& config, int n,
                            const std::string& out_dir) {
  if (n <= 0) throw std::invalid_argument("generate_split: n must be positive");
  fs::create_directories(fs::path(out_dir) / "frames");
  fs::create_directories(fs::path(out_dir) / "flow");
  fs::create_directories(fs::path(out_dir) / "masks");

  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  SplitSummary summary;
  double delta_e_acc = 0.0;
  int ann_id = 1;
  for (int i = 0; i < n; ++i) {
    const auto sample = generate_sample(config, i);
    const std::string stem = index_name(i);
    write_png(out_dir + "/frames/" + stem + "_t.png", sample.frame_t);
    write_png(out_dir + "/frames/" + stem + "_t1.png", sample.frame_t1);
    write_flo(out_dir + "/flow/" + stem + ".flo", sample.flow);

    images.push_back({{"id", i},
                      {"file_name", "frames/" + stem + "_t.png"},
                      {"file_name_t1", "frames/" + stem + "_t1.png"},
                      {"flow_file", "flow/" + stem + ".flo"},
                      {"width", config.width},
                      {"height", config.height}});

    for (size_t k = 0; k < sample.instances.size(); ++k) {
      const auto& inst = sample.instances[k];
      char inst_buf[16];
      std::snprintf(inst_buf, sizeof(inst_buf), "%03zu", k);
      const std::string mask_file = "masks/" + stem + "_" + inst_buf + ".png";
      std::vector<uint8_t> mask_png(inst.mask.size());
      int64_t area = 0;
      for (size_t p = 0; p < inst.mask.size(); ++p) {
        mask_png[p] = inst.mask[p] ? 255 : 0;
        area += inst.mask[p];
      }
      write_png_gray(out_dir + "/" + mask_file, config.width, config.height, mask_png);
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i},
                             {"category_id", inst.category_id},
                             {"bbox", {inst.box.x0, inst.box.y0, inst.box.width(),
                                       inst.box.height()}},
                             {"area", area},
                             {"mask_file", mask_file},
                             {"velocity", {inst.velocity_x, inst.velocity_y}}});
      delta_e_acc += local_background_delta_e(sample, k);
      ++summary.instances;
    }
    ++summary.images;
  }

  nlohmann::json root;
  root["images"] = images;
  root["annotations"] = annotations;
  root["categories"] = {{{"id", 1}, {"name", "rectangle"}},
                        {{"id", 2}, {"name", "ellipse"}},
                        {{"id", 3}, {"name", "triangle"}}};
  std::ofstream os(fs::path(out_dir) / "annotations.json");
  if (!os) throw std::runtime_error("cannot write annotations.json in " + out_dir);
  os << root.dump(2) << "\n";

  summary.mean_local_delta_e =
      summary.instances > 0 ? delta_e_acc / summary.instances : 0.0;
  return summary;
}

Dataset Dataset::load(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "annotations.json");
  if (!is) throw std::runtime_error("cannot open annotations.json in " + dir);
  nlohmann::json root;
  is >> root;

  Dataset ds;
  for (const auto& img : root.at("images")) {
    Sample sample;
    sample.id = img.at("id").get<int>();
    sample.frame_t = read_png(dir + "/" + img.at("file_name").get<std::string>());
    sample.flow = read_flo(dir + "/" + img.at("flow_file").get<std::string>());
    ds.width = img.at("width").get<int>();
    ds.height = img.at("height").get<int>();
    ds.samples.push_back(std::move(sample));
  }
  for (const auto& ann : root.at("annotations")) {
    const int image_id = ann.at("image_id").get<int>();
    auto it = std::find_if(ds.samples.begin(), ds.samples.end(),
                           [&](const Sample& s) { return s.id == image_id; });
    if (it == ds.samples.end()) {
      throw std::runtime_error("annotation references unknown image id");
    }
    InstanceAnnotation inst;
    const auto& bbox = ann.at("bbox");
    inst.box = Box{bbox[0].get<int>(), bbox[1].get<int>(),
                   bbox[0].get<int>() + bbox[2].get<int>() - 1,
                   bbox[1].get<int>() + bbox[3].get<int>() - 1};
    inst.category_id = ann.at("category_id").get<int>();
    if (ann.contains("velocity")) {
      inst.velocity_x = ann["velocity"][0].get<int>();
      inst.velocity_y = ann["velocity"][1].get<int>();
    }
    const auto mask_img = read_png(dir + "/" + ann.at("mask_file").get<std::string>());
    inst.mask.resize(static_cast<size_t>(mask_img.width) * mask_img.height);
    for (size_t p = 0; p < inst.mask.size(); ++p) {
      inst.mask[p] = mask_img.pixels[3 * p] >= 128 ? 1 : 0;
    }
    it->instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace msw
