#pragma once

#include <string>

#include "msw/model.hpp"
#include "msw/pairwise.hpp"
#include "msw/synthdata.hpp"
#include "msw/train.hpp"

namespace msw {

/// Everything the CLI reads from one JSON config file. Every key has a
/// default; unknown keys are rejected with a diagnostic naming the key.
struct AppConfig {
  uint64_t seed = 1;
  SceneConfig scene;
  SupervisionParams supervision;
  ModelConfig model;
  /// data_dir/out_dir stay empty here; the CLI fills them from flags.
  TrainConfig train;
  /// Feed the neutral (zero-motion) encoding instead of the real flow.
  bool neutral_flow = false;

  /// Assembled training config with the shared sections filled in.
  TrainConfig train_config(const std::string& data_dir,
                           const std::string& out_dir) const;
};

AppConfig parse_config_text(const std::string& text);
AppConfig load_config(const std::string& path);
/// The full documented key set with default values, as a JSON string.
std::string default_config_json();

}  // namespace msw
