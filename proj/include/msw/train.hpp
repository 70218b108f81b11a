#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "msw/eval.hpp"
#include "msw/losses.hpp"
#include "msw/model.hpp"
#include "msw/pairwise.hpp"
#include "msw/synthdata.hpp"

namespace msw {

struct TrainConfig {
  int64_t iterations = 5000;
  int batch_size = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;
  /// Single x lr_decay_factor step at lr_decay_at * iterations.
  double lr_decay_at = 0.8;
  double lr_decay_factor = 0.1;
  double lambda_proj = 1.0;
  double lambda_pair = 1.0;
  /// Pairwise warmup ramps over this fraction of the run.
  double warmup_fraction = 0.1;
  int64_t checkpoint_interval = 1000;
  int64_t log_interval = 50;
  uint64_t seed = 1;
  /// Replace the flow input by the zero-motion encoding (color-only mode).
  bool neutral_flow = false;

  SupervisionParams supervision;
  ModelConfig model;
  std::string data_dir;
  std::string out_dir;

  void validate() const;
};

/// Raised when the loss turns non-finite; the last good checkpoint has
/// already been written when this escapes.
class TrainAbort : public std::runtime_error {
 public:
  TrainAbort(int64_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

struct TrainResult {
  int64_t steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  std::string final_checkpoint;
};

/// Momentum-SGD training over a generated split. Deterministic given
/// (config, seed): reruns produce bit-identical checkpoints and logs.
/// resume_checkpoint, when nonempty, restores parameters, momentum and the
/// step counter and continues to config.iterations.
TrainResult train(const TrainConfig& config,
                  const std::string& resume_checkpoint = "");

struct AblationRow {
  std::string name;
  EvalResult result;
};

/// Axis names: "components" (Table-2-style w/o rows plus the full model)
/// and "fusion" (detection sum/max plus mask sum/max/concat). Individual
/// variant names are accepted too. Every variant trains with the shared
/// seed and evaluates on eval_dir (the training split when empty).
std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<std::string>& axes,
                                const std::string& eval_dir = "");

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace msw
