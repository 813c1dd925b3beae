#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sakit/checkpoint.hpp"
#include "sakit/data.hpp"
#include "sakit/graph.hpp"
#include "sakit/network_spec.hpp"

namespace sakit::train {

struct TrainConfig {
  int batch_size = 64;
  int epochs = 300;
  double learning_rate = 0.1;
  double decay_factor = 10.0;  // lr is divided by this at each milestone
  std::vector<int> milestones{150, 225};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decay_bn = true;
  std::uint64_t seed = 0;
  data::AugmentFlags augment;
  bool deterministic = false;  // logs 0 seconds so logs compare bitwise

  void validate() const;
  // Learning rate in effect during 0-based epoch `epoch`.
  double lr_at(int epoch) const;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double train_top1 = 0;  // accuracies in [0, 1]
  double val_top1 = 0;
  double val_top5 = 0;
  double seconds = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& log);

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;  // highest val top-1, earliest on ties
  std::vector<EpochMetrics> log;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Node roles found in a classification spec: one image input, one labels
// node, one xent loss; logits feed the loss.
struct Heads {
  std::string image, labels, loss, logits;
};
Heads find_heads(const NetworkSpec& spec);

using EpochHook = std::function<void(const EpochMetrics&)>;

// Trains from a fresh initialization (seeded by config.seed). When `out_dir`
// is not empty, writes metrics.csv, final.ckpt and best.ckpt there. The
// checkpoints carry the normalization stats as `_norm.mean` / `_norm.std`.
// Throws TrainingError on a non-finite loss.
TrainResult train(const NetworkSpec& spec, const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& config, const std::filesystem::path& out_dir = {}, const EpochHook& hook = {});

struct EvalResult {
  double top1_error = 1;
  double top5_error = 1;  // equals top1_error when classes < 5
  int samples = 0;
};

struct EvalOptions {
  int batch_size = 100;
  int center_crop = 0;  // crop to this side before the forward pass when > 0
};

// Inference-mode evaluation. The dataset's own stats are used for
// normalization unless the checkpoint carries `_norm.*` tensors.
EvalResult evaluate(Graph<float>& graph, const data::Dataset& ds, const EvalOptions& options = {});
EvalResult evaluate(const Checkpoint& ckpt, const data::Dataset& ds, const EvalOptions& options = {});

void attach_norm(Checkpoint& ckpt, const data::Dataset& ds);
void read_norm(const Checkpoint& ckpt, std::vector<float>& mean, std::vector<float>& std);

}  // namespace sakit::train
