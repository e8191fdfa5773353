#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salcar/adam.hpp"
#include "salcar/config.hpp"
#include "salcar/dataset.hpp"
#include "salcar/network.hpp"

namespace salcar {

/// One image's contribution to a training step.
struct TrainItem {
  std::span<const PatchQuad> quads;
  double score = 0.0;
  const PriorMap* saliency = nullptr;  // full-image map the quads were cut from
};

struct StepLosses {
  double mae = 0.0;
  double rank = 0.0;
  double sal = 0.0;
  double total = 0.0;
  std::vector<double> predictions;
};

// Forward every image, assemble the weighted loss, backpropagate and take one
// Adam step. Throws NumericError naming the component if any loss is not finite.
StepLosses train_step(Network<float>& net, AdamState<float>& adam, std::span<const TrainItem> items,
                      const LossWeights& weights);

// Mean |S - s| over the records, each scored on its exhaustive tiling.
double validate(Network<float>& net, std::span<const ImageRecord> records);

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::filesystem::path best_checkpoint;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean L_tot over the epoch's steps
  double val_mae = 0.0;
  bool improved = false;
};

struct FitOptions {
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> resume;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct FitResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
  TrainState state;
};

// Trains on `train`, selects on `val` (falls back to `train` when empty) and
// writes train_log.csv, best.ckpt and last.ckpt under out_dir.
FitResult fit(const Config& cfg, std::span<const ImageRecord> train, std::span<const ImageRecord> val,
              const FitOptions& options);

}  // namespace salcar
