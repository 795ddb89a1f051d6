#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crs/data_io.hpp"
#include "crs/nn.hpp"

namespace crs {

/// Training recipe: SGD with momentum, linear per-step warmup, then cosine
/// decay down to final_lr_fraction of the base learning rate.
struct TrainConfig {
  int epochs = 20;
  int warmup_epochs = 2;
  double base_lr = 0.01;
  double final_lr_fraction = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 128;
  uint64_t seed = 0;
  bool augment = true;

  void validate() const {
    if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw ValueError("train config: warmup_epochs must satisfy 0 <= warmup < epochs");
    if (base_lr <= 0.0) throw ValueError("train config: base_lr must be > 0");
    if (final_lr_fraction <= 0.0 || final_lr_fraction > 1.0)
      throw ValueError("train config: final_lr_fraction must be in (0,1]");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ValueError("train config: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ValueError("train config: weight_decay must be >= 0");
    if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
  }
};

struct RunMetrics {
  std::vector<double> train_loss;
  std::vector<double> train_top1;
  std::vector<double> eval_top1;
  std::vector<double> lr;
  std::string checkpoint;
  int epochs() const { return static_cast<int>(train_loss.size()); }
};

/// Learning rate at a global step. Warmup ramps linearly per step and ends
/// exactly at base_lr; the cosine phase starts at base_lr (continuity is
/// exact at q=0) and its last step is exactly base_lr * final_lr_fraction.
double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg);

/// Per-parameter momentum buffers keyed by parameter name.
struct SgdState {
  std::unordered_map<std::string, std::vector<float>> velocity;
};

/// v <- momentum * v + grad + weight_decay * param (decay only on params
/// flagged for it); param <- param - lr * v.
void sgd_step(const std::vector<Parameter*>& params, SgdState& state, double lr,
              double momentum, double weight_decay);

/// Random horizontal flip (p=0.5) plus random crop from a zero-padded
/// canvas, one draw sequence per sample in batch order.
Tensor augment_batch(const Tensor& batch, Rng& rng, int pad = 4);

/// Eval-mode top-1 accuracy.
double evaluate(Model& model, const LabeledDataset& dataset, int batch_size = 256);

/// Deterministic training loop (shuffle order and augmentation draws are
/// functions of cfg.seed). Throws TrainAbort on a non-finite loss, carrying
/// the global step. eval_split may be null; per-epoch eval then reuses the
/// train split.
RunMetrics train(Model& model, const LabeledDataset& train_split, const TrainConfig& cfg,
                 const LabeledDataset* eval_split = nullptr, bool quiet = true);

}  // namespace crs
