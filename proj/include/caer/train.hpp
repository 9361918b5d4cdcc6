#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <vector>

#include "caer/data.hpp"
#include "caer/model.hpp"

namespace caer {

struct TrainConfig {
  double base_lr = 5e-3;        // dropped by a factor of 10 every 4 epochs
  int batch_size = 32;
  int epochs = 10;
  std::uint32_t seed = 0;
  bool aug_flip = true;
  bool aug_contrast = true;
  bool aug_color = true;
  double dropout = 0.5;
  double stop_train_acc = 0.0;  // stop once train accuracy reaches this; 0 disables

  void validate() const {
    if (base_lr <= 0.0) throw InvalidConfigError("train config: base_lr must be > 0");
    if (batch_size < 2) throw InvalidConfigError("train config: batch size must be >= 2");
    if (epochs < 1) throw InvalidConfigError("train config: epochs must be >= 1");
  }
};

/// base_lr * 10^(-floor(epoch / 4)).
double lr_at(int epoch, const TrainConfig& cfg);

/// p <- p - lr * g for every learnable tensor; running statistics untouched.
void sgd_step(ModelParams<float>& params, const ModelParams<float>& grads, float lr);

/// Horizontal flip (p = 0.5, both views and box bookkeeping together),
/// contrast jitter about 0.5, per-channel color scaling; outputs clamped to
/// [0, 1] and the hidden-face region re-zeroed.
void augment(ClipSample& sample, const TrainConfig& cfg, std::mt19937& rng);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

std::string metrics_record(const EpochMetrics& m);

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochMetrics> history;
};

/// Full training loop: per epoch, shuffle the train split, sample one window
/// per clip, preprocess, augment, and take SGD steps on the cross-entropy
/// loss; validation accuracy is measured after every epoch. Deterministic
/// per seed.
TrainResult train(const DatasetManifest& manifest, const TrainConfig& tc, ModelConfig mc,
                  std::ostream* echo = nullptr, const std::filesystem::path& metrics_path = {});

/// argmax with ties broken toward the lowest index.
int argmax_row(const Tensor<float>& logits, std::int64_t row);

}  // namespace caer
