#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vitcat/model.hpp"
#include "vitcat/pipeline.hpp"
#include "vitcat/tensor.hpp"

namespace vitcat::train {

struct TrainConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  size_t epochs = 50;
  size_t batch_size = 32;
  uint64_t seed = 1;
  // Decoupled decay shrinks the parameter directly (AdamW style); switched
  // off, the decay folds into the gradient as a plain L2 term.
  bool decoupled_decay = true;

  void validate() const;
};

struct OptimState {
  std::vector<Tensor> m;  // first moments, parameter order
  std::vector<Tensor> v;  // second moments
  uint64_t step = 0;

  static OptimState like(const std::vector<Tensor>& params);
};

struct Metrics {
  size_t epoch = 0;
  bool train_split = true;
  double mean_loss = 0.0;
  double topk_accuracy = 0.0;
  uint32_t node_id = 0;
};

// Mean binary cross-entropy over N_c labels; predictions are clamped to
// [1e-7, 1 - 1e-7] before the logs. Differentiable through pred.
Tensor bce_loss(const Tensor& pred, std::span<const uint8_t> target);

// Bias-corrected adaptive-moment update. With decoupled decay, each
// parameter first shrinks by lr*wd*param, then the moment update applies.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               OptimState& state, const TrainConfig& cfg);

// |top-k(pred) ∩ ones(target)| / k, ties broken toward the lower index.
double topk_accuracy(std::span<const double> pred, std::span<const uint8_t> target,
                     size_t k);

struct EvalResult {
  double mean_loss = 0.0;
  double topk_accuracy = 0.0;
};

EvalResult evaluate(const model::ModelParams& params, const model::ViTConfig& cfg,
                    std::span<const pipeline::Sample> samples);

struct TrainResult {
  model::ModelParams params;
  std::vector<Metrics> history;  // epoch 0 is the pre-training evaluation
};

// Seed-deterministic mini-batch training; identical inputs and seed yield
// bit-identical parameters. Computes the input scale 1/max(1, max train
// entry) before the first step and stores it with the parameters.
TrainResult train(model::ModelParams params, const model::ViTConfig& cfg,
                  std::span<const pipeline::Sample> train_samples,
                  std::span<const pipeline::Sample> test_samples,
                  const TrainConfig& tcfg);

}  // namespace vitcat::train
