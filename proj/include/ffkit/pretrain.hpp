#pragma once

// Supervised pretraining of the base classifier.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "ffkit/losses.hpp"
#include "ffkit/model.hpp"
#include "ffkit/optim.hpp"

namespace ffkit {

struct PretrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::adam, 2e-3};
  double target_train_accuracy = 0.98;
  bool stop_at_target = true;
  std::uint64_t seed = 1;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct PretrainLog {
  std::vector<PretrainEpoch> epochs;
  bool reached_target = false;
  std::string warning;  // empty when the target was reached
};

/// Minibatch cross-entropy training of every base parameter. The freeze mask
/// in effect before the call is restored afterwards.
inline PretrainLog pretrain(MicroTransformer& model, const Dataset& train, const PretrainConfig& cfg) {
  require_arg(!train.empty(), "pretrain: empty dataset");
  require_arg(cfg.batch_size > 0, "pretrain: batch size must be positive");
  for (auto y : train.labels) require_arg(y < model.geometry().classes, "pretrain: label out of range");
  PretrainLog log;
  if (cfg.epochs == 0) return log;

  const auto mask = model.freeze_mask();
  for (auto& p : model.parameters()) p.tensor.set_requires_grad(true);
  Optimizer opt(cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, 0x9E7));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train.labels[i]);
      const Tensor loss = cross_entropy(model.forward(train.rows_tensor(idx)), labels);
      auto params = model.trainable_parameters();
      opt.step(params, backward(loss));
      loss_sum += loss.item();
      ++batches;
    }
    const double acc = train_accuracy(model, train);
    log.epochs.push_back({epoch, loss_sum / static_cast<double>(batches), acc});
    if (acc >= cfg.target_train_accuracy) {
      log.reached_target = true;
      if (cfg.stop_at_target) break;
    }
  }
  if (!log.reached_target) {
    log.warning = "pretraining did not reach train accuracy " + std::to_string(cfg.target_train_accuracy) +
                  " (last " + std::to_string(log.epochs.back().train_accuracy) + ")";
  }
  model.apply_freeze_mask(mask);
  return log;
}

}  // namespace ffkit
