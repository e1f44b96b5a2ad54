#pragma once

// Accuracy bookkeeping, the harmonic forgetting score and the head-only
// recovery probe.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ffkit/data.hpp"
#include "ffkit/log.hpp"
#include "ffkit/losses.hpp"
#include "ffkit/model.hpp"
#include "ffkit/optim.hpp"

namespace ffkit {

/// Percentage of samples whose label is in `classes` and whose argmax over all
/// C logits matches. Throws empty_selection when nothing matches the filter.
inline double accuracy(const MicroTransformer& model, const Dataset& data, std::span<const std::size_t> classes) {
  const Dataset sel = data.filter_classes(classes);
  require(!sel.empty(), ErrorKind::empty_selection, "accuracy: no samples for the selected classes");
  const auto pred = predict(model, sel);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == sel.labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(sel.size());
}

/// Accuracy over every sample.
inline double accuracy(const MicroTransformer& model, const Dataset& data) {
  require(!data.empty(), ErrorKind::empty_selection, "accuracy: empty dataset");
  return 100.0 * train_accuracy(model, data);
}

/// 2 acc_r drop / (acc_r + drop), drop = acc_f_origin - acc_f_now. A negative
/// drop is clamped to zero and logged.
inline double h_mean(double acc_r_now, double acc_f_origin, double acc_f_now) {
  double drop = acc_f_origin - acc_f_now;
  if (drop < 0.0) {
    log_warn("forgotten-class accuracy rose from " + std::to_string(acc_f_origin) + " to " +
             std::to_string(acc_f_now) + "; clamping the drop to 0");
    drop = 0.0;
  }
  const double denom = acc_r_now + drop;
  return denom <= 0.0 ? 0.0 : 2.0 * acc_r_now * drop / denom;
}

/// Accuracy on classes forgotten in tasks 1..t-1; absent for t < 2.
inline std::optional<double> old_accuracy(const MicroTransformer& model, const ForgettingScenario& scenario,
                                          const Dataset& test, int t) {
  if (t < 2) return std::nullopt;
  const auto old = scenario.forgotten_through(t - 1);
  return accuracy(model, test, old);
}

struct MetricRecord {
  int task_id = 0;
  std::string method;
  std::uint64_t seed = 0;
  double acc_r = 0.0;
  double acc_f = 0.0;
  std::optional<double> acc_o;
  std::optional<double> acc_m;
  double h_mean = 0.0;
  double zero_group_ratio = 0.0;
  double tunable_ratio = 0.0;
  std::optional<double> wall_ms;

  /// Range checks on every field.
  [[nodiscard]] bool valid() const {
    auto pct = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 100.0; };
    auto frac = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    return pct(acc_r) && pct(acc_f) && (!acc_o || pct(*acc_o)) && (!acc_m || pct(*acc_m)) && pct(h_mean) &&
           frac(zero_group_ratio) && frac(tunable_ratio);
  }
};

// ---------------------------------------------------------------------------
// Recovery probe

struct RecoveryConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-2};
  std::uint64_t seed = 1;
};

struct RecoveryCurve {
  std::vector<double> forgotten;  // epochs + 1 points, the first before any update
  std::vector<double> retained;
};

struct RecoveryResult {
  RecoveryCurve subject;
  RecoveryCurve comparator;
};

namespace detail {

inline double head_accuracy(const Tensor& pooled, const std::vector<std::size_t>& labels, const Tensor& w,
                            const Tensor& b, const std::set<std::size_t>& classes) {
  NoGradGuard guard;
  const Tensor logits = add(matmul(pooled, w), b);
  const std::size_t C = logits.size(1);
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!classes.count(labels[i])) continue;
    const double* row = logits.data().data() + i * C;
    hits += static_cast<std::size_t>(std::max_element(row, row + C) - row) == labels[i];
    ++total;
  }
  require(total > 0, ErrorKind::empty_selection, "recovery probe: no test samples for a curve");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

inline Tensor pooled_features(const MicroTransformer& model, const Dataset& data) {
  NoGradGuard guard;
  return model.features(data.features_tensor());
}

}  // namespace detail

/// Retrains only the head of `model` on `train` for E epochs over frozen
/// backbone features, recording test accuracy on forgotten and retained
/// classes after every epoch.
inline RecoveryCurve recover_head(const MicroTransformer& model, const Dataset& train, const Dataset& test,
                                  std::span<const std::size_t> forgotten, const RecoveryConfig& cfg) {
  require_arg(!train.empty(), "recovery probe: empty training data");
  require_arg(cfg.batch_size > 0, "recovery probe: batch size must be positive");
  const std::set<std::size_t> f_set(forgotten.begin(), forgotten.end());
  std::set<std::size_t> r_set;
  for (std::size_t c = 0; c < model.geometry().classes; ++c)
    if (!f_set.count(c)) r_set.insert(c);

  const Tensor train_pooled = detail::pooled_features(model, train);
  const Tensor test_pooled = detail::pooled_features(model, test);
  Tensor w = model.head_weight().detach();
  Tensor b = model.head_bias().detach();
  w.set_requires_grad(true);
  b.set_requires_grad(true);

  RecoveryCurve curve;
  auto record = [&] {
    curve.forgotten.push_back(detail::head_accuracy(test_pooled, test.labels, w, b, f_set));
    curve.retained.push_back(detail::head_accuracy(test_pooled, test.labels, w, b, r_set));
  };
  record();
  Optimizer opt(cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, 0x2EC0));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t d = train_pooled.size(1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<double> rows;
      rows.reserve(idx.size() * d);
      std::vector<std::size_t> labels;
      for (auto i : idx) {
        rows.insert(rows.end(), train_pooled.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                    train_pooled.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        labels.push_back(train.labels[i]);
      }
      const Tensor x({idx.size(), d}, std::move(rows));
      const Tensor loss = cross_entropy(add(matmul(x, w), b), labels);
      std::vector<Tensor> params{w, b};
      opt.step(params, backward(loss));
    }
    record();
  }
  return curve;
}

/// Zeroes the head columns and biases of the given classes.
inline MicroTransformer mask_head(const MicroTransformer& model, std::span<const std::size_t> classes) {
  MicroTransformer out = model;
  const std::size_t C = out.geometry().classes;
  auto w = out.head_weight().mutable_data();
  auto b = out.head_bias().mutable_data();
  for (auto c : classes) {
    require_arg(c < C, "mask_head: class out of range");
    for (std::size_t r = 0; r < out.geometry().d_model; ++r) w[r * C + c] = 0.0;
    b[c] = 0.0;
  }
  return out;
}

/// Recovery curves for the forgotten model and for the head-masked pretrained
/// comparator, trained identically.
inline RecoveryResult recovery_probe(const MicroTransformer& forgotten_model, const MicroTransformer& pretrained,
                                     const Dataset& train, const Dataset& test,
                                     std::span<const std::size_t> forgotten, const RecoveryConfig& cfg) {
  RecoveryResult out;
  out.subject = recover_head(forgotten_model, train, test, forgotten, cfg);
  out.comparator = recover_head(mask_head(pretrained, forgotten), train, test, forgotten, cfg);
  return out;
}

}  // namespace ffkit
