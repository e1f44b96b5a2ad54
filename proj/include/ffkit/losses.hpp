#pragma once

// Objective terms for selective forgetting.
//
//   total = retain + beta * forget + [pro_retain + gamma * pro_forget] + alpha * structure
//
// forget      = ReLU(BND_data - CE(forgotten batch))
// pro_forget  = mean_i ReLU(BND_pro - KL_i) over forgotten samples
// pro_retain  = mean_i KL_i over retained samples
// structure   = sum over groups of ||B||_F + ||A||_F (smoothed)
//
// KL_i compares the softmax of the class prototype with the softmax of the
// sample's logits.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffkit/lora.hpp"
#include "ffkit/model.hpp"
#include "ffkit/tensor.hpp"

namespace ffkit {

enum class KlDirection {
  prototype_first,  // KL(softmax(P) || softmax(h))
  logits_first,     // KL(softmax(h) || softmax(P))
};

struct LossConfig {
  double alpha = 0.01;
  double beta = 0.15;
  double gamma = 0.15;
  double bnd_data = 2.0 * std::log(20.0);
  double bnd_pro = 2.0 * std::log(20.0);
  bool prototype_enabled = true;
  KlDirection kl_direction = KlDirection::prototype_first;
  double smoothing_eps = 1e-12;

  /// Bounds default to twice the uniform-prediction cross-entropy.
  static LossConfig for_classes(std::size_t classes) {
    LossConfig cfg;
    cfg.bnd_data = 2.0 * std::log(static_cast<double>(classes));
    cfg.bnd_pro = cfg.bnd_data;
    return cfg;
  }

  void validate() const {
    require_arg(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "loss config: weights must be nonnegative");
    require_arg(bnd_data > 0.0 && bnd_pro > 0.0, "loss config: bounds must be strictly positive");
    require_arg(smoothing_eps > 0.0, "loss config: smoothing epsilon must be positive");
  }
};

inline void check_labels(const Tensor& logits, std::span<const std::size_t> labels, std::string_view op) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) shape_error(op, logits.shape(), Shape{labels.size()});
  for (auto y : labels) {
    require_arg(y < logits.size(1), std::string(op) + ": label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(logits.size(1)) + ")");
  }
}

/// Mean negative log-softmax probability of the true class.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels, "cross_entropy");
  return scale(mean(pick(log_softmax(logits), labels)), -1.0);
}

inline Tensor forgetting_loss(const Tensor& logits, std::span<const std::size_t> labels, double bound) {
  require_arg(bound > 0.0, "forgetting_loss: bound must be positive");
  return relu(add_scalar(scale(cross_entropy(logits, labels), -1.0), bound));
}

inline Tensor retention_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  return cross_entropy(logits, labels);
}

inline Tensor group_sparse_loss(std::span<const LoRAGroup> groups, double eps = 1e-12) {
  if (groups.empty()) return Tensor::scalar(0.0);
  Tensor total = smoothed_group_norm(groups.front(), eps);
  for (std::size_t i = 1; i < groups.size(); ++i) total = add(total, smoothed_group_norm(groups[i], eps));
  return total;
}

// ---------------------------------------------------------------------------
// Prototypes

struct PrototypeTable {
  std::size_t num_classes = 0;
  std::vector<std::vector<double>> logits;  // empty for classes without samples
  std::vector<std::size_t> counts;

  [[nodiscard]] bool has(std::size_t c) const { return c < num_classes && counts[c] > 0; }

  [[nodiscard]] const std::vector<double>& at(std::size_t c) const {
    require(has(c), ErrorKind::missing_prototype, "no prototype for class " + std::to_string(c));
    return logits[c];
  }

  [[nodiscard]] std::vector<std::size_t> missing() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!has(c)) out.push_back(c);
    return out;
  }
};

/// Per-class mean of the model's logits over `data`.
inline PrototypeTable compute_prototypes(const MicroTransformer& model, const Dataset& data) {
  const std::size_t C = model.geometry().classes;
  PrototypeTable table{C, std::vector<std::vector<double>>(C), std::vector<std::size_t>(C, 0)};
  if (data.empty()) return table;
  std::vector<std::vector<double>> sums(C, std::vector<double>(C, 0.0));
  const Tensor logits = model.logits(data.features_tensor());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = data.labels[i];
    require_arg(y < C, "compute_prototypes: label out of range");
    ++table.counts[y];
    for (std::size_t j = 0; j < C; ++j) sums[y][j] += logits.data()[i * C + j];
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (table.counts[c] == 0) continue;
    table.logits[c].resize(C);
    for (std::size_t j = 0; j < C; ++j) table.logits[c][j] = sums[c][j] / static_cast<double>(table.counts[c]);
  }
  return table;
}

/// Plain-value KL between softmax-normalized logit vectors, for checks and
/// reporting.
inline double softmax_kl(std::span<const double> p_logits, std::span<const double> q_logits) {
  require_arg(p_logits.size() == q_logits.size() && !p_logits.empty(), "softmax_kl: size mismatch");
  auto log_softmax_values = [](std::span<const double> x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : x) z += std::exp(v - mx);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - mx - std::log(z);
    return out;
  };
  const auto lp = log_softmax_values(p_logits);
  const auto lq = log_softmax_values(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return kl;
}

struct PrototypeTerms {
  Tensor retained;   // mean KL over retained samples (0 when none)
  Tensor forgotten;  // mean bounded term over forgotten samples, before gamma
  std::vector<std::size_t> skipped_labels;
};

namespace detail {

/// Per-sample KL between prototype softmax and logit softmax: [n].
inline std::optional<Tensor> prototype_kl(const Tensor& logits, std::span<const std::size_t> labels,
                                          const PrototypeTable& table, KlDirection direction,
                                          std::vector<std::size_t>& skipped) {
  check_labels(logits, labels, "prototype_loss");
  const std::size_t C = logits.size(1);
  std::vector<std::size_t> rows;
  std::vector<double> target_logp;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!table.has(labels[i])) {
      skipped.push_back(labels[i]);
      continue;
    }
    rows.push_back(i);
    const auto& p = table.at(labels[i]);
    double mx = p[0];
    for (double v : p) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : p) z += std::exp(v - mx);
    for (double v : p) target_logp.push_back(v - mx - std::log(z));
  }
  if (rows.empty()) return std::nullopt;
  const Tensor h = rows.size() == labels.size() ? logits : gather_rows(logits, rows);
  const Tensor log_q = log_softmax(h);
  const Tensor log_p({rows.size(), C}, target_logp);
  if (direction == KlDirection::prototype_first) {
    std::vector<double> p(target_logp.size()), entropy_part(rows.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(target_logp[i]);
      entropy_part[i / C] += p[i] * target_logp[i];
    }
    const Tensor cross = sum_last_axis(mul(Tensor({rows.size(), C}, std::move(p)), log_q));
    return sub(Tensor::vector(std::move(entropy_part)), cross);
  }
  return sum_last_axis(mul(softmax(h), sub(log_q, log_p)));
}

}  // namespace detail

/// Prototype regularization split into its retained and forgotten parts.
/// Samples whose class has no prototype are skipped and reported.
inline PrototypeTerms prototype_terms(const Tensor& forget_logits, std::span<const std::size_t> forget_labels,
                                      const Tensor& retain_logits, std::span<const std::size_t> retain_labels,
                                      const PrototypeTable& table, const LossConfig& cfg) {
  PrototypeTerms out{Tensor::scalar(0.0), Tensor::scalar(0.0), {}};
  if (retain_logits.defined() && !retain_labels.empty()) {
    if (auto kl = detail::prototype_kl(retain_logits, retain_labels, table, cfg.kl_direction, out.skipped_labels))
      out.retained = mean(*kl);
  }
  if (forget_logits.defined() && !forget_labels.empty()) {
    if (auto kl = detail::prototype_kl(forget_logits, forget_labels, table, cfg.kl_direction, out.skipped_labels))
      out.forgotten = mean(relu(add_scalar(scale(*kl, -1.0), cfg.bnd_pro)));
  }
  return out;
}

/// pro_retain + gamma * pro_forget.
inline Tensor prototype_loss(const Tensor& forget_logits, std::span<const std::size_t> forget_labels,
                             const Tensor& retain_logits, std::span<const std::size_t> retain_labels,
                             const PrototypeTable& table, const LossConfig& cfg) {
  auto t = prototype_terms(forget_logits, forget_labels, retain_logits, retain_labels, table, cfg);
  return add(t.retained, scale(t.forgotten, cfg.gamma));
}

// ---------------------------------------------------------------------------
// Total objective

/// Raw (unweighted) values of every term plus their weighted contributions.
struct LossBreakdown {
  double retain = 0.0;
  double forget = 0.0;
  double pro_retain = 0.0;
  double pro_forget = 0.0;
  double structure = 0.0;

  double w_retain = 0.0;
  double w_forget = 0.0;
  double w_pro_retain = 0.0;
  double w_pro_forget = 0.0;
  double w_structure = 0.0;
  double total = 0.0;

  [[nodiscard]] double component_sum() const {
    return w_retain + w_forget + w_pro_retain + w_pro_forget + w_structure;
  }
};

struct LossTerms {
  Tensor retain;
  Tensor forget;
  Tensor pro_retain;  // undefined when prototypes are off
  Tensor pro_forget;
  Tensor structure;
};

struct TotalLoss {
  Tensor value;
  LossBreakdown breakdown;
};

/// Weighted sum of already-computed terms.
inline TotalLoss combine_terms(const LossTerms& terms, const LossConfig& cfg) {
  auto val = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  LossBreakdown b;
  b.retain = val(terms.retain);
  b.forget = val(terms.forget);
  b.pro_retain = val(terms.pro_retain);
  b.pro_forget = val(terms.pro_forget);
  b.structure = val(terms.structure);

  Tensor total;
  auto accumulate = [&](const Tensor& t, double weight, double& slot) {
    if (!t.defined()) return;
    const Tensor w = weight == 1.0 ? t : scale(t, weight);
    slot = w.item();
    total = total.defined() ? add(total, w) : w;
  };
  accumulate(terms.retain, 1.0, b.w_retain);
  accumulate(terms.forget, cfg.beta, b.w_forget);
  if (cfg.prototype_enabled) {
    accumulate(terms.pro_retain, 1.0, b.w_pro_retain);
    accumulate(terms.pro_forget, cfg.gamma, b.w_pro_forget);
  }
  accumulate(terms.structure, cfg.alpha, b.w_structure);
  if (!total.defined()) total = Tensor::scalar(0.0);
  b.total = total.item();
  return {total, b};
}

struct LossInputs {
  Tensor forget_logits;
  std::vector<std::size_t> forget_labels;
  Tensor retain_logits;  // may be undefined (no rehearsal batch)
  std::vector<std::size_t> retain_labels;
};

inline TotalLoss total_loss(const LossInputs& in, std::span<const LoRAGroup> groups, const PrototypeTable* table,
                            const LossConfig& cfg) {
  cfg.validate();
  require_arg(!cfg.prototype_enabled || table != nullptr,
              "total_loss: prototype regularization enabled but no prototype table supplied");
  LossTerms terms;
  if (in.retain_logits.defined() && !in.retain_labels.empty())
    terms.retain = retention_loss(in.retain_logits, in.retain_labels);
  else
    terms.retain = Tensor::scalar(0.0);
  if (in.forget_logits.defined() && !in.forget_labels.empty())
    terms.forget = forgetting_loss(in.forget_logits, in.forget_labels, cfg.bnd_data);
  else
    terms.forget = Tensor::scalar(0.0);
  if (cfg.prototype_enabled) {
    auto pt = prototype_terms(in.forget_logits, in.forget_labels, in.retain_logits, in.retain_labels, *table, cfg);
    terms.pro_retain = pt.retained;
    terms.pro_forget = pt.forgotten;
  }
  terms.structure = group_sparse_loss(groups, cfg.smoothing_eps);
  return combine_terms(terms, cfg);
}

}  // namespace ffkit
