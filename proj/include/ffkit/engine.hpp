#pragma once

// Per-task forgetting loop and the model sequence it produces.
//
// Each task: freeze the model, attach fresh adapters, run K steps on mixed
// forgotten/retained batches, then fold the adapters into the base weights.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ffkit/adapters.hpp"
#include "ffkit/data.hpp"
#include "ffkit/log.hpp"
#include "ffkit/losses.hpp"
#include "ffkit/metrics.hpp"
#include "ffkit/model.hpp"
#include "ffkit/optim.hpp"

namespace ffkit {

enum class Method { gslora, gslora_pp, retrain, naive_negative, lora_no_sparsity };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::gslora: return "gslora";
    case Method::gslora_pp: return "gslora++";
    case Method::retrain: return "retrain";
    case Method::naive_negative: return "naive-negative";
    case Method::lora_no_sparsity: return "lora-no-sparsity";
  }
  return "gslora";
}

inline Method parse_method(std::string_view s) {
  for (auto m : {Method::gslora, Method::gslora_pp, Method::retrain, Method::naive_negative,
                 Method::lora_no_sparsity}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::invalid_argument, "unknown method '" + std::string(s) + "'");
}

/// How the group-sparse term acts on the adapters.
enum class SparsityMode {
  smooth,    // gradient of the smoothed norm, folded into the optimizer step
  proximal,  // group soft-threshold of lr * alpha after each data step
};

inline std::string_view to_string(SparsityMode m) { return m == SparsityMode::smooth ? "smooth" : "proximal"; }

inline SparsityMode parse_sparsity_mode(std::string_view s) {
  if (s == "smooth") return SparsityMode::smooth;
  if (s == "proximal") return SparsityMode::proximal;
  throw Error(ErrorKind::invalid_argument, "unknown sparsity mode '" + std::string(s) + "'");
}

struct TaskConfig {
  int task_id = 1;
  std::size_t iterations = 100;
  std::size_t forget_batch = 16;
  std::size_t retain_batch = 16;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-2};
  LossConfig loss;
  std::size_t rank = 8;
  Grouping grouping = Grouping::block;
  std::vector<SiteKind> sites{SiteKind::ffn_w1, SiteKind::ffn_w2};
  SparsityMode sparsity = SparsityMode::smooth;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double zero_threshold = 1e-3;
  std::uint64_t seed = 1;

  void validate() const {
    require_arg(iterations >= 1, "task config: iterations must be at least 1");
    require_arg(forget_batch >= 1, "task config: forget batch size must be at least 1");
    require_arg(optimizer.learning_rate > 0.0, "task config: learning rate must be positive");
    require_arg(zero_threshold > 0.0, "task config: zero-group threshold must be positive");
    loss.validate();
  }
};

struct IterationLog {
  int task_id = 0;
  std::size_t iteration = 0;
  LossBreakdown loss;
};

struct TaskResult {
  int task_id = 0;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
  std::vector<IterationLog> log;
  std::vector<std::string> group_labels;
  std::vector<double> group_norms;
  double zero_group_ratio = 0.0;
  double tunable_ratio = 0.0;
  double wall_ms = 0.0;
  std::vector<std::size_t> missing_prototypes;
};

namespace detail {

/// Throws an invariant error when a logged term leaves its documented range.
inline void check_bounds(const LossBreakdown& b, const LossConfig& cfg, int task, std::size_t it) {
  const double tol = 1e-12;
  auto where = [&] { return " (task " + std::to_string(task) + ", iteration " + std::to_string(it) + ")"; };
  require(b.forget >= 0.0 && b.forget <= cfg.bnd_data + tol, ErrorKind::invariant,
          "forgetting term " + std::to_string(b.forget) + " outside [0, BND_data]" + where());
  require(b.pro_forget >= 0.0 && b.pro_forget <= cfg.bnd_pro + tol, ErrorKind::invariant,
          "prototype forgetting term " + std::to_string(b.pro_forget) + " outside [0, BND_pro]" + where());
  require(b.structure >= 0.0, ErrorKind::invariant, "group-sparse term is negative" + where());
  require(std::isfinite(b.total), ErrorKind::invariant, "total loss is not finite" + where());
}

/// x <- x * max(0, 1 - t / ||x||) applied jointly over the parts.
inline void soft_threshold(std::vector<Tensor>& parts, double t) {
  double ss = 0.0;
  for (const auto& p : parts)
    for (double v : p.data()) ss += v * v;
  const double norm = std::sqrt(ss);
  const double factor = norm <= t ? 0.0 : 1.0 - t / norm;
  for (auto& p : parts)
    for (double& v : p.mutable_data()) v *= factor;
}

}  // namespace detail

/// One forgetting task on `model`. On return the task's adapters are merged
/// and the original freeze mask is restored.
inline TaskResult run_task(MicroTransformer& model, const Dataset& forget, const Dataset& retain,
                           const TaskConfig& cfg, const PrototypeTable* table) {
  cfg.validate();
  require_arg(!forget.empty(), "run_task: empty forgetting set");
  require_arg(!(retain.empty() && cfg.retain_batch > 0), "run_task: empty rehearsal set with nonzero batch size");
  require(model.adapters().empty(), ErrorKind::conflict, "run_task: model still holds unmerged adapters");
  require_arg(!cfg.loss.prototype_enabled || table != nullptr, "run_task: prototype table required");

  const auto t0 = std::chrono::steady_clock::now();
  TaskResult result;
  result.task_id = cfg.task_id;
  result.checksum_before = model.checksum();
  const auto mask = model.freeze_mask();

  LoraSpec spec{cfg.task_id, cfg.rank, cfg.grouping, cfg.sites, cfg.seed};
  auto groups = inject_lora(model, spec);
  result.tunable_ratio = tunable_ratio(model);

  // In proximal mode the structure term is reported but handled by the
  // shrinkage step instead of the gradient.
  LossConfig grad_cfg = cfg.loss;
  if (cfg.sparsity == SparsityMode::proximal) grad_cfg.alpha = 0.0;

  Optimizer opt(cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, 0xF000 + static_cast<std::uint64_t>(cfg.task_id)));
  std::set<std::size_t> skipped;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const Batch fb = sample_batch(forget, cfg.forget_batch, rng);
    LossInputs in;
    in.forget_logits = model.forward(fb.features);
    in.forget_labels = fb.labels;
    if (cfg.retain_batch > 0) {
      const Batch rb = sample_batch(retain, cfg.retain_batch, rng);
      in.retain_logits = model.forward(rb.features);
      in.retain_labels = rb.labels;
    }
    if (table) {
      for (auto y : in.forget_labels)
        if (!table->has(y)) skipped.insert(y);
      for (auto y : in.retain_labels)
        if (!table->has(y)) skipped.insert(y);
    }
    TotalLoss loss = total_loss(in, groups, grad_cfg.prototype_enabled ? table : nullptr, grad_cfg);
    if (cfg.sparsity == SparsityMode::proximal) {
      // Report the structure term with the configured weight.
      const double s = loss.breakdown.structure;
      loss.breakdown.w_structure = cfg.loss.alpha * s;
      loss.breakdown.total += loss.breakdown.w_structure;
    }
    detail::check_bounds(loss.breakdown, cfg.loss, cfg.task_id, it);
    result.log.push_back({cfg.task_id, it, loss.breakdown});

    auto params = model.trainable_parameters();
    opt.set_learning_rate(scheduled_lr(cfg.lr_schedule, cfg.optimizer.learning_rate, it, cfg.iterations));
    opt.step(params, backward(loss.value));
    if (cfg.sparsity == SparsityMode::proximal && cfg.loss.alpha > 0.0) {
      const double shrink = opt.config().learning_rate * cfg.loss.alpha;
      for (auto& g : groups) {
        if (!g.b_parts.empty()) detail::soft_threshold(g.b_parts, shrink);
        if (!g.a_parts.empty()) detail::soft_threshold(g.a_parts, shrink);
      }
    }
  }
  if (!skipped.empty()) {
    std::string list;
    for (auto c : skipped) list += (list.empty() ? "" : ",") + std::to_string(c);
    log_warn("task " + std::to_string(cfg.task_id) + ": no prototype for classes " + list +
             "; their prototype terms were skipped");
  }
  result.missing_prototypes.assign(skipped.begin(), skipped.end());

  for (const auto& g : groups) {
    result.group_labels.push_back(g.label);
    result.group_norms.push_back(group_norm(g));
  }
  result.zero_group_ratio = zero_group_ratio(groups, cfg.zero_threshold);
  merge_task(model, cfg.task_id);
  model.apply_freeze_mask(mask);
  result.checksum_after = model.checksum();
  result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---------------------------------------------------------------------------
// Sequences

struct SequenceConfig {
  Method method = Method::gslora_pp;
  TaskConfig task;  // template; task_id and seed are filled per task
  bool record_timing = false;
  /// Called with the merged model after each task (e.g. to save checkpoints).
  std::function<void(int, const MicroTransformer&)> on_task_end;
};

struct SequenceResult {
  std::vector<TaskResult> tasks;
  std::vector<MetricRecord> metrics;
  std::vector<double> acc_r_before;  // initial model on each task's retained classes
  std::vector<double> acc_f_before;  // initial model on each task's forgotten classes
  MicroTransformer model;            // final model
};

/// Applies the per-method switches to a task template.
inline TaskConfig configure_method(TaskConfig cfg, Method method) {
  switch (method) {
    case Method::gslora: cfg.loss.prototype_enabled = false; break;
    case Method::gslora_pp: cfg.loss.prototype_enabled = true; break;
    case Method::lora_no_sparsity:
      cfg.loss.prototype_enabled = false;
      cfg.loss.alpha = 0.0;
      break;
    case Method::naive_negative:
    case Method::retrain:
      cfg.loss.prototype_enabled = false;
      cfg.loss.alpha = 0.0;
      break;
  }
  return cfg;
}

namespace detail {

/// Retained classes that still have replay data, and those that do not.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_remaining(
    const ForgettingScenario& scenario, int t) {
  const std::set<std::size_t> missing(scenario.spec.missing.begin(), scenario.spec.missing.end());
  std::vector<std::size_t> present, absent;
  for (auto c : scenario.remaining_after(t)) (missing.count(c) ? absent : present).push_back(c);
  return {present, absent};
}

/// Plain training steps on L_data for the two non-adapter baselines.
inline TaskResult run_direct(MicroTransformer& model, const ScenarioTask& task, const TaskConfig& cfg, Method method) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TaskResult result;
  result.task_id = cfg.task_id;
  result.checksum_before = model.checksum();
  const auto mask = model.freeze_mask();
  if (method == Method::retrain) {
    require_arg(!task.retain.empty(), "retrain baseline: empty rehearsal set");
    model = MicroTransformer(model.geometry(), derive_seed(cfg.seed, 0x4E7A + static_cast<std::uint64_t>(cfg.task_id)));
  } else {
    require_arg(!task.forget.empty(), "naive-negative baseline: empty forgetting set");
    model.set_freeze(FreezeSelector::head);
  }
  result.tunable_ratio = tunable_ratio(model);
  Optimizer opt(cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, 0xF000 + static_cast<std::uint64_t>(cfg.task_id)));
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    LossInputs in;
    if (method == Method::retrain) {
      const Batch rb = sample_batch(task.retain, cfg.forget_batch + cfg.retain_batch, rng);
      in.retain_logits = model.forward(rb.features);
      in.retain_labels = rb.labels;
    } else {
      const Batch fb = sample_batch(task.forget, cfg.forget_batch, rng);
      in.forget_logits = model.forward(fb.features);
      in.forget_labels = fb.labels;
      if (cfg.retain_batch > 0 && !task.retain.empty()) {
        const Batch rb = sample_batch(task.retain, cfg.retain_batch, rng);
        in.retain_logits = model.forward(rb.features);
        in.retain_labels = rb.labels;
      }
    }
    const TotalLoss loss = total_loss(in, {}, nullptr, cfg.loss);
    check_bounds(loss.breakdown, cfg.loss, cfg.task_id, it);
    result.log.push_back({cfg.task_id, it, loss.breakdown});
    auto params = model.trainable_parameters();
    opt.step(params, backward(loss.value));
  }
  model.apply_freeze_mask(mask);
  result.checksum_after = model.checksum();
  result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace detail

/// Runs every task of `scenario` in order with `method`, evaluating on `test`
/// after each task. Prototypes come from the initial model, once.
inline SequenceResult run_sequence(const MicroTransformer& initial, const ForgettingScenario& scenario,
                                   const Dataset& test, const SequenceConfig& cfg) {
  require_arg(!scenario.tasks.empty(), "run_sequence: scenario has no tasks");
  validate_scenario_spec(scenario.spec, scenario.num_classes);
  require_arg(scenario.num_classes == initial.geometry().classes, "run_sequence: class count differs from the model");

  SequenceResult out;
  out.model = initial;
  const TaskConfig base = configure_method(cfg.task, cfg.method);
  std::optional<PrototypeTable> table;
  if (base.loss.prototype_enabled) table = compute_prototypes(initial, scenario.available_data());

  for (const auto& task : scenario.tasks) {
    TaskConfig tc = base;
    tc.task_id = task.task_id;
    tc.seed = cfg.task.seed;
    const auto [present, absent] = detail::split_remaining(scenario, task.task_id);
    out.acc_f_before.push_back(accuracy(initial, test, task.forgotten));
    out.acc_r_before.push_back(accuracy(initial, test, present));

    TaskResult tr;
    if (cfg.method == Method::retrain || cfg.method == Method::naive_negative) {
      tr = detail::run_direct(out.model, task, tc, cfg.method);
    } else {
      tr = run_task(out.model, task.forget, task.retain, tc, table ? &*table : nullptr);
    }

    MetricRecord rec;
    rec.task_id = task.task_id;
    rec.method = std::string(to_string(cfg.method));
    rec.seed = cfg.task.seed;
    rec.acc_r = accuracy(out.model, test, present);
    rec.acc_f = accuracy(out.model, test, task.forgotten);
    rec.acc_o = old_accuracy(out.model, scenario, test, task.task_id);
    if (!absent.empty()) rec.acc_m = accuracy(out.model, test, absent);
    rec.h_mean = h_mean(rec.acc_r, out.acc_f_before.back(), rec.acc_f);
    rec.zero_group_ratio = tr.zero_group_ratio;
    rec.tunable_ratio = tr.tunable_ratio;
    if (cfg.record_timing) rec.wall_ms = tr.wall_ms;
    require(rec.valid(), ErrorKind::invariant, "metric record out of range for task " + std::to_string(task.task_id));
    out.metrics.push_back(rec);
    out.tasks.push_back(std::move(tr));
    if (cfg.on_task_end) cfg.on_task_end(task.task_id, out.model);
  }
  return out;
}

/// Same outputs as run_sequence for one of the comparison methods.
inline SequenceResult run_baseline(const MicroTransformer& initial, const ForgettingScenario& scenario,
                                   const Dataset& test, Method kind, SequenceConfig cfg) {
  require_arg(kind == Method::retrain || kind == Method::naive_negative || kind == Method::lora_no_sparsity,
              "run_baseline: '" + std::string(to_string(kind)) + "' is not a baseline");
  cfg.method = kind;
  return run_sequence(initial, scenario, test, cfg);
}

}  // namespace ffkit
