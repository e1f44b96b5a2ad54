#pragma once

// Synthetic class-blob datasets and forgetting scenarios built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ffkit/rng.hpp"
#include "ffkit/tensor.hpp"

namespace ffkit {

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  Split split = Split::train;
  std::vector<double> features;  // row-major [size, dim]
  std::vector<std::size_t> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] bool empty() const { return labels.empty(); }

  [[nodiscard]] std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }

  void push_back(std::span<const double> x, std::size_t label) {
    require_arg(x.size() == dim, "dataset: feature width mismatch");
    require_arg(label < num_classes, "dataset: label out of range");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  /// Indices of samples per class, in dataset order.
  [[nodiscard]] std::vector<std::vector<std::size_t>> class_index() const {
    std::vector<std::vector<std::size_t>> idx(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) idx[labels[i]].push_back(i);
    return idx;
  }

  [[nodiscard]] std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto y : labels) ++counts[y];
    return counts;
  }

  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{dim, num_classes, split, {}, {}};
    out.features.reserve(indices.size() * dim);
    out.labels.reserve(indices.size());
    for (auto i : indices) out.push_back(row(i), labels.at(i));
    return out;
  }

  [[nodiscard]] Dataset filter_classes(std::span<const std::size_t> classes) const {
    std::vector<bool> keep(num_classes, false);
    for (auto c : classes) keep.at(c) = true;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (keep[labels[i]]) idx.push_back(i);
    return subset(idx);
  }

  [[nodiscard]] Tensor features_tensor() const {
    require_arg(!empty(), "dataset: empty");
    return Tensor({size(), dim}, features);
  }

  [[nodiscard]] Tensor rows_tensor(std::span<const std::size_t> indices) const {
    std::vector<double> out;
    out.reserve(indices.size() * dim);
    for (auto i : indices) {
      auto r = row(i);
      out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor({indices.size(), dim}, std::move(out));
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset concat_datasets(const Dataset& a, const Dataset& b) {
  require_arg(a.dim == b.dim && a.num_classes == b.num_classes, "concat_datasets: incompatible datasets");
  Dataset out = a;
  out.features.insert(out.features.end(), b.features.begin(), b.features.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

struct SyntheticSpec {
  std::size_t classes = 20;
  std::size_t dim = 32;
  std::size_t per_class = 100;
  double margin = 6.0;  // radius of the sphere holding class means
  double noise = 1.0;   // per-coordinate standard deviation
  std::uint64_t seed = 1;
};

struct SplitDatasets {
  Dataset train;
  Dataset test;
};

/// Gaussian blobs; class means lie on a sphere of radius `margin`. The first
/// 80% of each class (rounded down) is train, the rest test.
inline SplitDatasets generate_synthetic(const SyntheticSpec& spec) {
  require_arg(spec.classes >= 2, "generate_synthetic: need at least 2 classes");
  require_arg(spec.per_class >= 2, "generate_synthetic: need at least 2 samples per class");
  require_arg(spec.dim >= 1, "generate_synthetic: feature dimension must be positive");
  require_arg(spec.margin >= 0.0 && std::isfinite(spec.margin), "generate_synthetic: margin must be finite and >= 0");
  require_arg(spec.noise > 0.0, "generate_synthetic: noise must be positive");

  Rng rng(derive_seed(spec.seed, 0xDA7A));
  std::normal_distribution<double> gauss(0.0, 1.0);
  SplitDatasets out;
  out.train = Dataset{spec.dim, spec.classes, Split::train, {}, {}};
  out.test = Dataset{spec.dim, spec.classes, Split::test, {}, {}};
  const std::size_t n_train = spec.per_class * 8 / 10;

  std::vector<double> mean(spec.dim), x(spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    double norm = 0.0;
    for (auto& m : mean) {
      m = gauss(rng);
      norm += m * m;
    }
    norm = std::sqrt(norm);
    for (auto& m : mean) m *= spec.margin / norm;
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      for (std::size_t j = 0; j < spec.dim; ++j) x[j] = mean[j] + spec.noise * gauss(rng);
      (i < n_train ? out.train : out.test).push_back(x, c);
    }
  }
  return out;
}

struct Batch {
  Tensor features;
  std::vector<std::size_t> labels;
};

/// Uniform sampling with replacement.
inline Batch sample_batch(const Dataset& data, std::size_t size, Rng& rng) {
  require_arg(!data.empty(), "sample_batch: dataset is empty");
  require_arg(size > 0, "sample_batch: batch size must be positive");
  std::uniform_int_distribution<std::size_t> pick_index(0, data.size() - 1);
  std::vector<std::size_t> idx(size);
  for (auto& i : idx) i = pick_index(rng);
  Batch b{data.rows_tensor(idx), {}};
  b.labels.reserve(size);
  for (auto i : idx) b.labels.push_back(data.labels[i]);
  return b;
}

// ---------------------------------------------------------------------------
// Scenarios

enum class ScenarioKind { single, continual, few_shot, missing_class };

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::single: return "single";
    case ScenarioKind::continual: return "continual";
    case ScenarioKind::few_shot: return "few-shot";
    case ScenarioKind::missing_class: return "missing-class";
  }
  return "single";
}

inline ScenarioKind parse_scenario_kind(std::string_view s) {
  if (s == "single") return ScenarioKind::single;
  if (s == "continual") return ScenarioKind::continual;
  if (s == "few-shot") return ScenarioKind::few_shot;
  if (s == "missing-class") return ScenarioKind::missing_class;
  throw Error(ErrorKind::invalid_argument, "unknown scenario kind '" + std::string(s) + "'");
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::single;
  std::vector<std::vector<std::size_t>> forget_tasks;  // forgotten classes per task
  double ratio = 0.1;                                  // per-class subsampling ratio
  std::size_t shots = 0;                               // >0: exact samples per class
  std::vector<std::size_t> missing;                    // retained classes with no replay data
  std::uint64_t seed = 1;
};

struct ScenarioTask {
  int task_id = 1;
  std::vector<std::size_t> forgotten;  // classes forgotten in this task
  std::vector<std::size_t> replayed;   // classes present in the rehearsal set
  Dataset forget;
  Dataset retain;
};

struct ForgettingScenario {
  ScenarioSpec spec;
  std::size_t num_classes = 0;
  std::vector<ScenarioTask> tasks;

  /// Union of classes forgotten by tasks 1..t (1-based, inclusive).
  [[nodiscard]] std::vector<std::size_t> forgotten_through(int t) const {
    std::vector<std::size_t> out;
    for (const auto& task : tasks)
      if (task.task_id <= t) out.insert(out.end(), task.forgotten.begin(), task.forgotten.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Classes not forgotten by tasks 1..t, including missing ones.
  [[nodiscard]] std::vector<std::size_t> remaining_after(int t) const {
    auto gone = forgotten_through(t);
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!std::binary_search(gone.begin(), gone.end(), c)) out.push_back(c);
    return out;
  }

  /// Every sample made available to the forgetting procedure, any task.
  [[nodiscard]] Dataset available_data() const {
    require_arg(!tasks.empty(), "scenario has no tasks");
    Dataset out = tasks.front().forget;
    out.features.clear();
    out.labels.clear();
    for (const auto& t : tasks) {
      out = concat_datasets(out, t.forget);
      out = concat_datasets(out, t.retain);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::size_t> draw_per_class(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
  std::vector<std::size_t> shuffled = pool;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.resize(count);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

}  // namespace detail

inline void validate_scenario_spec(const ScenarioSpec& spec, std::size_t num_classes) {
  require_arg(!spec.forget_tasks.empty(), "scenario: at least one forgetting task is required");
  if (spec.kind == ScenarioKind::single)
    require_arg(spec.forget_tasks.size() == 1, "scenario: single-step scenario must have exactly one task");
  if (spec.kind == ScenarioKind::few_shot) require_arg(spec.shots > 0, "scenario: few-shot scenario needs shots > 0");
  if (spec.kind == ScenarioKind::missing_class)
    require_arg(!spec.missing.empty(), "scenario: missing-class scenario needs missing classes");
  if (spec.shots == 0)
    require_arg(spec.ratio > 0.0 && spec.ratio <= 0.5,
                "scenario: data ratio must lie in (0, 0.5] so forgetting data stays much smaller than the "
                "pretraining set");
  std::set<std::size_t> seen;
  for (std::size_t t = 0; t < spec.forget_tasks.size(); ++t) {
    require_arg(!spec.forget_tasks[t].empty(), "scenario: task " + std::to_string(t + 1) + " forgets no classes");
    for (auto c : spec.forget_tasks[t]) {
      require_arg(c < num_classes, "scenario: unknown class " + std::to_string(c));
      require_arg(seen.insert(c).second,
                  "scenario: class " + std::to_string(c) + " is forgotten by more than one task (overlap)");
    }
  }
  std::set<std::size_t> missing;
  for (auto c : spec.missing) {
    require_arg(c < num_classes, "scenario: unknown missing class " + std::to_string(c));
    require_arg(!seen.count(c), "scenario: missing class " + std::to_string(c) + " is also forgotten");
    require_arg(missing.insert(c).second, "scenario: duplicate missing class " + std::to_string(c));
  }
}

/// Materializes per-task forgetting and rehearsal sets from a training split.
/// Each task draws fresh per-class samples with its own derived seed.
inline ForgettingScenario build_scenario(const Dataset& train, const ScenarioSpec& spec) {
  validate_scenario_spec(spec, train.num_classes);
  const auto by_class = train.class_index();
  auto take_count = [&](std::size_t c) {
    const std::size_t avail = by_class[c].size();
    if (spec.shots > 0) {
      require_arg(spec.shots <= avail, "scenario: shots=" + std::to_string(spec.shots) + " exceeds the " +
                                           std::to_string(avail) + " samples of class " + std::to_string(c));
      return spec.shots;
    }
    require_arg(avail > 0, "scenario: class " + std::to_string(c) + " has no training samples");
    auto n = static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(avail)));
    return std::clamp<std::size_t>(n, 1, avail);
  };

  ForgettingScenario scenario;
  scenario.spec = spec;
  scenario.num_classes = train.num_classes;
  std::set<std::size_t> gone;
  const std::set<std::size_t> missing(spec.missing.begin(), spec.missing.end());
  for (std::size_t t = 0; t < spec.forget_tasks.size(); ++t) {
    ScenarioTask task;
    task.task_id = static_cast<int>(t + 1);
    task.forgotten = spec.forget_tasks[t];
    std::sort(task.forgotten.begin(), task.forgotten.end());
    gone.insert(task.forgotten.begin(), task.forgotten.end());
    Rng rng(derive_seed(spec.seed, 0x5CE0 + t));

    std::vector<std::size_t> f_idx;
    for (auto c : task.forgotten) {
      auto picked = detail::draw_per_class(by_class[c], take_count(c), rng);
      f_idx.insert(f_idx.end(), picked.begin(), picked.end());
    }
    std::vector<std::size_t> r_idx;
    for (std::size_t c = 0; c < train.num_classes; ++c) {
      if (gone.count(c) || missing.count(c)) continue;
      task.replayed.push_back(c);
      auto picked = detail::draw_per_class(by_class[c], take_count(c), rng);
      r_idx.insert(r_idx.end(), picked.begin(), picked.end());
    }
    task.forget = train.subset(f_idx);
    task.retain = train.subset(r_idx);
    scenario.tasks.push_back(std::move(task));
  }
  return scenario;
}

}  // namespace ffkit
