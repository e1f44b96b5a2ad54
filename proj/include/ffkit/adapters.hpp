#pragma once

// Attaching, grouping and merging per-task adapters on a model.

#include <algorithm>
#include <string>
#include <vector>

#include "ffkit/lora.hpp"
#include "ffkit/model.hpp"

namespace ffkit {

struct LoraSpec {
  int task_id = 1;
  std::size_t rank = 8;
  Grouping grouping = Grouping::block;
  std::vector<SiteKind> sites{SiteKind::ffn_w1, SiteKind::ffn_w2};
  std::uint64_t seed = 1;
};

inline bool has_unmerged(const MicroTransformer& model, int task_id) {
  return std::any_of(model.adapters().begin(), model.adapters().end(),
                     [&](const LoRAPair& p) { return p.task_id == task_id; });
}

inline std::vector<LoRAPair> task_pairs(const MicroTransformer& model, int task_id) {
  std::vector<LoRAPair> out;
  for (const auto& p : model.adapters())
    if (p.task_id == task_id) out.push_back(p);
  return out;
}

/// Sparsity groups over the unmerged adapters of one task.
inline std::vector<LoRAGroup> task_groups(const MicroTransformer& model, int task_id) {
  auto it = model.adapter_grouping().find(task_id);
  require(it != model.adapter_grouping().end(), ErrorKind::invalid_argument,
          "task " + std::to_string(task_id) + " has no adapters");
  return make_groups(task_id, task_pairs(model, task_id), it->second);
}

/// Adds one adapter per (block, site), freezes everything else and returns the
/// task's groups. Logits are unchanged because every B starts at zero.
inline std::vector<LoRAGroup> inject_lora(MicroTransformer& model, const LoraSpec& spec) {
  require(!has_unmerged(model, spec.task_id), ErrorKind::conflict,
          "task " + std::to_string(spec.task_id) + " already has unmerged adapters");
  const auto& merged = model.merged_tasks();
  require(std::find(merged.begin(), merged.end(), spec.task_id) == merged.end(), ErrorKind::conflict,
          "task " + std::to_string(spec.task_id) + " was already merged");
  require_arg(!spec.sites.empty(), "inject_lora: no adapter sites selected");

  Rng rng(derive_seed(spec.seed, 0x10A0 + static_cast<std::uint64_t>(spec.task_id)));
  std::vector<LoRAPair> fresh;
  for (std::size_t l = 0; l < model.num_blocks(); ++l) {
    for (auto kind : spec.sites) {
      const Site site{l, kind};
      const Tensor w = model.site_weight(site);
      fresh.push_back(LoRAPair::create(spec.task_id, site, w.size(0), w.size(1), spec.rank, rng));
    }
  }
  for (auto& p : fresh) model.adapters().push_back(p);
  model.adapter_grouping()[spec.task_id] = spec.grouping;
  model.set_freeze(FreezeSelector::lora_only);
  return make_groups(spec.task_id, fresh, spec.grouping);
}

/// Folds B A of every adapter of `task_id` into its base weight and drops the
/// adapters. Addition order matches effective_weight, so outputs agree.
inline void merge_task(MicroTransformer& model, int task_id) {
  require(has_unmerged(model, task_id), ErrorKind::conflict,
          "task " + std::to_string(task_id) + " has no unmerged adapters (already merged or never injected)");
  auto& adapters = model.adapters();
  for (const auto& p : adapters) {
    if (p.task_id != task_id) continue;
    Tensor w = model.site_weight(p.site);
    NoGradGuard guard;
    const Tensor delta = matmul(p.B, p.A);
    auto dst = w.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta.data()[i];
  }
  adapters.erase(std::remove_if(adapters.begin(), adapters.end(), [&](const LoRAPair& p) { return p.task_id == task_id; }),
                 adapters.end());
  model.adapter_grouping().erase(task_id);
  model.merged_tasks().push_back(task_id);
}

/// Trainable parameters over all parameters, including adapters.
inline double tunable_ratio(const MicroTransformer& model) {
  const auto total = model.parameter_count();
  return total == 0 ? 0.0 : static_cast<double>(model.trainable_parameter_count()) / static_cast<double>(total);
}

}  // namespace ffkit
