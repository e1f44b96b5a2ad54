#pragma once

// Flat JSON run configuration. Every key is optional; unknown keys and type
// mismatches are reported as invalid-argument errors naming the key.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffkit/checkpoint.hpp"
#include "ffkit/data.hpp"
#include "ffkit/engine.hpp"
#include "ffkit/metrics.hpp"
#include "ffkit/model.hpp"
#include "ffkit/pretrain.hpp"

namespace ffkit {

struct RunConfig {
  std::string experiment = "run";
  std::vector<std::uint64_t> seeds{1};

  SyntheticSpec dataset{20, 32, 100, 6.0, 1.0, 1};
  ModelGeometry geometry;
  PretrainConfig pretrain;

  ScenarioSpec scenario{ScenarioKind::single, {{0, 1, 2, 3, 4}}, 0.1, 0, {}, 1};
  Method method = Method::gslora_pp;
  TaskConfig task;
  bool record_timing = false;
  bool save_task_checkpoints = false;
  std::string out_dir = "out";

  RecoveryConfig recovery;

  std::vector<double> sweep_alpha;
  std::vector<std::size_t> sweep_rank;
  std::vector<double> sweep_ratio;
  std::vector<std::size_t> sweep_shots;

  /// Keys present in the source file, so callers can tell defaults from
  /// explicit settings.
  std::set<std::string> explicit_keys;

  RunConfig() { task.loss = LossConfig::for_classes(dataset.classes); }
};

namespace detail {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "experiment",     "seed",           "seeds",          "classes",        "input_dim",
      "per_class",      "margin",         "noise",          "data_seed",      "tokens",
      "d_model",        "d_ff",           "heads",          "blocks",         "pretrain_epochs",
      "pretrain_batch", "pretrain_lr",    "pretrain_target", "scenario",      "forget_tasks",
      "ratio",          "shots",          "missing",        "method",         "iterations",
      "forget_batch",   "retain_batch",   "optimizer",      "lr",             "lr_schedule",
      "rank",           "grouping",       "sites",          "sparsity",       "alpha",
      "beta",           "gamma",          "bnd_data",       "bnd_pro",        "kl_direction",
      "zero_threshold", "record_timing",  "save_task_checkpoints", "out_dir", "recovery_epochs",
      "recovery_lr",    "recovery_batch", "sweep_alpha",    "sweep_rank",     "sweep_ratio",
      "sweep_shots"};
  return keys;
}

template <typename T>
T config_get(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::invalid_argument, "config key '" + key + "' has the wrong type: " + j.dump());
  }
}

}  // namespace detail

/// Builds a RunConfig from a parsed JSON object.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  require_arg(j.is_object(), "config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    require_arg(detail::known_config_keys().count(key) != 0, "unknown config key '" + key + "'");
    c.explicit_keys.insert(key);
  }
  using detail::config_get;
  auto has = [&](const char* k) { return j.contains(k); };
  auto str = [&](const char* k) { return config_get<std::string>(j.at(k), k); };
  auto num = [&](const char* k) { return config_get<double>(j.at(k), k); };
  auto cnt = [&](const char* k) { return config_get<std::size_t>(j.at(k), k); };
  auto flag = [&](const char* k) { return config_get<bool>(j.at(k), k); };

  if (has("experiment")) c.experiment = str("experiment");
  if (has("seed")) c.seeds = {config_get<std::uint64_t>(j.at("seed"), "seed")};
  if (has("seeds")) c.seeds = config_get<std::vector<std::uint64_t>>(j.at("seeds"), "seeds");
  require_arg(!c.seeds.empty(), "config: seeds must not be empty");
  require_arg(!(has("seed") && has("seeds")), "config: give either 'seed' or 'seeds', not both");

  if (has("classes")) c.dataset.classes = cnt("classes");
  if (has("input_dim")) c.dataset.dim = cnt("input_dim");
  if (has("per_class")) c.dataset.per_class = cnt("per_class");
  if (has("margin")) c.dataset.margin = num("margin");
  if (has("noise")) c.dataset.noise = num("noise");
  c.dataset.seed = has("data_seed") ? config_get<std::uint64_t>(j.at("data_seed"), "data_seed") : c.seeds.front();
  c.geometry.classes = c.dataset.classes;
  c.geometry.input_dim = c.dataset.dim;
  if (has("tokens")) c.geometry.tokens = cnt("tokens");
  if (has("d_model")) c.geometry.d_model = cnt("d_model");
  if (has("d_ff")) c.geometry.d_ff = cnt("d_ff");
  if (has("heads")) c.geometry.heads = cnt("heads");
  if (has("blocks")) c.geometry.blocks = cnt("blocks");
  c.geometry.validate();

  if (has("pretrain_epochs")) c.pretrain.epochs = cnt("pretrain_epochs");
  if (has("pretrain_batch")) c.pretrain.batch_size = cnt("pretrain_batch");
  if (has("pretrain_lr")) c.pretrain.optimizer.learning_rate = num("pretrain_lr");
  if (has("pretrain_target")) c.pretrain.target_train_accuracy = num("pretrain_target");

  if (has("scenario")) c.scenario.kind = parse_scenario_kind(str("scenario"));
  if (has("forget_tasks"))
    c.scenario.forget_tasks = config_get<std::vector<std::vector<std::size_t>>>(j.at("forget_tasks"), "forget_tasks");
  if (has("ratio")) c.scenario.ratio = num("ratio");
  if (has("shots")) c.scenario.shots = cnt("shots");
  if (has("missing")) c.scenario.missing = config_get<std::vector<std::size_t>>(j.at("missing"), "missing");

  if (has("method")) c.method = parse_method(str("method"));
  c.task.loss = LossConfig::for_classes(c.dataset.classes);
  if (has("iterations")) c.task.iterations = cnt("iterations");
  if (has("forget_batch")) c.task.forget_batch = cnt("forget_batch");
  if (has("retain_batch")) c.task.retain_batch = cnt("retain_batch");
  if (has("optimizer")) {
    const auto o = str("optimizer");
    require_arg(o == "adam" || o == "sgd", "config: optimizer must be 'adam' or 'sgd'");
    c.task.optimizer.kind = o == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  }
  if (has("lr")) c.task.optimizer.learning_rate = num("lr");
  if (has("lr_schedule")) c.task.lr_schedule = parse_lr_schedule(str("lr_schedule"));
  if (has("rank")) c.task.rank = cnt("rank");
  if (has("grouping")) c.task.grouping = parse_grouping(str("grouping"));
  if (has("sites")) {
    c.task.sites.clear();
    for (const auto& s : config_get<std::vector<std::string>>(j.at("sites"), "sites"))
      c.task.sites.push_back(parse_site_kind(s));
  }
  if (has("sparsity")) c.task.sparsity = parse_sparsity_mode(str("sparsity"));
  if (has("alpha")) c.task.loss.alpha = num("alpha");
  if (has("beta")) c.task.loss.beta = num("beta");
  if (has("gamma")) c.task.loss.gamma = num("gamma");
  if (has("bnd_data")) c.task.loss.bnd_data = num("bnd_data");
  if (has("bnd_pro")) c.task.loss.bnd_pro = num("bnd_pro");
  if (has("kl_direction")) {
    const auto k = str("kl_direction");
    require_arg(k == "prototype_first" || k == "logits_first",
                "config: kl_direction must be 'prototype_first' or 'logits_first'");
    c.task.loss.kl_direction = k == "prototype_first" ? KlDirection::prototype_first : KlDirection::logits_first;
  }
  if (has("zero_threshold")) c.task.zero_threshold = num("zero_threshold");
  if (has("record_timing")) c.record_timing = flag("record_timing");
  if (has("save_task_checkpoints")) c.save_task_checkpoints = flag("save_task_checkpoints");
  if (has("out_dir")) c.out_dir = str("out_dir");

  if (has("recovery_epochs")) c.recovery.epochs = cnt("recovery_epochs");
  if (has("recovery_lr")) c.recovery.optimizer.learning_rate = num("recovery_lr");
  if (has("recovery_batch")) c.recovery.batch_size = cnt("recovery_batch");

  if (has("sweep_alpha")) c.sweep_alpha = config_get<std::vector<double>>(j.at("sweep_alpha"), "sweep_alpha");
  if (has("sweep_rank")) c.sweep_rank = config_get<std::vector<std::size_t>>(j.at("sweep_rank"), "sweep_rank");
  if (has("sweep_ratio")) c.sweep_ratio = config_get<std::vector<double>>(j.at("sweep_ratio"), "sweep_ratio");
  if (has("sweep_shots")) c.sweep_shots = config_get<std::vector<std::size_t>>(j.at("sweep_shots"), "sweep_shots");

  c.task.validate();
  validate_scenario_spec(c.scenario, c.dataset.classes);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::io, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const Error& e) {
    throw Error(e.kind(), "config '" + path.string() + "': " + e.message());
  }
}

}  // namespace ffkit
