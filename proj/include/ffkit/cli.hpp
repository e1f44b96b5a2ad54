#pragma once

// Subcommands behind the ffkit executable. Each returns a process exit code:
// 0 success, 2 user or configuration error, 3 internal invariant violation.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffkit/checkpoint.hpp"
#include "ffkit/config.hpp"
#include "ffkit/engine.hpp"
#include "ffkit/log.hpp"
#include "ffkit/metrics.hpp"
#include "ffkit/pretrain.hpp"

namespace ffkit::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 2;
inline constexpr int kExitInvariant = 3;
inline constexpr int kSchemaVersion = 1;

inline constexpr const char* kMetricsHeader =
    "schema_version,task_id,method,seed,acc_r,acc_f,acc_o,acc_m,h_mean,zero_group_ratio,tunable_ratio,wall_ms";

struct Options {
  fs::path config;
  fs::path checkpoint;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::vector<fs::path> dirs;
};

inline int exit_code_for(const Error& e) { return e.kind() == ErrorKind::invariant ? kExitInvariant : kExitUser; }

/// Runs `body`, mapping exceptions to exit codes and logging them.
template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    log_message(LogLevel::error, e.what());
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    log_message(LogLevel::error, std::string("io: ") + e.what());
    return kExitUser;
  } catch (const std::exception& e) {
    log_message(LogLevel::error, std::string("internal: ") + e.what());
    return kExitInvariant;
  }
}

// ---------------------------------------------------------------------------
// Formatting and files

inline std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, int digits) { return v ? fmt_fixed(*v, digits) : ""; }

/// Shortest round-trip text for a double, used in directory names and JSON.
inline std::string fmt_short(double v) {
  char buf[64];
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write '" + path.string() + "'");
  os << text;
  require(static_cast<bool>(os), ErrorKind::io, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string metrics_csv(const std::vector<MetricRecord>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(kSchemaVersion) + "," + std::to_string(r.task_id) + "," + r.method + "," +
           std::to_string(r.seed) + "," + fmt_fixed(r.acc_r, 4) + "," + fmt_fixed(r.acc_f, 4) + "," +
           fmt_opt(r.acc_o, 4) + "," + fmt_opt(r.acc_m, 4) + "," + fmt_fixed(r.h_mean, 4) + "," +
           fmt_fixed(r.zero_group_ratio, 6) + "," + fmt_fixed(r.tunable_ratio, 6) + "," + fmt_opt(r.wall_ms, 1) + "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

inline double parse_number(const std::string& s, const std::string& where) {
  require(!s.empty(), ErrorKind::io, where + ": empty numeric cell");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && std::isfinite(v), ErrorKind::io, where + ": '" + s + "' is not a finite number");
  return v;
}

}  // namespace detail

/// Parses a metrics file written by metrics_csv. Errors name the file and row.
inline std::vector<MetricRecord> read_metrics_csv(const fs::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), ErrorKind::io, "'" + path.string() + "': empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kMetricsHeader, ErrorKind::io, "'" + path.string() + "' row 1: unexpected header");
  std::vector<MetricRecord> rows;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string where = "'" + path.string() + "' row " + std::to_string(row);
    const auto c = detail::split_csv_line(line);
    require(c.size() == 12, ErrorKind::io, where + ": expected 12 columns, found " + std::to_string(c.size()));
    require(c[0] == std::to_string(kSchemaVersion), ErrorKind::io, where + ": unsupported schema version '" + c[0] + "'");
    MetricRecord r;
    r.task_id = static_cast<int>(detail::parse_number(c[1], where));
    r.method = c[2];
    r.seed = static_cast<std::uint64_t>(detail::parse_number(c[3], where));
    r.acc_r = detail::parse_number(c[4], where);
    r.acc_f = detail::parse_number(c[5], where);
    if (!c[6].empty()) r.acc_o = detail::parse_number(c[6], where);
    if (!c[7].empty()) r.acc_m = detail::parse_number(c[7], where);
    r.h_mean = detail::parse_number(c[8], where);
    r.zero_group_ratio = detail::parse_number(c[9], where);
    r.tunable_ratio = detail::parse_number(c[10], where);
    if (!c[11].empty()) r.wall_ms = detail::parse_number(c[11], where);
    require(r.valid(), ErrorKind::io, where + ": value out of range");
    rows.push_back(r);
  }
  return rows;
}

inline std::string loss_log_csv(const std::vector<TaskResult>& tasks) {
  std::string out =
      "task_id,iteration,retain,forget,pro_retain,pro_forget,structure,w_retain,w_forget,w_pro_retain,w_pro_forget,"
      "w_structure,total\n";
  for (const auto& t : tasks) {
    for (const auto& it : t.log) {
      const auto& b = it.loss;
      out += std::to_string(it.task_id) + "," + std::to_string(it.iteration);
      for (double v : {b.retain, b.forget, b.pro_retain, b.pro_forget, b.structure, b.w_retain, b.w_forget,
                       b.w_pro_retain, b.w_pro_forget, b.w_structure, b.total})
        out += "," + fmt_fixed(v, 9);
      out += "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// pretrain

inline RunConfig load_config_for(const Options& opt) {
  require(!opt.config.empty(), ErrorKind::invalid_argument, "--config is required");
  RunConfig cfg = load_run_config(opt.config);
  if (opt.seed) {
    cfg.seeds = {*opt.seed};
    if (!cfg.explicit_keys.count("data_seed")) cfg.dataset.seed = *opt.seed;
  }
  return cfg;
}

inline fs::path out_dir_for(const Options& opt, const RunConfig& cfg) {
  return opt.out.empty() ? fs::path(cfg.out_dir) : opt.out;
}

inline int cmd_pretrain(const Options& opt) {
  return guarded([&] {
    RunConfig cfg = load_config_for(opt);
    if (opt.epochs) cfg.pretrain.epochs = *opt.epochs;
    const auto seed = cfg.seeds.front();
    const fs::path out = out_dir_for(opt, cfg);
    fs::create_directories(out);

    const auto data = generate_synthetic(cfg.dataset);
    MicroTransformer model(cfg.geometry, seed);
    PretrainConfig pc = cfg.pretrain;
    pc.seed = seed;
    log_info("pretraining seed " + std::to_string(seed) + " on " + std::to_string(data.train.size()) + " samples");
    const auto log = pretrain(model, data.train, pc);
    if (!log.warning.empty()) log_warn(log.warning);

    const double train_acc = log.epochs.empty() ? accuracy(model, data.train) : 100.0 * log.epochs.back().train_accuracy;
    const double test_acc = accuracy(model, data.test);
    nlohmann::json meta{{"experiment", cfg.experiment},
                        {"dataset", synthetic_to_json(cfg.dataset)},
                        {"train_accuracy", train_acc},
                        {"test_accuracy", test_acc},
                        {"epochs_run", log.epochs.size()},
                        {"reached_target", log.reached_target}};
    save_checkpoint(model, out / "pretrained.ckpt", meta);

    std::string csv = "epoch,mean_loss,train_accuracy\n";
    for (const auto& e : log.epochs)
      csv += std::to_string(e.epoch) + "," + fmt_fixed(e.mean_loss, 9) + "," + fmt_fixed(100.0 * e.train_accuracy, 4) + "\n";
    write_text(out / "pretrain_log.csv", csv);

    nlohmann::json manifest{{"checkpoint", "pretrained.ckpt"},
                            {"geometry", geometry_to_json(cfg.geometry)},
                            {"seed", seed},
                            {"checksum", ffkit::detail::hex64(model.checksum())},
                            {"parameters", model.parameter_count()},
                            {"warning", log.warning},
                            {"metadata", meta}};
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    log_info("pretrained: train " + fmt_fixed(train_acc, 2) + "%, test " + fmt_fixed(test_acc, 2) + "%");
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// forget

struct RunPoint {
  std::uint64_t seed = 1;
  std::optional<double> alpha;
  std::optional<std::size_t> rank;
  std::optional<double> ratio;
  std::optional<std::size_t> shots;

  [[nodiscard]] std::string dir_name(bool with_seed) const {
    std::string n;
    auto add = [&](const std::string& part) { n += (n.empty() ? "" : "_") + part; };
    if (with_seed) add("seed" + std::to_string(seed));
    if (alpha) add("alpha" + fmt_short(*alpha));
    if (rank) add("rank" + std::to_string(*rank));
    if (ratio) add("ratio" + fmt_short(*ratio));
    if (shots) add("shots" + std::to_string(*shots));
    return n;
  }
};

/// Cartesian product of seeds and sweep lists, in a fixed order.
inline std::vector<RunPoint> expand_runs(const RunConfig& cfg) {
  std::vector<RunPoint> runs;
  auto opt_list = [](const auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    std::vector<std::optional<T>> out;
    if (v.empty()) out.push_back(std::nullopt);
    for (const auto& x : v) out.push_back(x);
    return out;
  };
  for (auto seed : cfg.seeds)
    for (auto a : opt_list(cfg.sweep_alpha))
      for (auto r : opt_list(cfg.sweep_rank))
        for (auto q : opt_list(cfg.sweep_ratio))
          for (auto k : opt_list(cfg.sweep_shots)) runs.push_back({seed, a, r, q, k});
  return runs;
}

namespace detail {

/// Rejects configs whose explicit geometry or dataset keys disagree with the
/// checkpoint.
inline void check_against_checkpoint(const RunConfig& cfg, const ModelGeometry& g, const SyntheticSpec& ds) {
  auto check = [&](const char* key, double cfg_value, double ck_value) {
    if (cfg.explicit_keys.count(key) && cfg_value != ck_value)
      throw Error(ErrorKind::invalid_argument, std::string("geometry mismatch: config ") + key + "=" +
                                                   fmt_short(cfg_value) + " but checkpoint has " + fmt_short(ck_value));
  };
  check("classes", static_cast<double>(cfg.geometry.classes), static_cast<double>(g.classes));
  check("input_dim", static_cast<double>(cfg.geometry.input_dim), static_cast<double>(g.input_dim));
  check("tokens", static_cast<double>(cfg.geometry.tokens), static_cast<double>(g.tokens));
  check("d_model", static_cast<double>(cfg.geometry.d_model), static_cast<double>(g.d_model));
  check("d_ff", static_cast<double>(cfg.geometry.d_ff), static_cast<double>(g.d_ff));
  check("heads", static_cast<double>(cfg.geometry.heads), static_cast<double>(g.heads));
  check("blocks", static_cast<double>(cfg.geometry.blocks), static_cast<double>(g.blocks));
  check("per_class", static_cast<double>(cfg.dataset.per_class), static_cast<double>(ds.per_class));
  check("margin", cfg.dataset.margin, ds.margin);
  check("noise", cfg.dataset.noise, ds.noise);
  check("data_seed", static_cast<double>(cfg.dataset.seed), static_cast<double>(ds.seed));
}

}  // namespace detail

inline int cmd_forget(const Options& opt) {
  return guarded([&] {
    RunConfig cfg = load_config_for(opt);
    require(!opt.checkpoint.empty(), ErrorKind::invalid_argument, "--checkpoint is required");
    const Checkpoint ck = load_checkpoint(opt.checkpoint);
    require(ck.model.adapters().empty(), ErrorKind::invalid_argument,
            "checkpoint '" + opt.checkpoint.string() + "' still holds unmerged adapters");
    require(ck.metadata.contains("dataset"), ErrorKind::invalid_argument,
            "checkpoint '" + opt.checkpoint.string() + "' does not record its dataset");
    const SyntheticSpec ds = synthetic_from_json(ck.metadata.at("dataset"));
    detail::check_against_checkpoint(cfg, ck.model.geometry(), ds);
    validate_scenario_spec(cfg.scenario, ck.model.geometry().classes);

    const auto data = generate_synthetic(ds);
    const fs::path out = out_dir_for(opt, cfg);
    const auto runs = expand_runs(cfg);
    const bool nested = runs.size() > 1;
    const bool seed_in_name = cfg.seeds.size() > 1;
    std::vector<std::size_t> all_forgotten;
    for (const auto& t : cfg.scenario.forget_tasks) all_forgotten.insert(all_forgotten.end(), t.begin(), t.end());

    for (const auto& run : runs) {
      const fs::path dir = nested ? out / run.dir_name(seed_in_name) : out;
      fs::create_directories(dir);
      ScenarioSpec spec = cfg.scenario;
      spec.seed = run.seed;
      if (run.ratio) spec.ratio = *run.ratio;
      if (run.shots) {
        spec.shots = *run.shots;
        if (spec.kind == ScenarioKind::single) spec.kind = ScenarioKind::few_shot;
      }
      const auto scenario = build_scenario(data.train, spec);

      SequenceConfig sc;
      sc.method = cfg.method;
      sc.task = cfg.task;
      sc.task.seed = run.seed;
      if (run.alpha) sc.task.loss.alpha = *run.alpha;
      if (run.rank) sc.task.rank = *run.rank;
      sc.record_timing = cfg.record_timing;
      if (cfg.save_task_checkpoints) {
        sc.on_task_end = [&](int t, const MicroTransformer& m) {
          save_checkpoint(m, dir / ("task" + std::to_string(t) + ".ckpt"),
                          {{"dataset", synthetic_to_json(ds)}, {"task_id", t}});
        };
      }
      log_info("forgetting run '" + dir.string() + "' method " + std::string(to_string(cfg.method)));
      const auto result = run_sequence(ck.model, scenario, data.test, sc);

      write_text(dir / "metrics.csv", metrics_csv(result.metrics));
      write_text(dir / "loss_log.csv", loss_log_csv(result.tasks));
      nlohmann::json run_info{{"schema_version", kSchemaVersion},
                              {"experiment", cfg.experiment},
                              {"method", std::string(to_string(cfg.method))},
                              {"scenario", std::string(to_string(spec.kind))},
                              {"seed", run.seed},
                              {"alpha", sc.task.loss.alpha},
                              {"rank", sc.task.rank},
                              {"ratio", spec.ratio},
                              {"shots", spec.shots},
                              {"forget_tasks", spec.forget_tasks},
                              {"missing", spec.missing},
                              {"iterations", sc.task.iterations},
                              {"acc_r_before", result.acc_r_before},
                              {"acc_f_before", result.acc_f_before}};
      write_text(dir / "run.json", run_info.dump(2) + "\n");
      save_checkpoint(result.model, dir / "final.ckpt",
                      {{"dataset", synthetic_to_json(ds)},
                       {"forgotten", all_forgotten},
                       {"method", std::string(to_string(cfg.method))},
                       {"source_checkpoint", fs::absolute(opt.checkpoint).lexically_normal().string()}});
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// recover

inline int cmd_recover(const Options& opt) {
  return guarded([&] {
    require(!opt.checkpoint.empty(), ErrorKind::invalid_argument, "--checkpoint is required");
    RecoveryConfig rc;
    if (!opt.config.empty()) rc = load_run_config(opt.config).recovery;
    if (opt.epochs) rc.epochs = *opt.epochs;
    if (opt.seed) rc.seed = *opt.seed;
    const Checkpoint ck = load_checkpoint(opt.checkpoint);
    const std::string where = "checkpoint '" + opt.checkpoint.string() + "'";
    require(ck.metadata.contains("forgotten") && ck.metadata.contains("source_checkpoint") &&
                ck.metadata.contains("dataset"),
            ErrorKind::invalid_argument, where + " is not the output of a forgetting run");
    const auto forgotten = ck.metadata.at("forgotten").get<std::vector<std::size_t>>();
    const Checkpoint source = load_checkpoint(ck.metadata.at("source_checkpoint").get<std::string>());
    const auto data = generate_synthetic(synthetic_from_json(ck.metadata.at("dataset")));
    const auto result = recovery_probe(ck.model, source.model, data.train, data.test, forgotten, rc);

    const fs::path out = opt.out.empty() ? opt.checkpoint.parent_path() / "recovery" : opt.out;
    std::string csv = "epoch,subject_forgotten,subject_retained,comparator_forgotten,comparator_retained\n";
    for (std::size_t e = 0; e < result.subject.forgotten.size(); ++e) {
      csv += std::to_string(e) + "," + fmt_fixed(result.subject.forgotten[e], 4) + "," +
             fmt_fixed(result.subject.retained[e], 4) + "," + fmt_fixed(result.comparator.forgotten[e], 4) + "," +
             fmt_fixed(result.comparator.retained[e], 4) + "\n";
    }
    write_text(out / "recovery.csv", csv);
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string method;
  std::string scenario;
  int task_id = 0;
  std::vector<MetricRecord> records;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one seed
  std::size_t count = 0;
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.count = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// Groups metric rows from run directories by (method, scenario, task).
/// Methods keep their first-seen order; tasks ascend within a group.
inline std::vector<ReportRow> collect_report(const std::vector<fs::path>& dirs) {
  require(!dirs.empty(), ErrorKind::invalid_argument, "report: no run directories given");
  std::vector<ReportRow> rows;
  std::vector<std::string> method_order;
  for (const auto& dir : dirs) {
    const fs::path metrics = dir / "metrics.csv";
    require(fs::exists(metrics), ErrorKind::io, "report: '" + metrics.string() + "' not found");
    std::string scenario = "unknown";
    if (fs::exists(dir / "run.json")) {
      try {
        scenario = nlohmann::json::parse(read_text(dir / "run.json")).value("scenario", "unknown");
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::io, "report: '" + (dir / "run.json").string() + "' is malformed: " + e.what());
      }
    }
    for (const auto& rec : read_metrics_csv(metrics)) {
      if (std::find(method_order.begin(), method_order.end(), rec.method) == method_order.end())
        method_order.push_back(rec.method);
      auto it = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& r) {
        return r.method == rec.method && r.scenario == scenario && r.task_id == rec.task_id;
      });
      if (it == rows.end()) {
        rows.push_back({rec.method, scenario, rec.task_id, {}});
        it = rows.end() - 1;
      }
      it->records.push_back(rec);
    }
  }
  auto rank = [&](const std::string& m) {
    return std::find(method_order.begin(), method_order.end(), m) - method_order.begin();
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    if (rank(a.method) != rank(b.method)) return rank(a.method) < rank(b.method);
    if (a.scenario != b.scenario) return a.scenario < b.scenario;
    return a.task_id < b.task_id;
  });
  return rows;
}

inline const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> names{"acc_r", "acc_f", "acc_o", "acc_m", "h_mean", "zero_group_ratio",
                                              "tunable_ratio"};
  return names;
}

inline std::vector<double> metric_values(const ReportRow& row, const std::string& name) {
  std::vector<double> v;
  for (const auto& r : row.records) {
    if (name == "acc_r") v.push_back(r.acc_r);
    if (name == "acc_f") v.push_back(r.acc_f);
    if (name == "acc_o" && r.acc_o) v.push_back(*r.acc_o);
    if (name == "acc_m" && r.acc_m) v.push_back(*r.acc_m);
    if (name == "h_mean") v.push_back(r.h_mean);
    if (name == "zero_group_ratio") v.push_back(r.zero_group_ratio);
    if (name == "tunable_ratio") v.push_back(r.tunable_ratio);
  }
  return v;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,scenario,task_id,seeds";
  for (const auto& m : report_metrics()) out += "," + m + "_mean," + m + "_std";
  out += "\n";
  for (const auto& row : rows) {
    out += row.method + "," + row.scenario + "," + std::to_string(row.task_id) + "," +
           std::to_string(row.records.size());
    for (const auto& m : report_metrics()) {
      const auto s = summarize(metric_values(row, m));
      const int digits = m.find("ratio") != std::string::npos ? 6 : 4;
      out += s.count ? "," + fmt_fixed(s.mean, digits) + "," + fmt_fixed(s.stddev, digits) : ",,";
    }
    out += "\n";
  }
  return out;
}

/// Fixed-width rendering with mean ± std cells.
inline std::string report_text(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"method", "scenario", "task", "seeds"};
  for (const auto& m : report_metrics()) header.push_back(m);
  table.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{row.method, row.scenario, std::to_string(row.task_id),
                                  std::to_string(row.records.size())};
    for (const auto& m : report_metrics()) {
      const auto s = summarize(metric_values(row, m));
      const int digits = m.find("ratio") != std::string::npos ? 3 : 2;
      line.push_back(s.count ? fmt_fixed(s.mean, digits) + " ± " + fmt_fixed(s.stddev, digits) : "-");
    }
    table.push_back(line);
  }
  // Width in code points so the "±" sign does not skew alignment.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t i = 0; i < line.size(); ++i) w[i] = std::max(w[i], width(line[i]));
  std::string out;
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += std::string(w[i] - width(line[i]) + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

inline int cmd_report(const Options& opt, std::ostream& console) {
  return guarded([&] {
    const auto rows = collect_report(opt.dirs);
    const fs::path out = opt.out.empty() ? fs::path(".") : opt.out;
    write_text(out / "report.csv", report_csv(rows));
    const auto text = report_text(rows);
    write_text(out / "report.txt", text);
    console << text;
    return kExitOk;
  });
}

}  // namespace ffkit::cli
