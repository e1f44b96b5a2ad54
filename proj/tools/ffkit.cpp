// Command-line front end: pretrain, forget, recover, report.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ffkit/cli.hpp"

namespace {

spdlog::level::level_enum level_from_env() {
  const char* env = std::getenv("FF_LOG_LEVEL");
  const std::string v = env ? env : "warn";
  if (v == "error") return spdlog::level::err;
  if (v == "info") return spdlog::level::info;
  if (v == "debug") return spdlog::level::debug;
  if (v != "warn") std::cerr << "FF_LOG_LEVEL='" << v << "' not recognised, using warn\n";
  return spdlog::level::warn;
}

void install_logger() {
  auto logger = spdlog::stderr_color_mt("ffkit");
  logger->set_level(level_from_env());
  logger->set_pattern("[%l] %v");
  ffkit::set_log_sink([logger](ffkit::LogLevel level, std::string_view msg) {
    switch (level) {
      case ffkit::LogLevel::error: logger->error(msg); break;
      case ffkit::LogLevel::warn: logger->warn(msg); break;
      case ffkit::LogLevel::info: logger->info(msg); break;
      case ffkit::LogLevel::debug: logger->debug(msg); break;
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  install_logger();
  CLI::App app{"ffkit: continual class forgetting with group-sparse LoRA"};
  app.require_subcommand(1);
  ffkit::cli::Options opt;
  std::string config, checkpoint, out;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::vector<std::string> dirs;

  auto* pre = app.add_subcommand("pretrain", "train a base model and write pretrained.ckpt");
  pre->add_option("--config", config, "run config (JSON)")->required();
  pre->add_option("--out", out, "output directory");
  pre->add_option("--seed", seed, "override the seed");
  pre->add_option("--epochs", epochs, "override pretraining epochs");

  auto* fgt = app.add_subcommand("forget", "run a forgetting scenario on a checkpoint");
  fgt->add_option("--config", config, "run config (JSON)")->required();
  fgt->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
  fgt->add_option("--out", out, "output directory");
  fgt->add_option("--seed", seed, "override the seed");

  auto* rec = app.add_subcommand("recover", "head-only recovery probe on a forgetting run");
  rec->add_option("--checkpoint", checkpoint, "final.ckpt of a forgetting run")->required();
  rec->add_option("--config", config, "config supplying recovery settings");
  rec->add_option("--out", out, "output directory");
  rec->add_option("--seed", seed, "probe seed");
  rec->add_option("--epochs", epochs, "recovery epochs");

  auto* rep = app.add_subcommand("report", "aggregate metrics.csv files across runs");
  rep->add_option("dirs", dirs, "run directories")->required();
  rep->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ffkit::cli::kExitUser;
  }

  opt.config = config;
  opt.checkpoint = checkpoint;
  opt.out = out;
  if (app.got_subcommand(pre) ? pre->count("--seed") : app.got_subcommand(fgt) ? fgt->count("--seed")
                                                       : rec->count("--seed"))
    opt.seed = seed;
  if ((app.got_subcommand(pre) && pre->count("--epochs")) || (app.got_subcommand(rec) && rec->count("--epochs")))
    opt.epochs = epochs;
  for (const auto& d : dirs) opt.dirs.emplace_back(d);

  int rc = ffkit::cli::kExitOk;
  if (app.got_subcommand(pre)) rc = ffkit::cli::cmd_pretrain(opt);
  if (app.got_subcommand(fgt)) rc = ffkit::cli::cmd_forget(opt);
  if (app.got_subcommand(rec)) rc = ffkit::cli::cmd_recover(opt);
  if (app.got_subcommand(rep)) rc = ffkit::cli::cmd_report(opt, std::cout);
  spdlog::shutdown();
  return rc;
}
