#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

#include "msmmt/app/commands.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("msmmt");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("MSMMT_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Multi-scale multi-modal micro-expression recognition pipeline"};
  app.require_subcommand(1);

  msmmt::app::CommandOptions options;
  std::string out = "out";
  int workers = 0;
  std::uint64_t seed = 0;
  std::string fold;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", options.config, "run configuration JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory")->capture_default_str();
    sub->add_option("--workers", workers, "parallel workers")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "overrides train.seed");
  };
  for (const char* name : {"gen-synth", "preprocess", "features", "train"}) {
    add_common(app.add_subcommand(name));
  }
  app.get_subcommand("gen-synth")->description("write the synthetic dataset and its manifest");
  app.get_subcommand("preprocess")->description("align, crop and magnify clips");
  app.get_subcommand("features")->description("compute or reuse cached dynamic and flow-OS images");
  app.get_subcommand("train")->description("train on every sample and save a checkpoint");
  auto* loso = app.add_subcommand("loso", "leave-one-subject-out evaluation");
  add_common(loso);
  loso->add_flag("--alpha-sweep", options.alpha_sweep, "also sweep the loss weight alpha");
  loso->add_option("--fold", fold, "run only the fold holding out this subject");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : msmmt::app::kExitValidation;
  }

  CLI::App* sub = app.get_subcommands().front();
  options.out = out;
  if (sub->count("--workers")) options.workers = workers;
  if (sub->count("--seed")) options.seed = seed;
  if (sub->get_name() == "loso" && sub->count("--fold")) options.fold = fold;
  return msmmt::app::run_command(sub->get_name(), options);
}
