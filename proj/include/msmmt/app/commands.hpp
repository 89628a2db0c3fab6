#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msmmt/app/run_config.hpp"
#include "msmmt/eval/dataset.hpp"

namespace msmmt::app {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitPartial = 2, kExitInternal = 3 };

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out = "out";
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  bool alpha_sweep = false;
  std::optional<std::string> fold;
};

/// Runs gen-synth, preprocess, features, train or loso and maps failures to
/// exit codes.
int run_command(const std::string& command, const CommandOptions& options);

struct FeatureStats {
  std::size_t computed = 0;
  std::size_t cached = 0;
  std::size_t failed = 0;
};

/// SHA-256 hex digest.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

int cmd_gen_synth(const RunConfig& config, const std::filesystem::path& out);
int cmd_preprocess(const RunConfig& config, const std::filesystem::path& out);
int cmd_features(const RunConfig& config, const std::filesystem::path& out, FeatureStats* stats = nullptr);
int cmd_train(const RunConfig& config, const std::filesystem::path& out);
int cmd_loso(const RunConfig& config, const std::filesystem::path& out, bool alpha_sweep,
             const std::optional<std::string>& fold);

}  // namespace msmmt::app
