#ifndef KDTRAIN_CLI_HPP
#define KDTRAIN_CLI_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kdtrain/distill.hpp"
#include "kdtrain/nncore.hpp"
#include "kdtrain/orchestrator.hpp"

namespace kdtrain::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingRuns = 3;

struct DataConfig {
  std::string kind = "spirals";  // spirals | blobs | idx
  std::uint64_t seed = 1;
  std::size_t classes = 3;
  std::size_t per_class = 200;
  std::size_t test_per_class = 200;
  double noise_std = 0.1;  // spirals
  double spread = 0.6;     // blobs
  std::string train_images, train_labels, test_images, test_labels;  // idx
};

// Run configuration file: JSON sections
// {data, model, sgd, policy, replicates, registry_dir}. Missing fields
// fall back to these defaults; CLI flags override parsed values.
struct AppConfig {
  DataConfig data;
  std::vector<std::size_t> hidden = {64, 32};
  nn::SgdConfig sgd;
  std::optional<distill::DistillPolicy> policy;
  std::size_t replicates = 3;
  std::string registry_dir = "runs";
};

AppConfig load_config(const std::filesystem::path& path);

// Builds the train/test split and run context the config describes.
orch::RunEnv make_env(const AppConfig& config);

// Entry point behind main(). Returns the process exit code: 0 success,
// 1 verification failure, 2 usage/config error, 3 missing or failed runs.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace kdtrain::cli

#endif  // KDTRAIN_CLI_HPP
