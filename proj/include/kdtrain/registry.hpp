#ifndef KDTRAIN_REGISTRY_HPP
#define KDTRAIN_REGISTRY_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdtrain/distill.hpp"
#include "kdtrain/nncore.hpp"

namespace kdtrain::registry {

enum class Role { Teacher, Student, Finetune, Baseline };

std::string role_name(Role role);
Role parse_role(const std::string& name);

struct CostSummary {
  double relative_cost = 1.0;
  double estimated_wall_seconds = 0.0;
  std::uint64_t teacher_forward_count = 0;
};

// Everything a later run needs to know about an earlier one.
struct RunManifest {
  std::string run_id;
  Role role = Role::Teacher;
  nn::SgdConfig config;
  std::optional<distill::DistillPolicy> policy;
  std::vector<std::string> parent_ids;
  std::vector<std::uint64_t> replicate_seeds;
  double final_test_accuracy = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;
  CostSummary cost;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointBadMagic final : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointBadVersion final : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncated final : CheckpointError {
  using CheckpointError::CheckpointError;
};

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DuplicateRunId final : ManifestError {
  using ManifestError::ManifestError;
};
struct NoTeachersFound final : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint layout (all integers little-endian):
//   "KDCK" | u32 version=1 | u32 layer count |
//   per layer: u32 in | u32 out | in*out f64 weights | out f64 biases
// Round trips are bit-exact so reloaded teachers reproduce logits exactly.
void save_checkpoint(const nn::ModelParams& params,
                     const std::filesystem::path& path);
nn::ModelParams load_checkpoint(const std::filesystem::path& path);

// Stores <run_id>.manifest.json via write-to-temp + rename. Refuses to
// overwrite an existing run_id.
void write_manifest(const RunManifest& m, const std::filesystem::path& dir);

// All parseable manifests in dir, sorted by run_id. A malformed manifest
// raises ManifestError naming the file.
std::vector<RunManifest> list_runs(const std::filesystem::path& dir);

// Teacher-role run with the highest final_test_accuracy (optionally
// restricted to candidate_ids); ties break toward the smallest run_id.
RunManifest best_teacher(
    const std::filesystem::path& dir,
    const std::optional<std::vector<std::string>>& candidate_ids = std::nullopt);

// Lowest final_test_accuracy counterpart of best_teacher.
RunManifest worst_teacher(
    const std::filesystem::path& dir,
    const std::optional<std::vector<std::string>>& candidate_ids = std::nullopt);

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,test_accuracy,lr,kd_active,teachers_used,"
    "cum_cost_units,cum_wall_seconds_est";

// One row per completed epoch. `epoch` is 1-indexed in the file, matching
// report output; in-memory loops elsewhere are 0-indexed.
struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
  int kd_active = 0;
  std::size_t teachers_used = 0;
  double cum_cost_units = 0.0;
  double cum_wall_seconds_est = 0.0;
};

void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const distill::DistillPolicy& p);
distill::DistillPolicy policy_from_json(const nlohmann::json& j);
nlohmann::json sgd_config_to_json(const nn::SgdConfig& c);
nn::SgdConfig sgd_config_from_json(const nlohmann::json& j);

}  // namespace kdtrain::registry

#endif  // KDTRAIN_REGISTRY_HPP
