#ifndef KDTRAIN_ORCHESTRATOR_HPP
#define KDTRAIN_ORCHESTRATOR_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdtrain/dataset.hpp"
#include "kdtrain/distill.hpp"
#include "kdtrain/nncore.hpp"
#include "kdtrain/registry.hpp"

namespace kdtrain::orch {

// Unit-cost and wall-clock accounting constants. One plain training step
// costs 1 unit; a teacher forward pass costs forward_fraction of a step.
struct CostModel {
  double forward_fraction = 1.0 / 3.0;
  double base_epoch_seconds = 15.0;
  double per_teacher_epoch_seconds = 5.0;

  void validate() const;
};

struct RunRecord {
  registry::RunManifest manifest;
  std::vector<registry::MetricsRow> rows;
};

// Epochs-to-threshold for one run: epochs[i] is the first (1-indexed)
// epoch whose test accuracy reached thresholds[i], or absent.
struct ThresholdTable {
  std::vector<double> thresholds;
  std::vector<std::optional<std::size_t>> epochs;
};

// Shared context for a family of runs: the data split, the model shape,
// and where artifacts land. registry_dir may be empty to keep runs
// in memory only (used by tests).
struct RunEnv {
  data::Dataset train;
  data::Dataset test;
  std::vector<std::size_t> hidden_widths;
  std::filesystem::path registry_dir;
  CostModel cost_model;
};

struct DivergedRun : std::runtime_error {
  DivergedRun(std::string id, std::size_t at_epoch, const std::string& what)
      : std::runtime_error(what), run_id(std::move(id)), epoch(at_epoch) {}
  std::string run_id;
  std::size_t epoch;
};

struct SweepResult {
  struct Failure {
    std::string run_id;
    std::size_t epoch = 0;
    std::string message;
  };
  std::vector<RunRecord> records;
  std::vector<Failure> failures;
};

struct StudentResult {
  RunRecord aggregate;           // curve = mean over replicates per epoch
  std::vector<RunRecord> replicates;
};

// Fraction of examples whose argmax logit matches the label; ties break
// toward the lowest class index.
double evaluate_accuracy(const nn::ModelParams& params,
                         const data::Dataset& ds);

// [input width, hidden..., class count]; hidden widths doubled when wide.
std::vector<std::size_t> model_dims(const RunEnv& env, bool wide = false);

// One plain training run: fresh init, per-epoch test evaluation,
// checkpoint + metrics + manifest persisted. Throws DivergedRun if the
// loss goes non-finite.
RunRecord train_teacher(const RunEnv& env, const nn::SgdConfig& config,
                        const std::string& run_id);

// One teacher per learning rate, run ids B0..B(n-1), seeds base.seed + i.
// Diverged runs are recorded as failures; the rest complete.
SweepResult sweep(const RunEnv& env, const std::vector<double>& lrs,
                  const nn::SgdConfig& base);

// `replicates` students differing only in seed (config.seed + r), each
// trained under the policy against the ensemble. Replicate metrics and
// checkpoints are persisted per replicate; the aggregate manifest points
// at replicate 0's checkpoint.
StudentResult train_student(const RunEnv& env, const nn::SgdConfig& config,
                            const distill::TeacherEnsemble& ensemble,
                            const distill::DistillPolicy& policy,
                            std::size_t replicates, const std::string& run_id);

// Continue training from a stored teacher checkpoint, plain loss only.
// config.epochs == 0 is allowed and means "evaluate the starting weights
// without training".
RunRecord finetune_from(const RunEnv& env, const std::string& teacher_id,
                        const nn::SgdConfig& config, const std::string& run_id);

// Width-doubled model trained without distillation, accounted at 2x cost
// units per step.
RunRecord train_wide_baseline(const RunEnv& env, const nn::SgdConfig& config,
                              const std::string& run_id);

// 1 + forward_fraction * sample_k * (active epochs / total epochs).
// Overhead percent = (value - 1) * 100.
double relative_cost(const distill::DistillPolicy& policy,
                     std::size_t n_available, std::size_t total_epochs,
                     const CostModel& model);

// Sum over epochs of base_epoch_seconds + per_teacher_epoch_seconds * k,
// where k = sample_k on schedule-active epochs and 0 elsewhere.
double wall_estimate(const distill::DistillPolicy& policy,
                     std::size_t total_epochs, const CostModel& model);

// thresholds must be sorted ascending. First-touch semantics: a single
// epoch at or above the threshold counts even if accuracy later dips.
ThresholdTable epochs_to_accuracy(const RunRecord& record,
                                  const std::vector<double>& thresholds);

// Materialize frozen teachers from registry checkpoints, in id order given.
distill::TeacherEnsemble load_ensemble(
    const std::filesystem::path& registry_dir,
    const std::vector<std::string>& ids);

}  // namespace kdtrain::orch

#endif  // KDTRAIN_ORCHESTRATOR_HPP
