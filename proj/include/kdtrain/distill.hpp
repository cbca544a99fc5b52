#ifndef KDTRAIN_DISTILL_HPP
#define KDTRAIN_DISTILL_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kdtrain/nncore.hpp"
#include "kdtrain/tensor.hpp"

namespace kdtrain::distill {

struct TeacherRef {
  std::string id;
  nn::ModelParams params;
};

// Ordered set of frozen teacher models sharing input/output dimensions.
struct TeacherEnsemble {
  std::vector<TeacherRef> members;

  std::size_t size() const { return members.size(); }
  // Throws std::invalid_argument on duplicate ids or incongruent dims.
  void validate() const;
};

enum class ScheduleKind {
  EveryEpoch,
  FirstK,
  MiddleK,
  LastK,
  FirstLastSplit,
  OnePerTen,
  TwoPerTwenty,
};

// Which epochs carry the distillation term. `budget` is the number of
// active epochs for the block-style kinds; the modular kinds (OnePerTen,
// TwoPerTwenty) derive their active count from the epoch total.
struct Schedule {
  ScheduleKind kind = ScheduleKind::EveryEpoch;
  std::size_t budget = 20;

  bool operator==(const Schedule&) const = default;
};

// Canonical names: every_epoch, first20, middle20, last20, first_last10,
// one_per_ten, two_per_twenty (block names embed the budget).
std::string schedule_name(const Schedule& s);
Schedule parse_schedule(const std::string& name);

struct DistillPolicy {
  Schedule schedule;
  std::size_t sample_k = 0;  // teachers per step; 0 disables distillation
  bool gate_on_correct = false;
  std::optional<std::vector<std::string>> teacher_subset;
};

// Per-example flags: true = keep the distillation term for that row.
using GateMask = std::vector<bool>;

// Elementwise arithmetic mean of the teachers' logits.
Tensor2 average_logits(const std::vector<Tensor2>& per_teacher);

// k distinct indices in [0, n), uniform without replacement. Advances the
// engine deterministically.
std::vector<std::size_t> sample_teachers(std::mt19937_64& rng, std::size_t n,
                                         std::size_t k);

bool schedule_active(const Schedule& s, std::size_t epoch,
                     std::size_t total_epochs);

// Number of epochs for which schedule_active holds over a full run.
std::size_t active_epoch_count(const Schedule& s, std::size_t total_epochs);

// mask[i] = (argmax of teacher row i equals y[i]); ties break toward the
// lowest class index.
GateMask gate_mask(const Tensor2& avg_teacher_logits, const nn::LabelBatch& y);

// Combined loss: cross-entropy to the labels plus mean-squared error of
// the student logits against the averaged teacher logits. Masked-out rows
// contribute nothing to the MSE term or its gradient while the B*C
// normalizer stays fixed. Without teacher logits this is plain CE.
nn::LossResult kd_batch_loss(const Tensor2& student_logits,
                             const nn::LabelBatch& y,
                             const Tensor2* avg_teacher_logits = nullptr,
                             const GateMask* mask = nullptr);

// Expected teacher forward passes over a whole run:
// active epochs x steps per epoch x sample_k.
std::uint64_t teacher_step_count(const DistillPolicy& policy,
                                 std::size_t n_teachers,
                                 std::size_t total_epochs,
                                 std::size_t steps_per_epoch);

// Seed for the per-step teacher draw. Keyed on (run seed, epoch, batch)
// so a run replays identically and non-distilling epochs consume nothing.
std::uint64_t sampling_seed(std::uint64_t run_seed, std::size_t epoch,
                            std::size_t batch_index);

}  // namespace kdtrain::distill

#endif  // KDTRAIN_DISTILL_HPP
