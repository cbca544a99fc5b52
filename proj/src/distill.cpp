#include "kdtrain/distill.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "kdtrain/rng.hpp"

namespace kdtrain::distill {

namespace {

constexpr std::uint64_t kSamplingStream = 0x7343a2c4f1d2b96bull;

std::string block_name(const char* prefix, std::size_t budget) {
  return std::string(prefix) + std::to_string(budget);
}

}  // namespace

void TeacherEnsemble::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& m : members) {
    if (!seen.insert(m.id).second) {
      throw std::invalid_argument("TeacherEnsemble: duplicate teacher id " +
                                  m.id);
    }
    if (m.params.layers.empty()) {
      throw std::invalid_argument("TeacherEnsemble: teacher " + m.id +
                                  " has no layers");
    }
    if (m.params.input_width() != members.front().params.input_width() ||
        m.params.output_width() != members.front().params.output_width()) {
      throw std::invalid_argument(
          "TeacherEnsemble: teacher " + m.id +
          " input/output widths differ from the first member");
    }
  }
}

std::string schedule_name(const Schedule& s) {
  switch (s.kind) {
    case ScheduleKind::EveryEpoch:
      return "every_epoch";
    case ScheduleKind::FirstK:
      return block_name("first", s.budget);
    case ScheduleKind::MiddleK:
      return block_name("middle", s.budget);
    case ScheduleKind::LastK:
      return block_name("last", s.budget);
    case ScheduleKind::FirstLastSplit:
      return block_name("first_last", s.budget / 2);
    case ScheduleKind::OnePerTen:
      return "one_per_ten";
    case ScheduleKind::TwoPerTwenty:
      return "two_per_twenty";
  }
  throw std::logic_error("schedule_name: unknown kind");
}

Schedule parse_schedule(const std::string& name) {
  auto parse_block = [&](const std::string& prefix,
                         ScheduleKind kind) -> std::optional<Schedule> {
    if (name.rfind(prefix, 0) != 0) return std::nullopt;
    const std::string digits = name.substr(prefix.size());
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos) {
      return std::nullopt;
    }
    std::size_t budget = std::stoull(digits);
    if (kind == ScheduleKind::FirstLastSplit) budget *= 2;
    if (budget == 0) {
      throw std::invalid_argument("parse_schedule: zero budget in " + name);
    }
    return Schedule{kind, budget};
  };

  if (name == "every_epoch") return Schedule{ScheduleKind::EveryEpoch, 20};
  if (name == "one_per_ten") return Schedule{ScheduleKind::OnePerTen, 20};
  if (name == "two_per_twenty") return Schedule{ScheduleKind::TwoPerTwenty, 20};
  // first_last must be tried before first: the prefixes overlap.
  if (auto s = parse_block("first_last", ScheduleKind::FirstLastSplit)) return *s;
  if (auto s = parse_block("first", ScheduleKind::FirstK)) return *s;
  if (auto s = parse_block("middle", ScheduleKind::MiddleK)) return *s;
  if (auto s = parse_block("last", ScheduleKind::LastK)) return *s;
  throw std::invalid_argument("parse_schedule: unknown schedule name \"" +
                              name + "\"");
}

Tensor2 average_logits(const std::vector<Tensor2>& per_teacher) {
  if (per_teacher.empty()) {
    throw std::invalid_argument("average_logits: empty teacher list");
  }
  Tensor2 mean = per_teacher.front();
  for (std::size_t t = 1; t < per_teacher.size(); ++t) {
    if (!per_teacher[t].same_shape(mean)) {
      throw std::invalid_argument("average_logits: shape mismatch at entry " +
                                  std::to_string(t));
    }
    for (std::size_t i = 0; i < mean.values.size(); ++i) {
      mean.values[i] += per_teacher[t].values[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(per_teacher.size());
  for (double& v : mean.values) v *= inv;
  return mean;
}

std::vector<std::size_t> sample_teachers(std::mt19937_64& rng, std::size_t n,
                                         std::size_t k) {
  if (k > n) {
    throw std::invalid_argument("sample_teachers: k=" + std::to_string(k) +
                                " exceeds n=" + std::to_string(n));
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots end up uniform without
  // replacement.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

bool schedule_active(const Schedule& s, std::size_t epoch,
                     std::size_t total_epochs) {
  if (epoch >= total_epochs) {
    throw std::out_of_range("schedule_active: epoch out of range");
  }
  if (s.budget > total_epochs) {
    throw std::invalid_argument("schedule_active: budget exceeds epoch count");
  }
  const std::size_t e = total_epochs;
  const std::size_t b = s.budget;
  switch (s.kind) {
    case ScheduleKind::EveryEpoch:
      return true;
    case ScheduleKind::FirstK:
      return epoch < b;
    case ScheduleKind::MiddleK: {
      const std::size_t start = (e - b) / 2;
      return epoch >= start && epoch < start + b;
    }
    case ScheduleKind::LastK:
      return epoch >= e - b;
    case ScheduleKind::FirstLastSplit:
      return epoch < b / 2 || epoch >= e - b / 2;
    case ScheduleKind::OnePerTen:
      return epoch % 10 == 0;
    case ScheduleKind::TwoPerTwenty:
      return epoch % 20 <= 1;
  }
  throw std::logic_error("schedule_active: unknown kind");
}

std::size_t active_epoch_count(const Schedule& s, std::size_t total_epochs) {
  std::size_t count = 0;
  for (std::size_t e = 0; e < total_epochs; ++e) {
    if (schedule_active(s, e, total_epochs)) ++count;
  }
  return count;
}

GateMask gate_mask(const Tensor2& avg_teacher_logits, const nn::LabelBatch& y) {
  if (avg_teacher_logits.rows != y.size()) {
    throw std::invalid_argument("gate_mask: batch size mismatch");
  }
  GateMask mask(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < avg_teacher_logits.cols; ++j) {
      if (avg_teacher_logits.at(i, j) > avg_teacher_logits.at(i, best)) {
        best = j;
      }
    }
    mask[i] = (best == y[i]);
  }
  return mask;
}

nn::LossResult kd_batch_loss(const Tensor2& student_logits,
                             const nn::LabelBatch& y,
                             const Tensor2* avg_teacher_logits,
                             const GateMask* mask) {
  if (mask != nullptr && avg_teacher_logits == nullptr) {
    throw std::invalid_argument(
        "kd_batch_loss: gate mask given without teacher logits");
  }
  nn::LossResult result = nn::softmax_cross_entropy(student_logits, y);
  if (avg_teacher_logits == nullptr) {
    return result;
  }
  if (!avg_teacher_logits->same_shape(student_logits)) {
    throw std::invalid_argument("kd_batch_loss: teacher logits shape mismatch");
  }
  if (mask != nullptr && mask->size() != student_logits.rows) {
    throw std::invalid_argument("kd_batch_loss: mask length mismatch");
  }
  const double denom =
      static_cast<double>(student_logits.rows * student_logits.cols);
  double mse_sum = 0.0;
  for (std::size_t i = 0; i < student_logits.rows; ++i) {
    if (mask != nullptr && !(*mask)[i]) continue;
    for (std::size_t j = 0; j < student_logits.cols; ++j) {
      const double diff =
          student_logits.at(i, j) - avg_teacher_logits->at(i, j);
      mse_sum += diff * diff;
      result.dlogits.at(i, j) += 2.0 * diff / denom;
    }
  }
  result.loss += mse_sum / denom;
  require_finite(result.dlogits, "kd_batch_loss");
  return result;
}

std::uint64_t teacher_step_count(const DistillPolicy& policy,
                                 std::size_t n_teachers,
                                 std::size_t total_epochs,
                                 std::size_t steps_per_epoch) {
  if (policy.sample_k > n_teachers) {
    throw std::invalid_argument("teacher_step_count: sample_k exceeds n");
  }
  if (policy.sample_k == 0) return 0;
  return std::uint64_t(active_epoch_count(policy.schedule, total_epochs)) *
         steps_per_epoch * policy.sample_k;
}

std::uint64_t sampling_seed(std::uint64_t run_seed, std::size_t epoch,
                            std::size_t batch_index) {
  return mix_seed(mix_seed(run_seed ^ kSamplingStream, epoch), batch_index);
}

}  // namespace kdtrain::distill
