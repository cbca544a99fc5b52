#ifndef KDTRAIN_GRADCHECK_HPP
#define KDTRAIN_GRADCHECK_HPP

#include <cstddef>
#include <cstdint>
#include <string>

namespace kdtrain::gradcheck {

struct Options {
  std::uint64_t seed = 1;
  std::size_t trials = 1;   // each trial sweeps schedules x gating x teachers
  double fd_step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: offset added to one analytic gradient entry so the failure
  // path of the gate itself can be exercised.
  double sabotage = 0.0;
};

struct Report {
  double max_rel_error = 0.0;
  std::size_t configs_checked = 0;
  std::string worst_case;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Compares analytic parameter gradients of the combined loss against
// central finite differences over random small networks, covering plain
// CE, plain MSE, and every schedule/gating/teacher-count combination.
Report run(const Options& options);

}  // namespace kdtrain::gradcheck

#endif  // KDTRAIN_GRADCHECK_HPP
