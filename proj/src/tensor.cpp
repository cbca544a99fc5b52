#include "kdtrain/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kdtrain {

Tensor2 Tensor2::from_rows(
    std::initializer_list<std::initializer_list<double>> data) {
  Tensor2 t;
  t.rows = data.size();
  t.cols = data.size() == 0 ? 0 : data.begin()->size();
  t.values.reserve(t.rows * t.cols);
  for (const auto& row : data) {
    if (row.size() != t.cols) {
      throw std::invalid_argument("Tensor2::from_rows: ragged rows");
    }
    t.values.insert(t.values.end(), row.begin(), row.end());
  }
  return t;
}

bool all_finite(const Tensor2& t) {
  for (double v : t.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor2& t, const char* where) {
  if (!all_finite(t)) {
    throw std::domain_error(std::string(where) + ": non-finite values");
  }
}

}  // namespace kdtrain
