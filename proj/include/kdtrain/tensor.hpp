#ifndef KDTRAIN_TENSOR_HPP
#define KDTRAIN_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace kdtrain {

// Row-major dense matrix of doubles. Rows are examples, columns are
// features or class logits.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // rows * cols entries

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  static Tensor2 from_rows(
      std::initializer_list<std::initializer_list<double>> data);

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  bool same_shape(const Tensor2& other) const {
    return rows == other.rows && cols == other.cols;
  }

  bool operator==(const Tensor2& other) const = default;
};

bool all_finite(const Tensor2& t);

// Throws std::domain_error naming `where` if t holds a NaN or infinity.
void require_finite(const Tensor2& t, const char* where);

}  // namespace kdtrain

#endif  // KDTRAIN_TENSOR_HPP
