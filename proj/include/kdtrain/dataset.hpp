#ifndef KDTRAIN_DATASET_HPP
#define KDTRAIN_DATASET_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdtrain/nncore.hpp"
#include "kdtrain/tensor.hpp"

namespace kdtrain::data {

struct Dataset {
  std::string name;
  Tensor2 features;       // [N x D]
  nn::LabelBatch labels;  // N entries, each < class_count
  std::size_t class_count = 0;

  std::size_t size() const { return features.rows; }
};

// Shuffle order for one epoch. Same (base seed, epoch) always produces
// the same permutation.
struct BatchPlan {
  std::size_t batch_size = 0;
  std::uint64_t epoch_seed = 0;
  std::vector<std::size_t> order;  // permutation of [0, N)
};

struct Batch {
  Tensor2 x;
  nn::LabelBatch y;
};

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IdxBadMagic final : IdxError {
  using IdxError::IdxError;
};
struct IdxTruncated final : IdxError {
  using IdxError::IdxError;
};
struct IdxCountMismatch final : IdxError {
  using IdxError::IdxError;
};

// Interleaved 2-D spiral arms, one arm per class. Coordinates are
// perturbed by N(0, noise_std^2) per axis.
Dataset make_spirals(std::uint64_t seed, std::size_t classes,
                     std::size_t per_class, double noise_std);

// Gaussian clusters with N(0, spread^2) scatter around seeded centers.
Dataset make_blobs(std::uint64_t seed, std::size_t classes,
                   std::size_t per_class, double spread);

// Reads the big-endian IDX image/label pair (magic 0x00000803 and
// 0x00000801). Pixels are scaled to [0,1]; class_count = max label + 1.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

BatchPlan make_batch_plan(std::size_t n, std::size_t batch_size,
                          std::uint64_t base_seed, std::size_t epoch);

// Fresh seeded shuffle per epoch; the final partial batch is kept, so the
// union of batches covers the dataset exactly once.
std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                           std::uint64_t base_seed, std::size_t epoch);

}  // namespace kdtrain::data

#endif  // KDTRAIN_DATASET_HPP
