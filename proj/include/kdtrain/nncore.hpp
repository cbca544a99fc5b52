#ifndef KDTRAIN_NNCORE_HPP
#define KDTRAIN_NNCORE_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include "kdtrain/tensor.hpp"

namespace kdtrain::nn {

using Label = std::uint32_t;
using LabelBatch = std::vector<Label>;

// One fully connected layer: y = x * weight + bias.
struct DenseLayer {
  Tensor2 weight;            // [in x out]
  std::vector<double> bias;  // [out]

  std::size_t in_width() const { return weight.rows; }
  std::size_t out_width() const { return weight.cols; }

  bool operator==(const DenseLayer& other) const = default;
};

// A dense feed-forward classifier. Hidden layers use the rectifier, the
// final layer is linear and produces logits.
struct ModelParams {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const { return layers.front().in_width(); }
  std::size_t output_width() const { return layers.back().out_width(); }
  std::vector<std::size_t> dims() const;
  std::size_t parameter_count() const;

  bool operator==(const ModelParams& other) const = default;
};

// Shape-congruent with the ModelParams they were computed from.
struct Gradients {
  std::vector<DenseLayer> layers;
};

struct SgdConfig {
  double initial_lr = 0.1;
  double gamma = 0.975;
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  Tensor2 dlogits;
};

// Seeded fan-in-scaled normal weights (stddev sqrt(2/in)), zero biases.
// Identical (seed, dims) always produce bit-identical parameters.
ModelParams init_params(std::uint64_t seed, const std::vector<std::size_t>& dims);

// Returns logits [B x C]; x is [B x D] with D = first layer input width.
Tensor2 forward(const ModelParams& params, const Tensor2& x);

// Mean over the batch of -log softmax(logits)[y], stabilized by
// max-subtraction. dlogits = (softmax - onehot) / B.
LossResult softmax_cross_entropy(const Tensor2& logits, const LabelBatch& y);

// loss = mean over batch AND classes of (student - target)^2,
// dlogits = 2 (student - target) / (B * C).
LossResult mse_logits(const Tensor2& student, const Tensor2& target);

// Exact gradients of the scalar loss whose logit gradient is dlogits.
Gradients backward(const ModelParams& params, const Tensor2& x,
                   const Tensor2& dlogits);

// theta <- theta - lr * g, elementwise. Rejects non-finite gradients.
ModelParams sgd_step(const ModelParams& params, const Gradients& grads,
                     double lr);

// initial_lr * gamma^epoch; epoch 0 uses initial_lr unchanged.
double lr_at_epoch(const SgdConfig& config, std::size_t epoch);

}  // namespace kdtrain::nn

#endif  // KDTRAIN_NNCORE_HPP
