#include "kdtrain/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace kdtrain::nn {

namespace {

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* where) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(where) + ": shape mismatch (" +
                                std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
  }
}

// out[B x N] = x[B x M] * w[M x N]
Tensor2 matmul(const Tensor2& x, const Tensor2& w) {
  Tensor2 out(x.rows, w.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double xv = x.at(i, k);
      if (xv == 0.0) continue;
      const double* wrow = &w.values[k * w.cols];
      double* orow = &out.values[i * out.cols];
      for (std::size_t j = 0; j < w.cols; ++j) {
        orow[j] += xv * wrow[j];
      }
    }
  }
  return out;
}

Tensor2 layer_forward(const DenseLayer& layer, const Tensor2& x, bool relu) {
  Tensor2 out = matmul(x, layer.weight);
  for (std::size_t i = 0; i < out.rows; ++i) {
    for (std::size_t j = 0; j < out.cols; ++j) {
      double v = out.at(i, j) + layer.bias[j];
      out.at(i, j) = relu ? std::max(0.0, v) : v;
    }
  }
  return out;
}

// Activations a_0 = x, a_1, ..., a_L (a_L are the logits).
std::vector<Tensor2> forward_activations(const ModelParams& params,
                                         const Tensor2& x) {
  std::vector<Tensor2> acts;
  acts.reserve(params.layers.size() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const bool hidden = l + 1 < params.layers.size();
    acts.push_back(layer_forward(params.layers[l], acts.back(), hidden));
  }
  return acts;
}

void require_congruent(const ModelParams& params, const Gradients& grads) {
  if (params.layers.size() != grads.layers.size()) {
    throw std::invalid_argument("sgd_step: layer count mismatch");
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (!params.layers[l].weight.same_shape(grads.layers[l].weight) ||
        params.layers[l].bias.size() != grads.layers[l].bias.size()) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    }
  }
}

}  // namespace

std::vector<std::size_t> ModelParams::dims() const {
  std::vector<std::size_t> d;
  d.reserve(layers.size() + 1);
  d.push_back(layers.front().in_width());
  for (const auto& layer : layers) d.push_back(layer.out_width());
  return d;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    n += layer.weight.values.size() + layer.bias.size();
  }
  return n;
}

void SgdConfig::validate() const {
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) {
    throw std::invalid_argument("SgdConfig: initial_lr must be positive");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("SgdConfig: gamma must be in (0, 1]");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("SgdConfig: batch_size must be >= 1");
  }
  if (epochs < 1) {
    throw std::invalid_argument("SgdConfig: epochs must be >= 1");
  }
}

ModelParams init_params(std::uint64_t seed,
                        const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) {
    throw std::invalid_argument("init_params: need at least two layer widths");
  }
  for (std::size_t w : dims) {
    if (w == 0) throw std::invalid_argument("init_params: zero layer width");
  }
  std::mt19937_64 eng(seed);
  ModelParams params;
  params.layers.reserve(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    layer.weight = Tensor2(dims[l], dims[l + 1]);
    layer.bias.assign(dims[l + 1], 0.0);
    std::normal_distribution<double> dist(
        0.0, std::sqrt(2.0 / static_cast<double>(dims[l])));
    for (double& v : layer.weight.values) v = dist(eng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Tensor2 forward(const ModelParams& params, const Tensor2& x) {
  if (params.layers.empty()) {
    throw std::invalid_argument("forward: empty model");
  }
  if (x.cols != params.input_width()) {
    throw std::invalid_argument(
        "forward: input width " + std::to_string(x.cols) +
        " does not match first layer input " +
        std::to_string(params.input_width()));
  }
  Tensor2 logits = forward_activations(params, x).back();
  require_finite(logits, "forward");
  return logits;
}

LossResult softmax_cross_entropy(const Tensor2& logits, const LabelBatch& y) {
  if (logits.rows != y.size()) {
    throw std::invalid_argument("softmax_cross_entropy: batch size mismatch");
  }
  const std::size_t batch = logits.rows;
  const std::size_t classes = logits.cols;
  LossResult result;
  result.dlogits = Tensor2(batch, classes);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (y[i] >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " +
                              std::to_string(y[i]) + " out of range for " +
                              std::to_string(classes) + " classes");
    }
    double rowmax = logits.at(i, 0);
    for (std::size_t j = 1; j < classes; ++j) {
      rowmax = std::max(rowmax, logits.at(i, j));
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      denom += std::exp(logits.at(i, j) - rowmax);
    }
    const double log_denom = std::log(denom);
    total += log_denom - (logits.at(i, y[i]) - rowmax);
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits.at(i, j) - rowmax) / denom;
      result.dlogits.at(i, j) =
          (p - (j == y[i] ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
  }
  result.loss = total / static_cast<double>(batch);
  require_finite(result.dlogits, "softmax_cross_entropy");
  return result;
}

LossResult mse_logits(const Tensor2& student, const Tensor2& target) {
  require_same_shape(student, target, "mse_logits");
  const double denom = static_cast<double>(student.rows * student.cols);
  LossResult result;
  result.dlogits = Tensor2(student.rows, student.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < student.values.size(); ++i) {
    const double diff = student.values[i] - target.values[i];
    total += diff * diff;
    result.dlogits.values[i] = 2.0 * diff / denom;
  }
  result.loss = total / denom;
  require_finite(result.dlogits, "mse_logits");
  return result;
}

Gradients backward(const ModelParams& params, const Tensor2& x,
                   const Tensor2& dlogits) {
  const std::vector<Tensor2> acts = forward_activations(params, x);
  require_same_shape(dlogits, acts.back(), "backward");

  Gradients grads;
  grads.layers.resize(params.layers.size());
  Tensor2 delta = dlogits;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const DenseLayer& layer = params.layers[l];
    const Tensor2& input = acts[l];
    DenseLayer& g = grads.layers[l];
    g.weight = Tensor2(layer.weight.rows, layer.weight.cols);
    g.bias.assign(layer.bias.size(), 0.0);

    // dW = input^T * delta, db = column sums of delta
    for (std::size_t i = 0; i < input.rows; ++i) {
      for (std::size_t k = 0; k < input.cols; ++k) {
        const double xv = input.at(i, k);
        if (xv == 0.0) continue;
        for (std::size_t j = 0; j < delta.cols; ++j) {
          g.weight.at(k, j) += xv * delta.at(i, j);
        }
      }
      for (std::size_t j = 0; j < delta.cols; ++j) {
        g.bias[j] += delta.at(i, j);
      }
    }

    if (l > 0) {
      // delta_prev = (delta * W^T) masked by the rectifier: input > 0
      Tensor2 prev(input.rows, input.cols);
      for (std::size_t i = 0; i < input.rows; ++i) {
        for (std::size_t k = 0; k < input.cols; ++k) {
          if (input.at(i, k) <= 0.0) continue;
          double acc = 0.0;
          for (std::size_t j = 0; j < delta.cols; ++j) {
            acc += delta.at(i, j) * layer.weight.at(k, j);
          }
          prev.at(i, k) = acc;
        }
      }
      delta = std::move(prev);
    }
  }
  return grads;
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads,
                     double lr) {
  require_congruent(params, grads);
  if (!(lr > 0.0)) {
    throw std::invalid_argument("sgd_step: lr must be positive");
  }
  ModelParams next = params;
  for (std::size_t l = 0; l < next.layers.size(); ++l) {
    const DenseLayer& g = grads.layers[l];
    if (!all_finite(g.weight)) {
      throw std::domain_error("sgd_step: non-finite weight gradient at layer " +
                              std::to_string(l));
    }
    for (std::size_t i = 0; i < g.weight.values.size(); ++i) {
      next.layers[l].weight.values[i] -= lr * g.weight.values[i];
    }
    for (std::size_t i = 0; i < g.bias.size(); ++i) {
      if (!std::isfinite(g.bias[i])) {
        throw std::domain_error("sgd_step: non-finite bias gradient at layer " +
                                std::to_string(l));
      }
      next.layers[l].bias[i] -= lr * g.bias[i];
    }
  }
  return next;
}

double lr_at_epoch(const SgdConfig& config, std::size_t epoch) {
  if (epoch >= config.epochs) {
    throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) +
                            " out of range for " +
                            std::to_string(config.epochs) + " epochs");
  }
  return config.initial_lr *
         std::pow(config.gamma, static_cast<double>(epoch));
}

}  // namespace kdtrain::nn
