#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "kdtrain/nncore.hpp"
#include "testutil.hpp"

using namespace kdtrain;
using testutil::fd_logit_grads;
using testutil::fd_param_grads;
using testutil::max_grad_rel_error;
using testutil::random_labels;
using testutil::random_tensor;

namespace {

// Straight-line re-evaluation of a 2-layer net, written independently of
// nn::forward so the two can check each other.
Tensor2 straight_line_two_layer(const nn::ModelParams& p, const Tensor2& x) {
  const auto& l0 = p.layers[0];
  const auto& l1 = p.layers[1];
  Tensor2 out(x.rows, l1.out_width());
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::vector<double> hidden(l0.out_width());
    for (std::size_t j = 0; j < l0.out_width(); ++j) {
      double acc = l0.bias[j];
      for (std::size_t i = 0; i < l0.in_width(); ++i) {
        acc += x.at(r, i) * l0.weight.at(i, j);
      }
      hidden[j] = acc > 0.0 ? acc : 0.0;
    }
    for (std::size_t k = 0; k < l1.out_width(); ++k) {
      double acc = l1.bias[k];
      for (std::size_t j = 0; j < l1.in_width(); ++j) {
        acc += hidden[j] * l1.weight.at(j, k);
      }
      out.at(r, k) = acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("init_params is deterministic per (seed, dims)") {
  const auto a = nn::init_params(7, {2, 4, 3});
  const auto b = nn::init_params(7, {2, 4, 3});
  CHECK(a == b);
  const auto c = nn::init_params(8, {2, 4, 3});
  CHECK(a != c);
}

TEST_CASE("init_params zeroes biases") {
  const auto p = nn::init_params(123, {2, 3});
  for (double b : p.layers[0].bias) CHECK(b == 0.0);
}

TEST_CASE("init_params weight scale tracks fan-in") {
  const auto p = nn::init_params(7, {64, 64, 3});
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& w = p.layers[l].weight.values;
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size() - 1);
    const double expected = std::sqrt(2.0 / 64.0);
    CHECK(std::sqrt(var) == doctest::Approx(expected).epsilon(0.2));
  }
}

TEST_CASE("init_params rejects bad dims") {
  CHECK_THROWS_AS(nn::init_params(1, {4}), std::invalid_argument);
  CHECK_THROWS_AS(nn::init_params(1, {}), std::invalid_argument);
  CHECK_THROWS_AS(nn::init_params(1, {4, 0, 2}), std::invalid_argument);
}

TEST_CASE("forward identity map") {
  nn::ModelParams p;
  p.layers.push_back({Tensor2::from_rows({{1, 0}, {0, 1}}), {0.0, 0.0}});
  const Tensor2 out = nn::forward(p, Tensor2::from_rows({{1, 2}}));
  CHECK(out == Tensor2::from_rows({{1, 2}}));
}

TEST_CASE("forward of the zero model is zero") {
  nn::ModelParams p;
  p.layers.push_back({Tensor2(3, 4), std::vector<double>(4, 0.0)});
  p.layers.push_back({Tensor2(4, 2), std::vector<double>(2, 0.0)});
  std::mt19937_64 eng(5);
  const Tensor2 out = nn::forward(p, random_tensor(eng, 6, 3));
  for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("forward matches straight-line re-evaluation") {
  std::mt19937_64 eng(42);
  const auto p = nn::init_params(11, {3, 5, 4});
  const Tensor2 x = random_tensor(eng, 7, 3);
  const Tensor2 got = nn::forward(p, x);
  const Tensor2 expected = straight_line_two_layer(p, x);
  REQUIRE(got.same_shape(expected));
  for (std::size_t i = 0; i < got.values.size(); ++i) {
    CHECK(got.values[i] == doctest::Approx(expected.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects width mismatch") {
  const auto p = nn::init_params(1, {3, 2});
  CHECK_THROWS_AS(nn::forward(p, Tensor2(1, 4)), std::invalid_argument);
}

TEST_CASE("cross-entropy on uniform logits is ln 2") {
  const auto r = nn::softmax_cross_entropy(Tensor2::from_rows({{0, 0}}), {0});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy saturated correct prediction") {
  const auto r =
      nn::softmax_cross_entropy(Tensor2::from_rows({{100, 0}}), {0});
  CHECK(r.loss < 1e-6);
  CHECK(r.loss >= 0.0);
}

TEST_CASE("cross-entropy dlogits match finite differences") {
  std::mt19937_64 eng(9);
  const Tensor2 logits = random_tensor(eng, 4, 5);
  const nn::LabelBatch y = random_labels(eng, 4, 5);
  const auto r = nn::softmax_cross_entropy(logits, y);
  const Tensor2 fd = fd_logit_grads(logits, [&](const Tensor2& z) {
    return nn::softmax_cross_entropy(z, y).loss;
  });
  for (std::size_t i = 0; i < fd.values.size(); ++i) {
    CHECK(testutil::rel_error(r.dlogits.values[i], fd.values[i]) < 1e-4);
  }
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
  CHECK_THROWS_AS(nn::softmax_cross_entropy(Tensor2(1, 3), {3}),
                  std::out_of_range);
}

TEST_CASE("cross-entropy is invariant under per-row logit shifts") {
  std::mt19937_64 eng(21);
  const Tensor2 logits = random_tensor(eng, 6, 4, 3.0);
  const nn::LabelBatch y = random_labels(eng, 6, 4);
  Tensor2 shifted = logits;
  for (std::size_t r = 0; r < shifted.rows; ++r) {
    for (std::size_t c = 0; c < shifted.cols; ++c) {
      shifted.at(r, c) += 17.25;
    }
  }
  const double a = nn::softmax_cross_entropy(logits, y).loss;
  const double b = nn::softmax_cross_entropy(shifted, y).loss;
  CHECK(std::fabs(a - b) < 1e-9);
}

TEST_CASE("mse of identical tensors is zero") {
  std::mt19937_64 eng(3);
  const Tensor2 t = random_tensor(eng, 3, 4);
  const auto r = nn::mse_logits(t, t);
  CHECK(r.loss == 0.0);
  for (double v : r.dlogits.values) CHECK(v == 0.0);
}

TEST_CASE("mse frozen example and finite differences") {
  const Tensor2 s = Tensor2::from_rows({{1, 0}});
  const Tensor2 t = Tensor2::from_rows({{0, 0}});
  const auto r = nn::mse_logits(s, t);
  CHECK(r.loss == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.dlogits.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.dlogits.at(0, 1) == 0.0);
  const Tensor2 fd = fd_logit_grads(
      s, [&](const Tensor2& z) { return nn::mse_logits(z, t).loss; });
  for (std::size_t i = 0; i < fd.values.size(); ++i) {
    CHECK(testutil::rel_error(r.dlogits.values[i], fd.values[i]) < 1e-4);
  }
}

TEST_CASE("mse is quadratically homogeneous in the residual") {
  std::mt19937_64 eng(14);
  const Tensor2 t = random_tensor(eng, 3, 5);
  Tensor2 s = random_tensor(eng, 3, 5);
  Tensor2 s2 = t;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    s2.values[i] = t.values[i] + 2.0 * (s.values[i] - t.values[i]);
  }
  const double base = nn::mse_logits(s, t).loss;
  const double scaled = nn::mse_logits(s2, t).loss;
  CHECK(scaled == doctest::Approx(4.0 * base).epsilon(1e-12));
}

TEST_CASE("mse rejects shape mismatch") {
  CHECK_THROWS_AS(nn::mse_logits(Tensor2(2, 3), Tensor2(3, 2)),
                  std::invalid_argument);
}

TEST_CASE("backward of zero dlogits is zero") {
  const auto p = nn::init_params(5, {3, 4, 2});
  std::mt19937_64 eng(6);
  const Tensor2 x = random_tensor(eng, 4, 3);
  const auto grads = nn::backward(p, x, Tensor2(4, 2));
  for (const auto& layer : grads.layers) {
    for (double v : layer.weight.values) CHECK(v == 0.0);
    for (double v : layer.bias) CHECK(v == 0.0);
  }
}

TEST_CASE("backward matches finite differences for CE loss") {
  std::mt19937_64 eng(31);
  const auto p = nn::init_params(17, {3, 6, 4});
  const Tensor2 x = random_tensor(eng, 5, 3);
  const nn::LabelBatch y = random_labels(eng, 5, 4);
  const auto ce = nn::softmax_cross_entropy(nn::forward(p, x), y);
  const auto analytic = nn::backward(p, x, ce.dlogits);
  const auto numeric = fd_param_grads(p, [&](const nn::ModelParams& q) {
    return nn::softmax_cross_entropy(nn::forward(q, x), y).loss;
  });
  CHECK(max_grad_rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("backward is linear: composite gradient is the sum of parts") {
  std::mt19937_64 eng(77);
  const auto p = nn::init_params(19, {2, 5, 3});
  const Tensor2 x = random_tensor(eng, 4, 2);
  const nn::LabelBatch y = random_labels(eng, 4, 3);
  const Tensor2 target = random_tensor(eng, 4, 3);
  const Tensor2 logits = nn::forward(p, x);

  const auto ce = nn::softmax_cross_entropy(logits, y);
  const auto mse = nn::mse_logits(logits, target);
  Tensor2 combined = ce.dlogits;
  for (std::size_t i = 0; i < combined.values.size(); ++i) {
    combined.values[i] += mse.dlogits.values[i];
  }

  const auto g_ce = nn::backward(p, x, ce.dlogits);
  const auto g_mse = nn::backward(p, x, mse.dlogits);
  const auto g_sum = nn::backward(p, x, combined);
  for (std::size_t l = 0; l < g_sum.layers.size(); ++l) {
    for (std::size_t i = 0; i < g_sum.layers[l].weight.values.size(); ++i) {
      CHECK(g_sum.layers[l].weight.values[i] ==
            doctest::Approx(g_ce.layers[l].weight.values[i] +
                            g_mse.layers[l].weight.values[i])
                .epsilon(1e-12));
    }
  }

  // And the composite still agrees with finite differences.
  const auto numeric = fd_param_grads(p, [&](const nn::ModelParams& q) {
    const Tensor2 z = nn::forward(q, x);
    return nn::softmax_cross_entropy(z, y).loss + nn::mse_logits(z, target).loss;
  });
  CHECK(max_grad_rel_error(g_sum, numeric) < 1e-4);
}

TEST_CASE("backward rejects dlogits shape mismatch") {
  const auto p = nn::init_params(2, {3, 2});
  CHECK_THROWS_AS(nn::backward(p, Tensor2(4, 3), Tensor2(4, 3)),
                  std::invalid_argument);
}

TEST_CASE("sgd_step leaves params unchanged on zero gradients") {
  const auto p = nn::init_params(4, {3, 4, 2});
  nn::Gradients zero;
  for (const auto& layer : p.layers) {
    zero.layers.push_back({Tensor2(layer.weight.rows, layer.weight.cols),
                           std::vector<double>(layer.bias.size(), 0.0)});
  }
  CHECK(nn::sgd_step(p, zero, 0.1) == p);
}

TEST_CASE("sgd_step scalar arithmetic") {
  nn::ModelParams p;
  p.layers.push_back({Tensor2::from_rows({{1.0}}), {0.0}});
  nn::Gradients g;
  g.layers.push_back({Tensor2::from_rows({{2.0}}), {0.0}});
  const auto next = nn::sgd_step(p, g, 0.1);
  CHECK(next.layers[0].weight.at(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("two sgd steps compose additively") {
  std::mt19937_64 eng(55);
  const auto p = nn::init_params(8, {2, 3, 2});
  nn::Gradients g1, g2;
  for (const auto& layer : p.layers) {
    nn::DenseLayer a{random_tensor(eng, layer.weight.rows, layer.weight.cols),
                     std::vector<double>(layer.bias.size())};
    for (auto& b : a.bias) b = 0.25;
    g1.layers.push_back(a);
    nn::DenseLayer c{random_tensor(eng, layer.weight.rows, layer.weight.cols),
                     std::vector<double>(layer.bias.size(), -0.5)};
    g2.layers.push_back(c);
  }
  const auto stepped = nn::sgd_step(nn::sgd_step(p, g1, 0.1), g2, 0.05);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t i = 0; i < p.layers[l].weight.values.size(); ++i) {
      const double expected = p.layers[l].weight.values[i] -
                              0.1 * g1.layers[l].weight.values[i] -
                              0.05 * g2.layers[l].weight.values[i];
      CHECK(stepped.layers[l].weight.values[i] ==
            doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("sgd_step rejects non-finite gradients") {
  const auto p = nn::init_params(4, {2, 2});
  nn::Gradients g;
  g.layers.push_back(
      {Tensor2::from_rows({{std::nan(""), 0.0}, {0.0, 0.0}}), {0.0, 0.0}});
  CHECK_THROWS_AS(nn::sgd_step(p, g, 0.1), std::domain_error);
}

TEST_CASE("lr_at_epoch follows the exponential decay schedule") {
  nn::SgdConfig config;
  config.initial_lr = 0.1;
  config.gamma = 0.975;
  config.epochs = 200;
  CHECK(nn::lr_at_epoch(config, 0) == 0.1);
  CHECK(nn::lr_at_epoch(config, 1) == doctest::Approx(0.1 * 0.975).epsilon(1e-15));
  config.gamma = 1.0;
  CHECK(nn::lr_at_epoch(config, 137) == 0.1);
  CHECK_THROWS_AS(nn::lr_at_epoch(config, 200), std::out_of_range);
}

TEST_CASE("SgdConfig validation") {
  nn::SgdConfig config;
  CHECK_NOTHROW(config.validate());
  config.gamma = 1.5;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.gamma = 0.975;
  config.initial_lr = 0.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.initial_lr = 0.1;
  config.epochs = 0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("training steps are bit-deterministic") {
  std::mt19937_64 eng(2024);
  const Tensor2 x = random_tensor(eng, 8, 2);
  const nn::LabelBatch y = random_labels(eng, 8, 3);
  auto train = [&](std::uint64_t seed) {
    auto p = nn::init_params(seed, {2, 6, 3});
    for (int step = 0; step < 25; ++step) {
      const auto loss = nn::softmax_cross_entropy(nn::forward(p, x), y);
      p = nn::sgd_step(p, nn::backward(p, x, loss.dlogits), 0.05);
    }
    return p;
  };
  CHECK(train(9) == train(9));
  CHECK(train(9) != train(10));
}

TEST_CASE("random nets under 500 params pass the gradient gate for both losses") {
  std::mt19937_64 eng(404);
  for (int trial = 0; trial < 3; ++trial) {
    const auto p = nn::init_params(eng(), {4, 8, 8, 3});
    REQUIRE(p.parameter_count() <= 500);
    const Tensor2 x = random_tensor(eng, 4, 4);
    const nn::LabelBatch y = random_labels(eng, 4, 3);
    const Tensor2 target = random_tensor(eng, 4, 3);

    const Tensor2 logits = nn::forward(p, x);
    const auto ce = nn::softmax_cross_entropy(logits, y);
    const auto g_ce = nn::backward(p, x, ce.dlogits);
    const auto fd_ce = fd_param_grads(p, [&](const nn::ModelParams& q) {
      return nn::softmax_cross_entropy(nn::forward(q, x), y).loss;
    });
    CHECK(max_grad_rel_error(g_ce, fd_ce) < 1e-4);

    const auto mse = nn::mse_logits(logits, target);
    const auto g_mse = nn::backward(p, x, mse.dlogits);
    const auto fd_mse = fd_param_grads(p, [&](const nn::ModelParams& q) {
      return nn::mse_logits(nn::forward(q, x), target).loss;
    });
    CHECK(max_grad_rel_error(g_mse, fd_mse) < 1e-4);
  }
}
