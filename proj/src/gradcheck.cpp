#include "kdtrain/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "kdtrain/distill.hpp"
#include "kdtrain/nncore.hpp"
#include "kdtrain/rng.hpp"

namespace kdtrain::gradcheck {

namespace {

using distill::Schedule;
using distill::ScheduleKind;
using nn::ModelParams;

// Relative error with a small absolute floor so exactly-zero gradients
// (dead rectifier units) compare cleanly against finite-difference noise.
double rel_error(double analytic, double numeric) {
  const double scale =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
  return std::fabs(analytic - numeric) / scale;
}

Tensor2 random_tensor(std::mt19937_64& eng, std::size_t rows,
                      std::size_t cols, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor2 t(rows, cols);
  for (double& v : t.values) v = dist(eng);
  return t;
}

struct CheckSetup {
  ModelParams params;
  Tensor2 x;
  nn::LabelBatch y;
  std::function<nn::LossResult(const Tensor2& logits)> loss_at_logits;
  std::string description;
};

// Max relative error between backward() and central finite differences
// over every parameter entry of the setup's loss.
double check_setup(const CheckSetup& setup, double h, double sabotage,
                   std::string* worst_entry) {
  const auto loss_of = [&](const ModelParams& p) {
    return setup.loss_at_logits(nn::forward(p, setup.x)).loss;
  };
  const nn::LossResult at_point =
      setup.loss_at_logits(nn::forward(setup.params, setup.x));
  nn::Gradients grads =
      nn::backward(setup.params, setup.x, at_point.dlogits);
  grads.layers[0].weight.values[0] += sabotage;

  double worst = 0.0;
  ModelParams probe = setup.params;
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto check_entry = [&](double& slot, double analytic,
                           const std::string& label) {
      const double saved = slot;
      slot = saved + h;
      const double up = loss_of(probe);
      slot = saved - h;
      const double down = loss_of(probe);
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(analytic, numeric);
      if (err > worst) {
        worst = err;
        if (worst_entry) *worst_entry = label;
      }
    };
    for (std::size_t i = 0; i < probe.layers[l].weight.values.size(); ++i) {
      check_entry(probe.layers[l].weight.values[i],
                  grads.layers[l].weight.values[i],
                  "layer" + std::to_string(l) + ".w[" + std::to_string(i) +
                      "]");
    }
    for (std::size_t i = 0; i < probe.layers[l].bias.size(); ++i) {
      check_entry(probe.layers[l].bias[i], grads.layers[l].bias[i],
                  "layer" + std::to_string(l) + ".b[" + std::to_string(i) +
                      "]");
    }
  }
  return worst;
}

CheckSetup random_net(std::mt19937_64& eng) {
  std::uniform_int_distribution<std::size_t> d_dist(2, 3);
  std::uniform_int_distribution<std::size_t> h_dist(3, 8);
  std::uniform_int_distribution<std::size_t> c_dist(2, 5);
  std::uniform_int_distribution<std::size_t> b_dist(2, 5);
  std::uniform_int_distribution<int> layers_dist(1, 2);

  CheckSetup setup;
  std::vector<std::size_t> dims{d_dist(eng)};
  const int hidden_layers = layers_dist(eng);
  for (int i = 0; i < hidden_layers; ++i) dims.push_back(h_dist(eng));
  dims.push_back(c_dist(eng));
  setup.params = nn::init_params(eng(), dims);

  const std::size_t batch = b_dist(eng);
  setup.x = random_tensor(eng, batch, dims.front(), 1.0);
  std::uniform_int_distribution<nn::Label> label_dist(
      0, static_cast<nn::Label>(dims.back() - 1));
  setup.y.resize(batch);
  for (auto& label : setup.y) label = label_dist(eng);
  return setup;
}

const Schedule kSchedules[] = {
    {ScheduleKind::EveryEpoch, 20},  {ScheduleKind::FirstK, 20},
    {ScheduleKind::MiddleK, 20},     {ScheduleKind::LastK, 20},
    {ScheduleKind::FirstLastSplit, 20}, {ScheduleKind::OnePerTen, 20},
    {ScheduleKind::TwoPerTwenty, 20},
};

}  // namespace

Report run(const Options& options) {
  if (options.trials < 1) {
    throw std::invalid_argument("gradcheck: trials must be >= 1");
  }
  std::mt19937_64 eng(mix_seed(options.seed, 0x6ad5c0ffull));
  Report report;

  auto record = [&](const CheckSetup& setup) {
    std::string worst_entry;
    const double err =
        check_setup(setup, options.fd_step, options.sabotage, &worst_entry);
    ++report.configs_checked;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_case = setup.description + " at " + worst_entry;
    }
  };

  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    // Plain cross-entropy.
    {
      CheckSetup setup = random_net(eng);
      setup.description = "ce";
      setup.loss_at_logits = [y = setup.y](const Tensor2& logits) {
        return nn::softmax_cross_entropy(logits, y);
      };
      record(setup);
    }
    // Plain mean-squared error against a fixed target.
    {
      CheckSetup setup = random_net(eng);
      const Tensor2 target = random_tensor(
          eng, setup.x.rows, setup.params.output_width(), 1.0);
      setup.description = "mse";
      setup.loss_at_logits = [target](const Tensor2& logits) {
        return nn::mse_logits(logits, target);
      };
      record(setup);
    }
    // Combined loss across every schedule, gating choice and ensemble
    // size. The schedule decides whether the sampled epoch carries the
    // distillation term at all.
    const std::size_t total_epochs = 200;
    std::uniform_int_distribution<std::size_t> epoch_dist(0,
                                                          total_epochs - 1);
    for (const Schedule& schedule : kSchedules) {
      for (int gate = 0; gate <= 1; ++gate) {
        for (std::size_t teachers = 1; teachers <= 5; ++teachers) {
          CheckSetup setup = random_net(eng);
          const std::size_t epoch = epoch_dist(eng);
          const bool active =
              distill::schedule_active(schedule, epoch, total_epochs);
          setup.description = distill::schedule_name(schedule) +
                              (gate ? "+gate" : "") + " teachers=" +
                              std::to_string(teachers) +
                              (active ? " active" : " inactive");
          if (!active) {
            setup.loss_at_logits = [y = setup.y](const Tensor2& logits) {
              return distill::kd_batch_loss(logits, y);
            };
            record(setup);
            continue;
          }
          std::uniform_int_distribution<std::size_t> k_dist(1, teachers);
          const std::size_t k = k_dist(eng);
          std::vector<Tensor2> teacher_logits;
          std::mt19937_64 sample_rng(eng());
          for (std::size_t idx :
               distill::sample_teachers(sample_rng, teachers, k)) {
            (void)idx;
            teacher_logits.push_back(random_tensor(
                eng, setup.x.rows, setup.params.output_width(), 1.0));
          }
          const Tensor2 avg = distill::average_logits(teacher_logits);
          if (gate) {
            const distill::GateMask mask = distill::gate_mask(avg, setup.y);
            setup.loss_at_logits = [y = setup.y, avg,
                                    mask](const Tensor2& logits) {
              return distill::kd_batch_loss(logits, y, &avg, &mask);
            };
          } else {
            setup.loss_at_logits = [y = setup.y, avg](const Tensor2& logits) {
              return distill::kd_batch_loss(logits, y, &avg, nullptr);
            };
          }
          record(setup);
        }
      }
    }
  }
  return report;
}

}  // namespace kdtrain::gradcheck
