#include "kdtrain/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <stdexcept>

namespace kdtrain::orch {

namespace {

struct EngineResult {
  std::vector<registry::MetricsRow> rows;
  nn::ModelParams params;
  std::uint64_t teacher_forwards = 0;
};

// The single training loop behind every role. Teachers, finetunes and
// baselines run it with no policy; students run it with one. Keeping one
// code path makes a no-distillation student bit-identical to a plain run.
EngineResult run_engine(const RunEnv& env, const nn::SgdConfig& config,
                        const std::vector<std::size_t>& dims,
                        const distill::TeacherEnsemble* teachers,
                        const distill::DistillPolicy* policy,
                        const nn::ModelParams* init_override,
                        double cost_scale, const std::string& run_id) {
  const std::size_t total_epochs = config.epochs;
  const std::size_t n_teachers = teachers ? teachers->size() : 0;
  const bool distilling =
      policy != nullptr && policy->sample_k > 0 && n_teachers > 0;

  EngineResult result;
  result.params = init_override ? *init_override
                                : nn::init_params(config.seed, dims);
  result.rows.reserve(total_epochs);

  double cum_cost = 0.0;
  double cum_wall = 0.0;
  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    const double lr = nn::lr_at_epoch(config, epoch);
    const bool active =
        distilling &&
        distill::schedule_active(policy->schedule, epoch, total_epochs);
    const std::size_t k = active ? policy->sample_k : 0;

    double loss_sum = 0.0;
    std::size_t example_count = 0;
    double test_accuracy = 0.0;
    const auto epoch_batches =
        data::batches(env.train, config.batch_size, config.seed, epoch);
    try {
      for (std::size_t b = 0; b < epoch_batches.size(); ++b) {
        const data::Batch& batch = epoch_batches[b];
        const Tensor2 logits = nn::forward(result.params, batch.x);

        nn::LossResult loss;
        if (active) {
          std::vector<std::size_t> chosen;
          if (k == n_teachers) {
            chosen.resize(n_teachers);
            for (std::size_t t = 0; t < n_teachers; ++t) chosen[t] = t;
          } else {
            std::mt19937_64 rng(
                distill::sampling_seed(config.seed, epoch, b));
            chosen = distill::sample_teachers(rng, n_teachers, k);
          }
          std::vector<Tensor2> teacher_logits;
          teacher_logits.reserve(chosen.size());
          for (std::size_t t : chosen) {
            teacher_logits.push_back(
                nn::forward(teachers->members[t].params, batch.x));
          }
          result.teacher_forwards += chosen.size();
          const Tensor2 avg = distill::average_logits(teacher_logits);
          if (policy->gate_on_correct) {
            const distill::GateMask mask = distill::gate_mask(avg, batch.y);
            loss = distill::kd_batch_loss(logits, batch.y, &avg, &mask);
          } else {
            loss = distill::kd_batch_loss(logits, batch.y, &avg, nullptr);
          }
        } else {
          loss = distill::kd_batch_loss(logits, batch.y);
        }

        if (!std::isfinite(loss.loss)) {
          throw std::domain_error("loss is non-finite");
        }
        const nn::Gradients grads =
            nn::backward(result.params, batch.x, loss.dlogits);
        result.params = nn::sgd_step(result.params, grads, lr);

        loss_sum += loss.loss * static_cast<double>(batch.x.rows);
        example_count += batch.x.rows;
        cum_cost += cost_scale *
                    (1.0 + env.cost_model.forward_fraction *
                               static_cast<double>(k));
      }
      test_accuracy = evaluate_accuracy(result.params, env.test);
    } catch (const std::domain_error& e) {
      throw DivergedRun(run_id, epoch,
                        run_id + ": diverged at epoch " +
                            std::to_string(epoch) + " (" + e.what() + ")");
    }

    cum_wall += cost_scale * env.cost_model.base_epoch_seconds +
                env.cost_model.per_teacher_epoch_seconds *
                    static_cast<double>(k);

    registry::MetricsRow row;
    row.epoch = epoch + 1;
    row.train_loss = loss_sum / static_cast<double>(example_count);
    row.test_accuracy = test_accuracy;
    row.lr = lr;
    row.kd_active = active ? 1 : 0;
    row.teachers_used = k;
    row.cum_cost_units = cum_cost;
    row.cum_wall_seconds_est = cum_wall;
    result.rows.push_back(row);
  }
  return result;
}

void persist_record(const RunEnv& env, const RunRecord& record,
                    const nn::ModelParams& params) {
  if (env.registry_dir.empty()) return;
  std::filesystem::create_directories(env.registry_dir);
  registry::save_checkpoint(params,
                            env.registry_dir / record.manifest.checkpoint_path);
  registry::write_metrics_csv(record.rows,
                              env.registry_dir / record.manifest.metrics_path);
  registry::write_manifest(record.manifest, env.registry_dir);
}

registry::CostSummary plain_cost_summary(const RunEnv& env,
                                         const nn::SgdConfig& config,
                                         double cost_scale) {
  registry::CostSummary cost;
  cost.relative_cost = cost_scale;
  cost.estimated_wall_seconds = cost_scale *
                                env.cost_model.base_epoch_seconds *
                                static_cast<double>(config.epochs);
  cost.teacher_forward_count = 0;
  return cost;
}

RunRecord run_plain(const RunEnv& env, const nn::SgdConfig& config,
                    const std::string& run_id, registry::Role role,
                    const std::vector<std::size_t>& dims, double cost_scale,
                    const nn::ModelParams* init_override,
                    std::vector<std::string> parent_ids) {
  config.validate();
  const EngineResult engine = run_engine(env, config, dims, nullptr, nullptr,
                                         init_override, cost_scale, run_id);
  RunRecord record;
  record.manifest.run_id = run_id;
  record.manifest.role = role;
  record.manifest.config = config;
  record.manifest.parent_ids = std::move(parent_ids);
  record.manifest.replicate_seeds = {config.seed};
  record.manifest.final_test_accuracy = engine.rows.back().test_accuracy;
  record.manifest.metrics_path = run_id + ".metrics.csv";
  record.manifest.checkpoint_path = run_id + ".ckpt";
  record.manifest.cost = plain_cost_summary(env, config, cost_scale);
  record.rows = engine.rows;
  persist_record(env, record, engine.params);
  return record;
}

}  // namespace

void CostModel::validate() const {
  if (!(forward_fraction > 0.0 && forward_fraction < 1.0)) {
    throw std::invalid_argument("CostModel: forward_fraction in (0, 1)");
  }
  if (!(base_epoch_seconds > 0.0) || !(per_teacher_epoch_seconds > 0.0)) {
    throw std::invalid_argument("CostModel: epoch seconds must be positive");
  }
}

double evaluate_accuracy(const nn::ModelParams& params,
                         const data::Dataset& ds) {
  const Tensor2 logits = nn::forward(params, ds.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    if (best == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

std::vector<std::size_t> model_dims(const RunEnv& env, bool wide) {
  std::vector<std::size_t> dims;
  dims.reserve(env.hidden_widths.size() + 2);
  dims.push_back(env.train.features.cols);
  for (std::size_t h : env.hidden_widths) {
    dims.push_back(wide ? 2 * h : h);
  }
  dims.push_back(env.train.class_count);
  return dims;
}

RunRecord train_teacher(const RunEnv& env, const nn::SgdConfig& config,
                        const std::string& run_id) {
  return run_plain(env, config, run_id, registry::Role::Teacher,
                   model_dims(env), 1.0, nullptr, {});
}

SweepResult sweep(const RunEnv& env, const std::vector<double>& lrs,
                  const nn::SgdConfig& base) {
  if (lrs.empty()) {
    throw std::invalid_argument("sweep: need at least one learning rate");
  }
  SweepResult result;
  for (std::size_t i = 0; i < lrs.size(); ++i) {
    nn::SgdConfig config = base;
    config.initial_lr = lrs[i];
    config.seed = base.seed + i;
    const std::string run_id = "B" + std::to_string(i);
    try {
      result.records.push_back(train_teacher(env, config, run_id));
    } catch (const DivergedRun& e) {
      result.failures.push_back({run_id, e.epoch, e.what()});
    }
  }
  return result;
}

StudentResult train_student(const RunEnv& env, const nn::SgdConfig& config,
                            const distill::TeacherEnsemble& ensemble,
                            const distill::DistillPolicy& policy,
                            std::size_t replicates,
                            const std::string& run_id) {
  config.validate();
  if (replicates < 1) {
    throw std::invalid_argument("train_student: replicates >= 1");
  }
  ensemble.validate();

  distill::TeacherEnsemble effective;
  if (policy.teacher_subset) {
    for (const auto& id : *policy.teacher_subset) {
      const auto it = std::find_if(
          ensemble.members.begin(), ensemble.members.end(),
          [&](const distill::TeacherRef& m) { return m.id == id; });
      if (it == ensemble.members.end()) {
        throw std::invalid_argument("train_student: teacher_subset id " + id +
                                    " not in the ensemble");
      }
    }
    for (const auto& m : ensemble.members) {
      if (std::find(policy.teacher_subset->begin(),
                    policy.teacher_subset->end(),
                    m.id) != policy.teacher_subset->end()) {
        effective.members.push_back(m);
      }
    }
  } else {
    effective = ensemble;
  }
  if (policy.sample_k > effective.size()) {
    throw std::invalid_argument(
        "train_student: sample_k=" + std::to_string(policy.sample_k) +
        " exceeds ensemble size " + std::to_string(effective.size()));
  }
  if (policy.sample_k > 0 && effective.members.empty()) {
    throw std::invalid_argument("train_student: empty ensemble with KD on");
  }
  const std::vector<std::size_t> dims = model_dims(env);
  const std::size_t total_epochs = config.epochs;

  // Replicates differ only in seed and share read-only data and teachers,
  // so they can run in parallel.
  auto run_replicate = [&](std::size_t r) {
    nn::SgdConfig rep_config = config;
    rep_config.seed = config.seed + r;
    return run_engine(env, rep_config, dims, &effective, &policy, nullptr,
                      1.0, run_id + ".rep" + std::to_string(r));
  };
  std::vector<EngineResult> engines;
  if (replicates == 1) {
    engines.push_back(run_replicate(0));
  } else {
    std::vector<std::future<EngineResult>> futures;
    futures.reserve(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
      futures.push_back(
          std::async(std::launch::async, run_replicate, r));
    }
    for (auto& f : futures) engines.push_back(f.get());
  }

  std::vector<std::string> parent_ids;
  for (const auto& m : effective.members) parent_ids.push_back(m.id);

  registry::CostSummary cost;
  cost.relative_cost = relative_cost(policy, effective.size(), total_epochs,
                                     env.cost_model);
  cost.estimated_wall_seconds =
      wall_estimate(policy, total_epochs, env.cost_model);
  cost.teacher_forward_count = engines.front().teacher_forwards;

  StudentResult result;
  for (std::size_t r = 0; r < replicates; ++r) {
    RunRecord rep;
    rep.manifest.run_id = run_id + ".rep" + std::to_string(r);
    rep.manifest.role = registry::Role::Student;
    rep.manifest.config = config;
    rep.manifest.config.seed = config.seed + r;
    rep.manifest.policy = policy;
    rep.manifest.parent_ids = parent_ids;
    rep.manifest.replicate_seeds = {config.seed + r};
    rep.manifest.final_test_accuracy = engines[r].rows.back().test_accuracy;
    rep.manifest.metrics_path = rep.manifest.run_id + ".metrics.csv";
    rep.manifest.checkpoint_path = rep.manifest.run_id + ".ckpt";
    rep.manifest.cost = cost;
    rep.rows = engines[r].rows;
    if (!env.registry_dir.empty()) {
      std::filesystem::create_directories(env.registry_dir);
      registry::save_checkpoint(engines[r].params,
                                env.registry_dir / rep.manifest.checkpoint_path);
      registry::write_metrics_csv(rep.rows,
                                  env.registry_dir / rep.manifest.metrics_path);
    }
    result.replicates.push_back(std::move(rep));
  }

  // Aggregate curve: arithmetic mean of the replicate accuracies and
  // losses per epoch. Policy-determined columns are identical across
  // replicates and are copied from replicate 0.
  RunRecord aggregate;
  aggregate.rows = result.replicates.front().rows;
  for (std::size_t e = 0; e < total_epochs; ++e) {
    double acc_sum = 0.0;
    double loss_sum = 0.0;
    for (const auto& rep : result.replicates) {
      acc_sum += rep.rows[e].test_accuracy;
      loss_sum += rep.rows[e].train_loss;
    }
    aggregate.rows[e].test_accuracy =
        acc_sum / static_cast<double>(replicates);
    aggregate.rows[e].train_loss = loss_sum / static_cast<double>(replicates);
  }
  aggregate.manifest.run_id = run_id;
  aggregate.manifest.role = registry::Role::Student;
  aggregate.manifest.config = config;
  aggregate.manifest.policy = policy;
  aggregate.manifest.parent_ids = parent_ids;
  for (std::size_t r = 0; r < replicates; ++r) {
    aggregate.manifest.replicate_seeds.push_back(config.seed + r);
  }
  aggregate.manifest.final_test_accuracy =
      aggregate.rows.back().test_accuracy;
  aggregate.manifest.metrics_path = run_id + ".metrics.csv";
  aggregate.manifest.checkpoint_path =
      result.replicates.front().manifest.checkpoint_path;
  aggregate.manifest.cost = cost;
  if (!env.registry_dir.empty()) {
    registry::write_metrics_csv(aggregate.rows,
                                env.registry_dir / aggregate.manifest.metrics_path);
    registry::write_manifest(aggregate.manifest, env.registry_dir);
  }
  result.aggregate = std::move(aggregate);
  return result;
}

RunRecord finetune_from(const RunEnv& env, const std::string& teacher_id,
                        const nn::SgdConfig& config,
                        const std::string& run_id) {
  const std::vector<registry::RunManifest> runs =
      registry::list_runs(env.registry_dir);
  const auto it = std::find_if(runs.begin(), runs.end(),
                               [&](const registry::RunManifest& m) {
                                 return m.run_id == teacher_id;
                               });
  if (it == runs.end()) {
    throw std::invalid_argument("finetune_from: unknown run id " + teacher_id);
  }
  const nn::ModelParams start =
      registry::load_checkpoint(env.registry_dir / it->checkpoint_path);

  if (config.epochs == 0) {
    // Evaluate-only: the record shows where the teacher's weights stand.
    RunRecord record;
    record.manifest.run_id = run_id;
    record.manifest.role = registry::Role::Finetune;
    record.manifest.config = config;
    record.manifest.parent_ids = {teacher_id};
    record.manifest.replicate_seeds = {config.seed};
    record.manifest.final_test_accuracy = evaluate_accuracy(start, env.test);
    record.manifest.metrics_path = run_id + ".metrics.csv";
    record.manifest.checkpoint_path = run_id + ".ckpt";
    record.manifest.cost.estimated_wall_seconds = 0.0;
    persist_record(env, record, start);
    return record;
  }
  return run_plain(env, config, run_id, registry::Role::Finetune,
                   start.dims(), 1.0, &start, {teacher_id});
}

RunRecord train_wide_baseline(const RunEnv& env, const nn::SgdConfig& config,
                              const std::string& run_id) {
  return run_plain(env, config, run_id, registry::Role::Baseline,
                   model_dims(env, true), 2.0, nullptr, {});
}

double relative_cost(const distill::DistillPolicy& policy,
                     std::size_t n_available, std::size_t total_epochs,
                     const CostModel& model) {
  model.validate();
  if (policy.sample_k > n_available) {
    throw std::invalid_argument("relative_cost: sample_k exceeds n_available");
  }
  if (policy.sample_k == 0) return 1.0;
  const double active = static_cast<double>(
      distill::active_epoch_count(policy.schedule, total_epochs));
  return 1.0 + model.forward_fraction *
                   static_cast<double>(policy.sample_k) * active /
                   static_cast<double>(total_epochs);
}

double wall_estimate(const distill::DistillPolicy& policy,
                     std::size_t total_epochs, const CostModel& model) {
  model.validate();
  const double active =
      policy.sample_k == 0
          ? 0.0
          : static_cast<double>(
                distill::active_epoch_count(policy.schedule, total_epochs));
  return model.base_epoch_seconds * static_cast<double>(total_epochs) +
         model.per_teacher_epoch_seconds *
             static_cast<double>(policy.sample_k) * active;
}

ThresholdTable epochs_to_accuracy(const RunRecord& record,
                                  const std::vector<double>& thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument(
        "epochs_to_accuracy: thresholds must be ascending");
  }
  ThresholdTable table;
  table.thresholds = thresholds;
  table.epochs.reserve(thresholds.size());
  for (double t : thresholds) {
    std::optional<std::size_t> hit;
    for (const auto& row : record.rows) {
      if (row.test_accuracy >= t) {
        hit = row.epoch;
        break;
      }
    }
    table.epochs.push_back(hit);
  }
  return table;
}

distill::TeacherEnsemble load_ensemble(
    const std::filesystem::path& registry_dir,
    const std::vector<std::string>& ids) {
  const std::vector<registry::RunManifest> runs =
      registry::list_runs(registry_dir);
  std::map<std::string, const registry::RunManifest*> by_id;
  for (const auto& run : runs) by_id[run.run_id] = &run;

  distill::TeacherEnsemble ensemble;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::invalid_argument("load_ensemble: unknown run id " + id);
    }
    distill::TeacherRef ref;
    ref.id = id;
    ref.params =
        registry::load_checkpoint(registry_dir / it->second->checkpoint_path);
    ensemble.members.push_back(std::move(ref));
  }
  ensemble.validate();
  return ensemble;
}

}  // namespace kdtrain::orch
