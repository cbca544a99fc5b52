#include "kdtrain/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdtrain/gradcheck.hpp"
#include "kdtrain/registry.hpp"
#include "kdtrain/rng.hpp"

namespace kdtrain::cli {

namespace {

constexpr double kGradTolerance = 1e-4;

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
  return buf;
}

std::string fixed(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

std::vector<double> parse_double_list(const std::string& s, const char* flag) {
  std::vector<double> values;
  for (const std::string& item : split_list(s)) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      values.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(flag) + ": cannot parse \"" +
                                  item + "\" as a number");
    }
  }
  if (values.empty()) {
    throw std::invalid_argument(std::string(flag) + ": empty list");
  }
  return values;
}

// Shuffled per-class split of one generated pool into train/test halves.
std::pair<data::Dataset, data::Dataset> split_per_class(
    const data::Dataset& full, std::size_t train_per_class,
    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(full.class_count);
  for (std::size_t i = 0; i < full.size(); ++i) {
    by_class[full.labels[i]].push_back(i);
  }
  std::vector<std::size_t> train_idx, test_idx;
  std::mt19937_64 eng(seed);
  for (auto& bucket : by_class) {
    std::shuffle(bucket.begin(), bucket.end(), eng);
    if (bucket.size() < train_per_class) {
      throw std::invalid_argument("split: class has too few examples");
    }
    train_idx.insert(train_idx.end(), bucket.begin(),
                     bucket.begin() + train_per_class);
    test_idx.insert(test_idx.end(), bucket.begin() + train_per_class,
                    bucket.end());
  }
  auto take = [&](const std::vector<std::size_t>& idx, const char* tag) {
    data::Dataset out;
    out.name = full.name + tag;
    out.class_count = full.class_count;
    out.features = Tensor2(idx.size(), full.features.cols);
    out.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(&full.features.values[idx[i] * full.features.cols],
                  full.features.cols, &out.features.values[i * full.features.cols]);
      out.labels.push_back(full.labels[idx[i]]);
    }
    return out;
  };
  return {take(train_idx, ".train"), take(test_idx, ".test")};
}

struct CommonFlags {
  std::string config_path;
  std::string registry_override;
  std::string run_id;
  double lr = -1.0;
  double gamma = -1.0;
  std::int64_t seed = -1;
  std::int64_t epochs = -1;
  std::int64_t batch_size = -1;
};

void apply_overrides(AppConfig& config, const CommonFlags& flags) {
  if (!flags.registry_override.empty()) {
    config.registry_dir = flags.registry_override;
  }
  if (flags.lr >= 0.0) config.sgd.initial_lr = flags.lr;
  if (flags.gamma >= 0.0) config.sgd.gamma = flags.gamma;
  if (flags.seed >= 0) config.sgd.seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.epochs >= 0) config.sgd.epochs = static_cast<std::size_t>(flags.epochs);
  if (flags.batch_size > 0) {
    config.sgd.batch_size = static_cast<std::size_t>(flags.batch_size);
  }
}

std::vector<std::string> all_teacher_ids(const std::filesystem::path& dir) {
  std::vector<std::string> ids;
  for (const auto& run : registry::list_runs(dir)) {
    if (run.role == registry::Role::Teacher) ids.push_back(run.run_id);
  }
  return ids;
}

// "best" / "worst" / "all" / explicit comma list -> concrete run ids.
std::vector<std::string> resolve_teacher_ids(const std::string& spec,
                                             const std::filesystem::path& dir) {
  if (spec == "best") return {registry::best_teacher(dir).run_id};
  if (spec == "worst") return {registry::worst_teacher(dir).run_id};
  if (spec == "all" || spec.empty()) {
    auto ids = all_teacher_ids(dir);
    if (ids.empty()) {
      throw registry::NoTeachersFound(dir.string() +
                                      ": no teacher-role runs found");
    }
    return ids;
  }
  return split_list(spec);
}

std::string teacher_summary_line(const orch::RunRecord& record) {
  return record.manifest.run_id +
         " lr=" + fixed(record.manifest.config.initial_lr, 3) +
         " final=" + pct(record.manifest.final_test_accuracy) + "%" +
         " wall=" + fixed(record.manifest.cost.estimated_wall_seconds, 0) + "s";
}

int cmd_teacher(const AppConfig& config, const CommonFlags& flags, bool wide,
                std::ostream& out) {
  const orch::RunEnv env = make_env(config);
  const std::string run_id =
      flags.run_id.empty() ? (wide ? "W0" : "T0") : flags.run_id;
  const orch::RunRecord record =
      wide ? orch::train_wide_baseline(env, config.sgd, run_id)
           : orch::train_teacher(env, config.sgd, run_id);
  out << teacher_summary_line(record) << "\n";
  return kExitOk;
}

int cmd_sweep(const AppConfig& config, const std::string& lrs_flag,
              std::ostream& out, std::ostream& err) {
  const std::vector<double> lrs = parse_double_list(lrs_flag, "--lrs");
  const orch::RunEnv env = make_env(config);
  const orch::SweepResult result = orch::sweep(env, lrs, config.sgd);
  for (const auto& record : result.records) {
    out << teacher_summary_line(record) << "\n";
  }
  for (const auto& failure : result.failures) {
    err << failure.run_id << " DIVERGED at epoch " << failure.epoch << "\n";
  }
  return result.failures.empty() ? kExitOk : kExitMissingRuns;
}

int cmd_distill(AppConfig config, const CommonFlags& flags,
                const std::string& teachers_flag,
                const std::string& schedule_flag, std::int64_t sample_k,
                std::optional<bool> gate, std::int64_t replicates,
                std::ostream& out) {
  const orch::RunEnv env = make_env(config);
  const std::vector<std::string> ids =
      resolve_teacher_ids(teachers_flag, env.registry_dir);
  const distill::TeacherEnsemble ensemble =
      orch::load_ensemble(env.registry_dir, ids);

  distill::DistillPolicy policy;
  if (config.policy) policy = *config.policy;
  if (!schedule_flag.empty()) {
    policy.schedule = distill::parse_schedule(schedule_flag);
  }
  policy.sample_k = sample_k >= 0 ? static_cast<std::size_t>(sample_k)
                    : (config.policy ? config.policy->sample_k
                                     : ensemble.size());
  if (gate) policy.gate_on_correct = *gate;
  policy.teacher_subset = ids;

  const std::size_t reps =
      replicates > 0 ? static_cast<std::size_t>(replicates)
                     : config.replicates;
  const std::string run_id = flags.run_id.empty() ? "S0" : flags.run_id;

  const orch::StudentResult result =
      orch::train_student(env, config.sgd, ensemble, policy, reps, run_id);
  const auto& cost = result.aggregate.manifest.cost;
  out << run_id << " teachers=";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << (i ? "," : "") << ids[i];
  }
  out << " schedule=" << distill::schedule_name(policy.schedule)
      << " k=" << policy.sample_k
      << " gate=" << (policy.gate_on_correct ? "on" : "off")
      << " replicates=" << reps << "\n";
  out << run_id << " final mean accuracy "
      << pct(result.aggregate.manifest.final_test_accuracy)
      << "%  relative cost " << fixed(cost.relative_cost, 3) << "  overhead "
      << pct(cost.relative_cost - 1.0) << "%  wall estimate "
      << fixed(cost.estimated_wall_seconds, 0) << "s\n";
  return kExitOk;
}

int cmd_finetune(AppConfig config, const CommonFlags& flags,
                 const std::string& teacher_flag, std::ostream& out) {
  // The workflow default: restart from the best teacher at lr 0.1 unless
  // the caller says otherwise.
  if (flags.lr < 0.0) config.sgd.initial_lr = 0.1;
  const orch::RunEnv env = make_env(config);
  std::string teacher_id = teacher_flag;
  if (teacher_id.empty() || teacher_id == "best") {
    teacher_id = registry::best_teacher(env.registry_dir).run_id;
  } else if (teacher_id == "worst") {
    teacher_id = registry::worst_teacher(env.registry_dir).run_id;
  }
  const std::string run_id = flags.run_id.empty() ? "F0" : flags.run_id;
  const orch::RunRecord record =
      orch::finetune_from(env, teacher_id, config.sgd, run_id);
  out << run_id << " from " << teacher_id
      << " lr=" << fixed(record.manifest.config.initial_lr, 3)
      << " final=" << pct(record.manifest.final_test_accuracy) << "%"
      << " wall=" << fixed(record.manifest.cost.estimated_wall_seconds, 0)
      << "s\n";
  return kExitOk;
}

int cmd_report(const std::string& registry_dir,
               const std::string& thresholds_flag, const std::string& out_path,
               std::ostream& out) {
  const std::vector<double> thresholds =
      parse_double_list(thresholds_flag, "--thresholds");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument("--thresholds: must be ascending");
  }
  const std::filesystem::path dir(registry_dir);
  const std::vector<registry::RunManifest> runs = registry::list_runs(dir);
  if (runs.empty()) {
    throw registry::NoTeachersFound(registry_dir + ": registry has no runs");
  }

  std::string table = "run_id";
  for (double t : thresholds) table += "," + pct(t) + "%";
  table += "\n";
  std::string pareto = "run_id,final_accuracy_pct,relative_cost,overhead_pct\n";
  for (const auto& run : runs) {
    orch::RunRecord record;
    record.manifest = run;
    record.rows = registry::read_metrics_csv(dir / run.metrics_path);
    const orch::ThresholdTable tt =
        orch::epochs_to_accuracy(record, thresholds);
    table += run.run_id;
    for (const auto& epoch : tt.epochs) {
      table += ",";
      table += epoch ? std::to_string(*epoch) : "---";
    }
    table += "\n";
    pareto += run.run_id + "," + pct(run.final_test_accuracy) + "," +
              fixed(run.cost.relative_cost, 3) + "," +
              pct(run.cost.relative_cost - 1.0) + "\n";
  }

  const std::filesystem::path main_path(out_path);
  std::filesystem::path pareto_path = main_path;
  pareto_path.replace_extension(".pareto" +
                                main_path.extension().string());
  std::ofstream(main_path, std::ios::trunc) << table;
  std::ofstream(pareto_path, std::ios::trunc) << pareto;
  out << "wrote " << main_path.string() << " (" << runs.size() << " runs x "
      << thresholds.size() << " thresholds)\n";
  out << "wrote " << pareto_path.string() << "\n";
  return kExitOk;
}

int cmd_verify_grad(std::int64_t seed, std::int64_t trials, std::ostream& out,
                    std::ostream& err) {
  if (trials < 1) {
    throw std::invalid_argument("--trials: must be >= 1");
  }
  gradcheck::Options options;
  options.seed = static_cast<std::uint64_t>(seed);
  options.trials = static_cast<std::size_t>(trials);
  const gradcheck::Report report = gradcheck::run(options);
  out << "checked " << report.configs_checked
      << " configurations; max relative error ";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", report.max_rel_error);
  out << buf << "\n";
  if (report.passed(kGradTolerance)) {
    out << "PASS (tolerance 1e-4)\n";
    return kExitOk;
  }
  err << "FAIL: " << report.worst_case << "\n";
  return kExitVerifyFailed;
}

}  // namespace

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument(path.string() + ": cannot open config");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument(path.string() + ": bad JSON (" + e.what() +
                                ")");
  }
  AppConfig config;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    config.data.kind = d.value("kind", config.data.kind);
    config.data.seed = d.value("seed", config.data.seed);
    config.data.classes = d.value("classes", config.data.classes);
    config.data.per_class = d.value("per_class", config.data.per_class);
    config.data.test_per_class =
        d.value("test_per_class", config.data.test_per_class);
    config.data.noise_std = d.value("noise_std", config.data.noise_std);
    config.data.spread = d.value("spread", config.data.spread);
    config.data.train_images = d.value("train_images", std::string());
    config.data.train_labels = d.value("train_labels", std::string());
    config.data.test_images = d.value("test_images", std::string());
    config.data.test_labels = d.value("test_labels", std::string());
  }
  if (j.contains("model")) {
    config.hidden =
        j.at("model").value("hidden", std::vector<std::size_t>{64, 32});
  }
  if (j.contains("sgd")) {
    const auto& s = j.at("sgd");
    config.sgd.initial_lr = s.value("initial_lr", config.sgd.initial_lr);
    config.sgd.gamma = s.value("gamma", config.sgd.gamma);
    config.sgd.batch_size = s.value("batch_size", config.sgd.batch_size);
    config.sgd.epochs = s.value("epochs", config.sgd.epochs);
    config.sgd.seed = s.value("seed", config.sgd.seed);
  }
  if (j.contains("policy") && !j.at("policy").is_null()) {
    const auto& p = j.at("policy");
    distill::DistillPolicy policy;
    policy.schedule =
        distill::parse_schedule(p.value("schedule", std::string("every_epoch")));
    policy.sample_k = p.value("sample_k", std::size_t{0});
    policy.gate_on_correct = p.value("gate_on_correct", false);
    if (p.contains("teacher_subset") && !p.at("teacher_subset").is_null()) {
      policy.teacher_subset =
          p.at("teacher_subset").get<std::vector<std::string>>();
    }
    config.policy = policy;
  }
  config.replicates = j.value("replicates", config.replicates);
  config.registry_dir = j.value("registry_dir", config.registry_dir);
  return config;
}

orch::RunEnv make_env(const AppConfig& config) {
  orch::RunEnv env;
  const DataConfig& d = config.data;
  if (d.kind == "spirals" || d.kind == "blobs") {
    const std::size_t pool = d.per_class + d.test_per_class;
    const data::Dataset full =
        d.kind == "spirals"
            ? data::make_spirals(d.seed, d.classes, pool, d.noise_std)
            : data::make_blobs(d.seed, d.classes, pool, d.spread);
    auto [train, test] =
        split_per_class(full, d.per_class, mix_seed(d.seed, 0x5317a9));
    env.train = std::move(train);
    env.test = std::move(test);
  } else if (d.kind == "idx") {
    env.train = data::load_idx(d.train_images, d.train_labels);
    env.test = data::load_idx(d.test_images, d.test_labels);
  } else {
    throw std::invalid_argument("data.kind must be spirals, blobs or idx");
  }
  env.hidden_widths = config.hidden;
  env.registry_dir = config.registry_dir;
  return env;
}

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"training-run engine with cross-run knowledge distillation"};
  app.require_subcommand(1);

  CommonFlags flags;
  bool wide = false;
  std::string lrs_flag = "0.5,0.2,0.1,0.05,0.01";
  std::string teachers_flag = "all";
  std::string teacher_flag = "best";
  std::string schedule_flag;
  std::int64_t sample_k = -1;
  std::optional<bool> gate;
  std::int64_t replicates = -1;
  std::string registry_dir = "runs";
  std::string thresholds_flag;
  std::string report_out = "report.csv";
  std::int64_t vg_seed = 1;
  std::int64_t vg_trials = 1;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", flags.config_path,
                                "JSON run configuration file");
    if (needs_config) opt->required();
    cmd->add_option("--registry", flags.registry_override,
                    "registry directory (overrides config)");
    cmd->add_option("--run-id", flags.run_id, "identifier for the new run");
    cmd->add_option("--seed", flags.seed, "base RNG seed (overrides config)");
    cmd->add_option("--epochs", flags.epochs, "epoch count (overrides config)");
    cmd->add_option("--batch-size", flags.batch_size,
                    "batch size (overrides config)");
    cmd->add_option("--gamma", flags.gamma,
                    "lr decay factor (overrides config)");
  };

  CLI::App* teacher = app.add_subcommand("teacher", "train one plain run");
  add_common(teacher, true);
  teacher->add_option("--lr", flags.lr, "initial learning rate");
  teacher->add_flag("--wide", wide,
                    "width-doubled baseline model (role: baseline)");

  CLI::App* sweep =
      app.add_subcommand("sweep", "train one teacher per learning rate");
  add_common(sweep, true);
  sweep->add_option("--lrs", lrs_flag, "comma-separated learning rates");

  CLI::App* distill_cmd = app.add_subcommand(
      "distill", "train a student against stored teachers");
  add_common(distill_cmd, true);
  distill_cmd->add_option(
      "--teachers", teachers_flag,
      "comma-separated run ids, or best / worst / all");
  distill_cmd->add_option("--schedule", schedule_flag,
                          "every_epoch | first20 | middle20 | last20 | "
                          "first_last10 | one_per_ten | two_per_twenty");
  distill_cmd->add_option("--sample-k", sample_k,
                          "teachers sampled per step (default: all)");
  distill_cmd->add_option("--gate", gate,
                          "drop the distillation term when the averaged "
                          "teacher prediction is wrong");
  distill_cmd->add_option("--replicates", replicates,
                          "replicate count (default from config)");

  CLI::App* finetune = app.add_subcommand(
      "finetune", "continue training from a stored checkpoint");
  add_common(finetune, true);
  finetune->add_option("--teacher", teacher_flag,
                       "run id to start from, or best / worst");
  finetune->add_option("--lr", flags.lr, "initial learning rate (default 0.1)");

  CLI::App* report =
      app.add_subcommand("report", "emit epochs-to-accuracy and cost tables");
  report->add_option("--registry", registry_dir, "registry directory")
      ->required();
  report->add_option("--thresholds", thresholds_flag,
                     "comma-separated accuracy fractions, ascending")
      ->required();
  report->add_option("--out", report_out, "output CSV path");

  CLI::App* verify =
      app.add_subcommand("verify-grad", "finite-difference gradient gate");
  verify->add_option("--seed", vg_seed, "RNG seed");
  verify->add_option("--trials", vg_trials, "config sweeps to run");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  try {
    AppConfig config;
    if (!flags.config_path.empty()) config = load_config(flags.config_path);
    apply_overrides(config, flags);

    if (app.got_subcommand(teacher)) {
      return cmd_teacher(config, flags, wide, out);
    }
    if (app.got_subcommand(sweep)) {
      return cmd_sweep(config, lrs_flag, out, err);
    }
    if (app.got_subcommand(distill_cmd)) {
      return cmd_distill(config, flags, teachers_flag, schedule_flag,
                         sample_k, gate, replicates, out);
    }
    if (app.got_subcommand(finetune)) {
      return cmd_finetune(config, flags, teacher_flag, out);
    }
    if (app.got_subcommand(report)) {
      return cmd_report(registry_dir, thresholds_flag, report_out, out);
    }
    if (app.got_subcommand(verify)) {
      return cmd_verify_grad(vg_seed, vg_trials, out, err);
    }
  } catch (const orch::DivergedRun& e) {
    err << e.what() << "\n";
    return kExitMissingRuns;
  } catch (const registry::NoTeachersFound& e) {
    err << e.what() << "\n";
    return kExitMissingRuns;
  } catch (const registry::CheckpointError& e) {
    err << e.what() << "\n";
    return kExitMissingRuns;
  } catch (const registry::ManifestError& e) {
    err << e.what() << "\n";
    return kExitMissingRuns;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }
  err << "no command given\n";
  return kExitUsage;
}

}  // namespace kdtrain::cli
