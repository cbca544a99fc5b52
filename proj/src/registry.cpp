#include "kdtrain/registry.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kdtrain::registry {

namespace {

constexpr std::array<char, 4> kMagic = {'K', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
  const unsigned char* p;
  std::size_t left;
  std::string path;

  void need(std::size_t n) const {
    if (left < n) {
      throw CheckpointTruncated(path + ": file ends " + std::to_string(n - left) +
                                " bytes early");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
    p += 8;
    left -= 8;
    return std::bit_cast<double>(bits);
  }
};

// Shortest round-trip decimal form; keeps identical runs byte-identical
// on disk and re-readable without loss.
std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

void atomic_write(const std::filesystem::path& path, const std::string& body) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error(tmp.string() + ": cannot open for writing");
    }
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) {
      throw std::runtime_error(tmp.string() + ": write failed");
    }
  }
  std::filesystem::rename(tmp, path);
}

RunManifest pick_teacher(
    const std::filesystem::path& dir,
    const std::optional<std::vector<std::string>>& candidate_ids, bool best) {
  std::vector<RunManifest> runs = list_runs(dir);
  const RunManifest* chosen = nullptr;
  for (const auto& run : runs) {
    if (run.role != Role::Teacher) continue;
    if (candidate_ids &&
        std::find(candidate_ids->begin(), candidate_ids->end(), run.run_id) ==
            candidate_ids->end()) {
      continue;
    }
    if (chosen == nullptr) {
      chosen = &run;
      continue;
    }
    const double delta = run.final_test_accuracy - chosen->final_test_accuracy;
    const bool better = best ? delta > 0.0 : delta < 0.0;
    if (better || (delta == 0.0 && run.run_id < chosen->run_id)) {
      chosen = &run;
    }
  }
  if (chosen == nullptr) {
    throw NoTeachersFound(dir.string() + ": no teacher-role runs found");
  }
  return *chosen;
}

}  // namespace

std::string role_name(Role role) {
  switch (role) {
    case Role::Teacher:
      return "teacher";
    case Role::Student:
      return "student";
    case Role::Finetune:
      return "finetune";
    case Role::Baseline:
      return "baseline";
  }
  throw std::logic_error("role_name: unknown role");
}

Role parse_role(const std::string& name) {
  if (name == "teacher") return Role::Teacher;
  if (name == "student") return Role::Student;
  if (name == "finetune") return Role::Finetune;
  if (name == "baseline") return Role::Baseline;
  throw std::invalid_argument("parse_role: unknown role \"" + name + "\"");
}

void save_checkpoint(const nn::ModelParams& params,
                     const std::filesystem::path& path) {
  std::string body;
  body.append(kMagic.data(), kMagic.size());
  put_u32_le(body, kVersion);
  put_u32_le(body, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    put_u32_le(body, static_cast<std::uint32_t>(layer.in_width()));
    put_u32_le(body, static_cast<std::uint32_t>(layer.out_width()));
    for (double v : layer.weight.values) put_f64_le(body, v);
    for (double v : layer.bias) put_f64_le(body, v);
  }
  atomic_write(path, body);
}

nn::ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(path.string() + ": cannot open");
  }
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()),
               bytes.size(), path.string()};
  r.need(4);
  if (std::memcmp(r.p, kMagic.data(), 4) != 0) {
    throw CheckpointBadMagic(path.string() + ": bad magic");
  }
  r.p += 4;
  r.left -= 4;
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointBadVersion(path.string() + ": version " +
                               std::to_string(version) + ", expected " +
                               std::to_string(kVersion));
  }
  const std::uint32_t layer_count = r.u32();
  nn::ModelParams params;
  params.layers.reserve(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t in_w = r.u32();
    const std::uint32_t out_w = r.u32();
    nn::DenseLayer layer;
    layer.weight = Tensor2(in_w, out_w);
    for (double& v : layer.weight.values) v = r.f64();
    layer.bias.resize(out_w);
    for (double& v : layer.bias) v = r.f64();
    params.layers.push_back(std::move(layer));
  }
  if (r.left != 0) {
    throw CheckpointError(path.string() + ": " + std::to_string(r.left) +
                          " trailing bytes");
  }
  return params;
}

nlohmann::json sgd_config_to_json(const nn::SgdConfig& c) {
  return nlohmann::json{{"initial_lr", c.initial_lr},
                        {"gamma", c.gamma},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"seed", c.seed}};
}

nn::SgdConfig sgd_config_from_json(const nlohmann::json& j) {
  nn::SgdConfig c;
  c.initial_lr = j.at("initial_lr").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json policy_to_json(const distill::DistillPolicy& p) {
  nlohmann::json j{{"schedule", distill::schedule_name(p.schedule)},
                   {"sample_k", p.sample_k},
                   {"gate_on_correct", p.gate_on_correct}};
  if (p.teacher_subset) {
    j["teacher_subset"] = *p.teacher_subset;
  } else {
    j["teacher_subset"] = nullptr;
  }
  return j;
}

distill::DistillPolicy policy_from_json(const nlohmann::json& j) {
  distill::DistillPolicy p;
  p.schedule = distill::parse_schedule(j.at("schedule").get<std::string>());
  p.sample_k = j.at("sample_k").get<std::size_t>();
  p.gate_on_correct = j.at("gate_on_correct").get<bool>();
  if (j.contains("teacher_subset") && !j.at("teacher_subset").is_null()) {
    p.teacher_subset = j.at("teacher_subset").get<std::vector<std::string>>();
  }
  return p;
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["run_id"] = m.run_id;
  j["role"] = role_name(m.role);
  j["config"] = sgd_config_to_json(m.config);
  j["policy"] = m.policy ? policy_to_json(*m.policy) : nlohmann::json(nullptr);
  j["parent_ids"] = m.parent_ids;
  j["replicate_seeds"] = m.replicate_seeds;
  j["final_test_accuracy"] = m.final_test_accuracy;
  j["metrics_path"] = m.metrics_path;
  j["checkpoint_path"] = m.checkpoint_path;
  j["cost"] = {{"relative_cost", m.cost.relative_cost},
               {"estimated_wall_seconds", m.cost.estimated_wall_seconds},
               {"teacher_forward_count", m.cost.teacher_forward_count}};
  return j;
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.role = parse_role(j.at("role").get<std::string>());
  m.config = sgd_config_from_json(j.at("config"));
  if (j.contains("policy") && !j.at("policy").is_null()) {
    m.policy = policy_from_json(j.at("policy"));
  }
  m.parent_ids = j.at("parent_ids").get<std::vector<std::string>>();
  m.replicate_seeds = j.at("replicate_seeds").get<std::vector<std::uint64_t>>();
  m.final_test_accuracy = j.at("final_test_accuracy").get<double>();
  m.metrics_path = j.at("metrics_path").get<std::string>();
  m.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  const auto& cost = j.at("cost");
  m.cost.relative_cost = cost.at("relative_cost").get<double>();
  m.cost.estimated_wall_seconds =
      cost.at("estimated_wall_seconds").get<double>();
  m.cost.teacher_forward_count =
      cost.at("teacher_forward_count").get<std::uint64_t>();
  return m;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::invalid_argument(dir.string() + ": not a directory");
  }
  const std::filesystem::path path = dir / (m.run_id + ".manifest.json");
  if (std::filesystem::exists(path)) {
    throw DuplicateRunId(m.run_id + ": manifest already exists in " +
                         dir.string());
  }
  atomic_write(path, manifest_to_json(m).dump(2) + "\n");
}

std::vector<RunManifest> list_runs(const std::filesystem::path& dir) {
  std::vector<RunManifest> runs;
  if (!std::filesystem::is_directory(dir)) {
    throw std::invalid_argument(dir.string() + ": not a directory");
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!name.ends_with(".manifest.json")) continue;
    std::ifstream in(entry.path());
    nlohmann::json j;
    try {
      in >> j;
      runs.push_back(manifest_from_json(j));
    } catch (const std::exception& e) {
      throw ManifestError(entry.path().string() + ": malformed manifest (" +
                          e.what() + ")");
    }
  }
  std::sort(runs.begin(), runs.end(),
            [](const RunManifest& a, const RunManifest& b) {
              return a.run_id < b.run_id;
            });
  return runs;
}

RunManifest best_teacher(
    const std::filesystem::path& dir,
    const std::optional<std::vector<std::string>>& candidate_ids) {
  return pick_teacher(dir, candidate_ids, true);
}

RunManifest worst_teacher(
    const std::filesystem::path& dir,
    const std::optional<std::vector<std::string>>& candidate_ids) {
  return pick_teacher(dir, candidate_ids, false);
}

void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::filesystem::path& path) {
  std::string body(kMetricsHeader);
  body.push_back('\n');
  for (const auto& r : rows) {
    body += std::to_string(r.epoch);
    body.push_back(',');
    body += format_double(r.train_loss);
    body.push_back(',');
    body += format_double(r.test_accuracy);
    body.push_back(',');
    body += format_double(r.lr);
    body.push_back(',');
    body += std::to_string(r.kd_active);
    body.push_back(',');
    body += std::to_string(r.teachers_used);
    body.push_back(',');
    body += format_double(r.cum_cost_units);
    body.push_back(',');
    body += format_double(r.cum_wall_seconds_est);
    body.push_back('\n');
  }
  atomic_write(path, body);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(path.string() + ": cannot open");
  }
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error(path.string() + ": bad metrics header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::array<std::string, 8> fields;
    std::size_t idx = 0;
    while (std::getline(ss, field, ',')) {
      if (idx >= fields.size()) {
        throw std::runtime_error(path.string() + ": too many fields");
      }
      fields[idx++] = field;
    }
    if (idx != fields.size()) {
      throw std::runtime_error(path.string() + ": too few fields");
    }
    MetricsRow r;
    r.epoch = std::stoull(fields[0]);
    r.train_loss = std::stod(fields[1]);
    r.test_accuracy = std::stod(fields[2]);
    r.lr = std::stod(fields[3]);
    r.kd_active = std::stoi(fields[4]);
    r.teachers_used = std::stoull(fields[5]);
    r.cum_cost_units = std::stod(fields[6]);
    r.cum_wall_seconds_est = std::stod(fields[7]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace kdtrain::registry
