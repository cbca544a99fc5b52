#include "kdtrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "kdtrain/rng.hpp"

namespace kdtrain::data {

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (in.gcount() != 4) {
    throw IdxTruncated(path + ": truncated header");
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t count,
                                        const std::string& path) {
  std::vector<unsigned char> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw IdxTruncated(path + ": payload shorter than header promises");
  }
  return bytes;
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset make_spirals(std::uint64_t seed, std::size_t classes,
                     std::size_t per_class, double noise_std) {
  if (classes < 2) throw std::invalid_argument("make_spirals: classes >= 2");
  if (per_class < 1) throw std::invalid_argument("make_spirals: per_class >= 1");
  if (noise_std < 0.0) throw std::invalid_argument("make_spirals: noise_std >= 0");

  std::mt19937_64 eng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t n = classes * per_class;
  Dataset ds;
  ds.name = "spirals";
  ds.class_count = classes;
  ds.features = Tensor2(n, 2);
  ds.labels.reserve(n);

  // Each arm sweeps 1.5 turns; arms are offset evenly in angle. Radius
  // starts strictly above zero so zero-noise arms never intersect.
  const double arm_offset = 2.0 * std::numbers::pi / static_cast<double>(classes);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      const double t =
          static_cast<double>(i + 1) / static_cast<double>(per_class);
      const double radius = t;
      const double angle = 3.0 * std::numbers::pi * t +
                           arm_offset * static_cast<double>(c);
      double px = radius * std::sin(angle);
      double py = radius * std::cos(angle);
      if (noise_std > 0.0) {
        px += noise_std * noise(eng);
        py += noise_std * noise(eng);
      }
      ds.features.at(row, 0) = px;
      ds.features.at(row, 1) = py;
      ds.labels.push_back(static_cast<nn::Label>(c));
    }
  }
  return ds;
}

Dataset make_blobs(std::uint64_t seed, std::size_t classes,
                   std::size_t per_class, double spread) {
  if (classes < 2) throw std::invalid_argument("make_blobs: classes >= 2");
  if (per_class < 1) throw std::invalid_argument("make_blobs: per_class >= 1");
  if (spread < 0.0) throw std::invalid_argument("make_blobs: spread >= 0");

  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> center_dist(-5.0, 5.0);
  std::normal_distribution<double> scatter(0.0, 1.0);

  std::vector<std::pair<double, double>> centers;
  centers.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double cx = center_dist(eng);
    const double cy = center_dist(eng);
    centers.emplace_back(cx, cy);
  }

  const std::size_t n = classes * per_class;
  Dataset ds;
  ds.name = "blobs";
  ds.class_count = classes;
  ds.features = Tensor2(n, 2);
  ds.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      double px = centers[c].first;
      double py = centers[c].second;
      if (spread > 0.0) {
        px += spread * scatter(eng);
        py += spread * scatter(eng);
      }
      ds.features.at(row, 0) = px;
      ds.features.at(row, 1) = py;
      ds.labels.push_back(static_cast<nn::Label>(c));
    }
  }
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError(images_path.string() + ": cannot open");
  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw IdxError(labels_path.string() + ": cannot open");

  const std::string img_name = images_path.string();
  const std::string lbl_name = labels_path.string();

  const std::uint32_t img_magic = read_u32_be(img, img_name);
  if (img_magic != kImageMagic) {
    throw IdxBadMagic(img_name + ": expected image magic 0x00000803");
  }
  const std::uint32_t img_count = read_u32_be(img, img_name);
  const std::uint32_t img_rows = read_u32_be(img, img_name);
  const std::uint32_t img_cols = read_u32_be(img, img_name);

  const std::uint32_t lbl_magic = read_u32_be(lbl, lbl_name);
  if (lbl_magic != kLabelMagic) {
    throw IdxBadMagic(lbl_name + ": expected label magic 0x00000801");
  }
  const std::uint32_t lbl_count = read_u32_be(lbl, lbl_name);

  if (img_count != lbl_count) {
    throw IdxCountMismatch(img_name + " has " + std::to_string(img_count) +
                           " images but " + lbl_name + " has " +
                           std::to_string(lbl_count) + " labels");
  }

  const std::size_t pixels = std::size_t(img_rows) * std::size_t(img_cols);
  const auto img_bytes = read_payload(img, std::size_t(img_count) * pixels,
                                      img_name);
  const auto lbl_bytes = read_payload(lbl, lbl_count, lbl_name);

  Dataset ds;
  ds.name = images_path.stem().string();
  ds.features = Tensor2(img_count, pixels);
  for (std::size_t i = 0; i < img_bytes.size(); ++i) {
    ds.features.values[i] = static_cast<double>(img_bytes[i]) / 255.0;
  }
  ds.labels.reserve(lbl_count);
  nn::Label max_label = 0;
  for (unsigned char b : lbl_bytes) {
    ds.labels.push_back(static_cast<nn::Label>(b));
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.class_count = std::size_t(max_label) + 1;
  return ds;
}

BatchPlan make_batch_plan(std::size_t n, std::size_t batch_size,
                          std::uint64_t base_seed, std::size_t epoch) {
  if (batch_size < 1) {
    throw std::invalid_argument("make_batch_plan: batch_size >= 1");
  }
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.epoch_seed = mix_seed(base_seed, epoch);
  plan.order.resize(n);
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  std::mt19937_64 eng(plan.epoch_seed);
  std::shuffle(plan.order.begin(), plan.order.end(), eng);
  return plan;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                           std::uint64_t base_seed, std::size_t epoch) {
  const BatchPlan plan =
      make_batch_plan(ds.size(), batch_size, base_seed, epoch);
  std::vector<Batch> out;
  const std::size_t n = ds.size();
  const std::size_t dim = ds.features.cols;
  out.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    Batch b;
    b.x = Tensor2(count, dim);
    b.y.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = plan.order[start + i];
      std::copy_n(&ds.features.values[src * dim], dim,
                  &b.x.values[i * dim]);
      b.y.push_back(ds.labels[src]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace kdtrain::data
