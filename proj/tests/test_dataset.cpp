#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "kdtrain/dataset.hpp"
#include "kdtrain/nncore.hpp"
#include "testutil.hpp"

using namespace kdtrain;

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(char((v >> 24) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char(v & 0xff));
}

void write_idx_images(const std::filesystem::path& path,
                      const std::vector<unsigned char>& pixels,
                      std::uint32_t count, std::uint32_t rows,
                      std::uint32_t cols, std::uint32_t magic = 0x00000803) {
  std::string body;
  put_be32(body, magic);
  put_be32(body, count);
  put_be32(body, rows);
  put_be32(body, cols);
  body.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  std::ofstream(path, std::ios::binary) << body;
}

void write_idx_labels(const std::filesystem::path& path,
                      const std::vector<unsigned char>& labels,
                      std::uint32_t magic = 0x00000801) {
  std::string body;
  put_be32(body, magic);
  put_be32(body, std::uint32_t(labels.size()));
  body.append(reinterpret_cast<const char*>(labels.data()), labels.size());
  std::ofstream(path, std::ios::binary) << body;
}

}  // namespace

TEST_CASE("spiral arms are disjoint without noise") {
  const auto ds = data::make_spirals(3, 2, 10, 0.0);
  REQUIRE(ds.size() == 20);
  std::set<std::pair<double, double>> arm0, arm1;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& target = ds.labels[i] == 0 ? arm0 : arm1;
    target.insert({ds.features.at(i, 0), ds.features.at(i, 1)});
  }
  CHECK(arm0.size() == 10);
  CHECK(arm1.size() == 10);
  for (const auto& p : arm0) CHECK(arm1.count(p) == 0);
}

TEST_CASE("spirals are bit-reproducible per seed") {
  const auto a = data::make_spirals(99, 3, 50, 0.2);
  const auto b = data::make_spirals(99, 3, 50, 0.2);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  const auto c = data::make_spirals(100, 3, 50, 0.2);
  CHECK(a.features != c.features);
}

TEST_CASE("spirals rejects bad arguments") {
  CHECK_THROWS_AS(data::make_spirals(1, 1, 10, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(data::make_spirals(1, 2, 0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(data::make_spirals(1, 2, 10, -0.1), std::invalid_argument);
}

TEST_CASE("a small MLP learns noisy spirals") {
  // End-to-end learnability: train accuracy above 90% within 200 epochs.
  const auto ds = data::make_spirals(7, 3, 200, 0.1);
  nn::SgdConfig config;
  config.initial_lr = 0.1;
  config.gamma = 0.975;
  config.batch_size = 128;
  config.epochs = 200;
  config.seed = 7;
  auto params = nn::init_params(config.seed, {2, 32, 16, 3});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = nn::lr_at_epoch(config, epoch);
    for (const auto& batch :
         data::batches(ds, config.batch_size, config.seed, epoch)) {
      const auto loss =
          nn::softmax_cross_entropy(nn::forward(params, batch.x), batch.y);
      params = nn::sgd_step(params, nn::backward(params, batch.x, loss.dlogits),
                            lr);
    }
  }
  const Tensor2 logits = nn::forward(params, ds.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    if (best == ds.labels[i]) ++correct;
  }
  CHECK(double(correct) / double(ds.size()) > 0.9);
}

TEST_CASE("blobs with zero spread collapse onto their centers") {
  const auto ds = data::make_blobs(11, 3, 5, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t base = c * 5;
    for (std::size_t i = 1; i < 5; ++i) {
      CHECK(ds.features.at(base + i, 0) == ds.features.at(base, 0));
      CHECK(ds.features.at(base + i, 1) == ds.features.at(base, 1));
    }
  }
}

TEST_CASE("blobs are bit-reproducible per seed") {
  const auto a = data::make_blobs(5, 4, 20, 0.3);
  const auto b = data::make_blobs(5, 4, 20, 0.3);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
}

TEST_CASE("tight blobs are nearest-centroid separable") {
  // Independent oracle: classify by nearest class mean, a linear rule.
  const auto ds = data::make_blobs(42, 5, 40, 0.1);
  std::vector<double> cx(5, 0.0), cy(5, 0.0), n(5, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    cx[ds.labels[i]] += ds.features.at(i, 0);
    cy[ds.labels[i]] += ds.features.at(i, 1);
    n[ds.labels[i]] += 1.0;
  }
  for (std::size_t c = 0; c < 5; ++c) {
    cx[c] /= n[c];
    cy[c] /= n[c];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < 5; ++c) {
      const double dx = ds.features.at(i, 0) - cx[c];
      const double dy = ds.features.at(i, 1) - cy[c];
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best == ds.labels[i]) ++correct;
  }
  CHECK(double(correct) / double(ds.size()) > 0.95);
}

TEST_CASE("load_idx reads a hand-built fixture") {
  testutil::TempDir dir;
  const auto img_path = dir.path() / "img.idx";
  const auto lbl_path = dir.path() / "lbl.idx";
  // Two 2x2 images: all-0 and all-255 with one 128.
  write_idx_images(img_path, {0, 0, 0, 0, 255, 255, 128, 255}, 2, 2, 2);
  write_idx_labels(lbl_path, {1, 0});
  const auto ds = data::load_idx(img_path, lbl_path);
  REQUIRE(ds.size() == 2);
  REQUIRE(ds.features.cols == 4);
  CHECK(ds.class_count == 2);
  for (std::size_t j = 0; j < 4; ++j) CHECK(ds.features.at(0, j) == 0.0);
  CHECK(ds.features.at(1, 0) == 1.0);
  CHECK(ds.features.at(1, 2) == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
  CHECK(ds.labels == nn::LabelBatch{1, 0});
}

TEST_CASE("load_idx round-trips a synthetic file exactly") {
  testutil::TempDir dir;
  std::mt19937_64 eng(8);
  std::vector<unsigned char> pixels(3 * 4 * 4);
  for (auto& p : pixels) p = static_cast<unsigned char>(eng() & 0xff);
  std::vector<unsigned char> labels = {2, 0, 5};
  const auto img_path = dir.path() / "img.idx";
  const auto lbl_path = dir.path() / "lbl.idx";
  write_idx_images(img_path, pixels, 3, 4, 4);
  write_idx_labels(lbl_path, labels);
  const auto ds = data::load_idx(img_path, lbl_path);
  REQUIRE(ds.size() == 3);
  CHECK(ds.class_count == 6);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    CHECK(ds.features.values[i] == double(pixels[i]) / 255.0);
  }
}

TEST_CASE("load_idx distinguishes its failure modes") {
  testutil::TempDir dir;
  const auto img_path = dir.path() / "img.idx";
  const auto lbl_path = dir.path() / "lbl.idx";

  SUBCASE("count mismatch") {
    write_idx_images(img_path, std::vector<unsigned char>(8, 0), 2, 2, 2);
    write_idx_labels(lbl_path, {1, 0, 1});
    CHECK_THROWS_AS(data::load_idx(img_path, lbl_path),
                    data::IdxCountMismatch);
  }
  SUBCASE("wrong image magic") {
    write_idx_images(img_path, std::vector<unsigned char>(8, 0), 2, 2, 2,
                     0x00000801);
    write_idx_labels(lbl_path, {1, 0});
    CHECK_THROWS_AS(data::load_idx(img_path, lbl_path), data::IdxBadMagic);
  }
  SUBCASE("wrong label magic") {
    write_idx_images(img_path, std::vector<unsigned char>(8, 0), 2, 2, 2);
    write_idx_labels(lbl_path, {1, 0}, 0x00000803);
    CHECK_THROWS_AS(data::load_idx(img_path, lbl_path), data::IdxBadMagic);
  }
  SUBCASE("truncated payload") {
    write_idx_images(img_path, std::vector<unsigned char>(5, 0), 2, 2, 2);
    write_idx_labels(lbl_path, {1, 0});
    CHECK_THROWS_AS(data::load_idx(img_path, lbl_path), data::IdxTruncated);
  }
  SUBCASE("truncated header") {
    std::ofstream(img_path, std::ios::binary) << "\x00\x00\x08";
    write_idx_labels(lbl_path, {1});
    CHECK_THROWS_AS(data::load_idx(img_path, lbl_path), data::IdxTruncated);
  }
  SUBCASE("missing file") {
    write_idx_labels(lbl_path, {1});
    CHECK_THROWS_AS(data::load_idx(dir.path() / "nope.idx", lbl_path),
                    data::IdxError);
  }
}

TEST_CASE("batches keep the final partial batch") {
  const auto ds = data::make_blobs(1, 2, 5, 0.5);  // N = 10
  const auto bs = data::batches(ds, 3, 77, 0);
  REQUIRE(bs.size() == 4);
  CHECK(bs[0].x.rows == 3);
  CHECK(bs[1].x.rows == 3);
  CHECK(bs[2].x.rows == 3);
  CHECK(bs[3].x.rows == 1);
}

TEST_CASE("batches partition the dataset exactly once") {
  // Features are unique per row, so multiset equality proves the
  // partition property.
  const auto ds = data::make_spirals(13, 3, 9, 0.05);  // N = 27
  const auto bs = data::batches(ds, 4, 5, 2);
  std::vector<double> seen;
  for (const auto& b : bs) {
    for (double v : b.x.values) seen.push_back(v);
  }
  std::vector<double> expected = ds.features.values;
  std::sort(seen.begin(), seen.end());
  std::sort(expected.begin(), expected.end());
  CHECK(seen == expected);
}

TEST_CASE("batch plans are permutations, fresh per epoch, reproducible") {
  const auto plan0 = data::make_batch_plan(16, 4, 9, 0);
  const auto plan1 = data::make_batch_plan(16, 4, 9, 1);
  const auto plan0_again = data::make_batch_plan(16, 4, 9, 0);
  CHECK(plan0.order == plan0_again.order);
  CHECK(plan0.order != plan1.order);
  auto sorted = plan0.order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(16);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  CHECK(sorted == iota);
  CHECK_THROWS_AS(data::make_batch_plan(10, 0, 1, 0), std::invalid_argument);
}
