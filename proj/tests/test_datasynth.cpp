#include <cmath>
#include <filesystem>
#include <numeric>

#include "vaecomp/datasynth.hpp"

#include "doctest.h"

using namespace vaecomp;

namespace {

double mean_of(const Array& a, int64_t row) {
  const int64_t per = a.numel() / a.shape[0];
  double s = 0;
  for (int64_t i = 0; i < per; ++i) s += a.v[static_cast<size_t>(row * per + i)];
  return s / static_cast<double>(per);
}

double mean_abs(const Array& a, int64_t row) {
  const int64_t per = a.numel() / a.shape[0];
  double s = 0;
  for (int64_t i = 0; i < per; ++i) s += std::abs(a.v[static_cast<size_t>(row * per + i)]);
  return s / static_cast<double>(per);
}

}  // namespace

TEST_CASE("brightness dataset is bit-identical for equal seeds") {
  BrightnessDataset a = gen_brightness(5, 10, 32);
  BrightnessDataset b = gen_brightness(5, 10, 32);
  CHECK(a.train.v == b.train.v);
  CHECK(a.calibration.v == b.calibration.v);
  CHECK(a.test_id.v == b.test_id.v);
  CHECK(a.test_ood.v == b.test_ood.v);

  BrightnessDataset c = gen_brightness(6, 10, 32);
  CHECK(a.train.v != c.train.v);
}

TEST_CASE("brightness splits have the documented shapes and ratio") {
  BrightnessDataset ds = gen_brightness(1, 10, 32);
  // 10 scenes: 2 calibration, 4 train, 4 id-test per partition pair
  CHECK(ds.train.shape == std::vector<int64_t>{8, 3, 32, 32});
  CHECK(ds.calibration.shape == std::vector<int64_t>{4, 3, 32, 32});
  CHECK(ds.test_id.shape == std::vector<int64_t>{8, 3, 32, 32});
  CHECK(ds.test_ood.shape == std::vector<int64_t>{10, 3, 32, 32});
  CHECK(ds.train.shape[0] == 2 * ds.calibration.shape[0]);
  CHECK(ds.calib_partitions ==
        std::vector<std::string>{"low", "medium", "low", "medium"});

  CHECK_THROWS_AS(gen_brightness(1, 3, 32), Error);
  CHECK_THROWS_AS(gen_brightness(1, 10, 64), Error);
}

TEST_CASE("brightness ordering holds per scene: low < medium < high") {
  BrightnessDataset ds = gen_brightness(9, 10, 32);
  // train rows come in (low, medium) pairs of the same scene
  for (int64_t i = 0; i < ds.train.shape[0]; i += 2) {
    CHECK(mean_of(ds.train, i) < mean_of(ds.train, i + 1));
  }
  // calibration alternates low/medium over the same scene
  for (int64_t i = 0; i < ds.calibration.shape[0]; i += 2)
    CHECK(mean_of(ds.calibration, i) < mean_of(ds.calibration, i + 1));
  // the ood split is brighter than every id split on average
  auto split_mean = [&](const Array& a) {
    double s = 0;
    for (int64_t r = 0; r < a.shape[0]; ++r) s += mean_of(a, r);
    return s / static_cast<double>(a.shape[0]);
  };
  CHECK(split_mean(ds.test_ood) > split_mean(ds.train));
  CHECK(split_mean(ds.test_ood) > split_mean(ds.test_id));
}

TEST_CASE("brightness pixels stay inside [0, 1]") {
  BrightnessDataset ds = gen_brightness(4, 5, 32);
  for (const Array* a : {&ds.train, &ds.calibration, &ds.test_id, &ds.test_ood})
    for (double p : a->v) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
}

TEST_CASE("brightness dataset round-trips through the directory format") {
  BrightnessDataset ds = gen_brightness(7, 5, 32);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "bds-test").string();
  save_brightness(ds, dir);
  BrightnessDataset back = load_brightness(dir);
  CHECK(back.seed == ds.seed);
  CHECK(back.size == 32);
  CHECK(back.calib_partitions == ds.calib_partitions);
  CHECK(back.train.shape == ds.train.shape);
  // float32 persistence: values agree to float precision
  for (size_t i = 0; i < ds.train.v.size(); ++i)
    CHECK(static_cast<float>(ds.train.v[i]) == static_cast<float>(back.train.v[i]));
  std::filesystem::remove_all(dir);
}

TEST_CASE("flow dataset is deterministic and shaped as windows of six frames") {
  FlowDataset a = gen_flows(11, 8, 32);
  FlowDataset b = gen_flows(11, 8, 32);
  CHECK(a.train_h.v == b.train_h.v);
  CHECK(a.test_v.v == b.test_v.v);
  CHECK(a.train_h.shape == std::vector<int64_t>{8, 6, 32, 32});
  CHECK(a.test_h.shape == std::vector<int64_t>{8, 6, 32, 32});
  CHECK(a.test_labels.size() == 8);
  const int ood = std::accumulate(a.test_labels.begin(), a.test_labels.end(), 0);
  CHECK(ood == 4);  // 50/50 split
  CHECK_THROWS_AS(gen_flows(11, 1, 32), Error);
}

TEST_CASE("ood flow windows carry much larger vertical magnitudes") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    FlowDataset ds = gen_flows(seed, 10, 32);
    double id_mag = 0, ood_mag = 0;
    int n_id = 0, n_ood = 0;
    for (size_t i = 0; i < ds.test_labels.size(); ++i) {
      const double m = mean_abs(ds.test_v, static_cast<int64_t>(i));
      if (ds.test_labels[i]) {
        ood_mag += m;
        ++n_ood;
      } else {
        id_mag += m;
        ++n_id;
      }
    }
    CAPTURE(seed);
    CHECK(ood_mag / n_ood > 1.3 * (id_mag / n_id));
    // the horizontal component is untouched by the streaks
    double h_id = 0, h_ood = 0;
    for (size_t i = 0; i < ds.test_labels.size(); ++i)
      (ds.test_labels[i] ? h_ood : h_id) += mean_abs(ds.test_h, static_cast<int64_t>(i));
    CHECK(h_ood / n_ood < 2.0 * (h_id / n_id + 0.05));
  }
}

TEST_CASE("flow dataset round-trips through the directory format") {
  FlowDataset ds = gen_flows(13, 4, 32);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "fds-test").string();
  save_flows(ds, dir);
  FlowDataset back = load_flows(dir);
  CHECK(back.test_labels == ds.test_labels);
  CHECK(back.train_v.shape == ds.train_v.shape);
  for (size_t i = 0; i < ds.train_v.v.size(); ++i)
    CHECK(static_cast<float>(ds.train_v.v[i]) == static_cast<float>(back.train_v.v[i]));
  // loading a brightness index as flows is rejected
  CHECK_THROWS_AS(load_brightness(dir), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("raw tensor files are little-endian float32") {
  Array a({2, 2});
  a.v = {1.0, -2.0, 0.5, 3.25};
  const std::string path =
      (std::filesystem::temp_directory_path() / "raw-test.bin").string();
  write_array_raw(a, path);
  CHECK(std::filesystem::file_size(path) == 16);
  Array back = read_array_raw(path, {2, 2});
  CHECK(back.v == a.v);
  CHECK_THROWS_AS(read_array_raw(path, {3, 2}), Error);
  std::filesystem::remove(path);
}
