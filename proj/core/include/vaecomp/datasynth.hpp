// Seeded synthetic datasets: a brightness-factor driving corpus and an
// optical-flow corpus with impulsive precipitation-like OOD windows.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaecomp/array.hpp"
#include "vaecomp/tensor.hpp"

namespace vaecomp {

// Low/medium partitions are ID; high is OOD and appears in the test split
// only. Calibration images alternate between low and medium scenes.
struct BrightnessDataset {
  std::uint64_t seed = 0;
  int size = 0;
  Array train;        // (N,3,S,S), ID
  Array calibration;  // (N,3,S,S), ID, train:calibration = 2:1
  Array test_id;      // (N,3,S,S)
  Array test_ood;     // (N,3,S,S), high brightness
  std::vector<std::string> calib_partitions;  // "low" / "medium" per row
};

BrightnessDataset gen_brightness(std::uint64_t seed, int n_per_partition, int size);

// Windows are (6,S,S) per flow direction. Train is ID-only; the test split
// is 50% ID / 50% OOD (vertical high-magnitude streaks).
struct FlowDataset {
  std::uint64_t seed = 0;
  int size = 0;
  Array train_h, train_v;  // (N,6,S,S)
  Array test_h, test_v;    // (M,6,S,S)
  std::vector<int> test_labels;  // 0 = id, 1 = ood
};

FlowDataset gen_flows(std::uint64_t seed, int n_windows, int size);

// Directory persistence: raw little-endian float32 tensors + index.json.
void save_brightness(const BrightnessDataset& ds, const std::string& dir);
BrightnessDataset load_brightness(const std::string& dir);
void save_flows(const FlowDataset& ds, const std::string& dir);
FlowDataset load_flows(const std::string& dir);

void write_array_raw(const Array& a, const std::string& path);
Array read_array_raw(const std::string& path, const std::vector<int64_t>& shape);

}  // namespace vaecomp
