#include "vaecomp/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vaecomp/rng.hpp"

#include "json.hpp"

namespace vaecomp {

namespace {

void check_size(int size) {
  if (size != 32 && size != 224) throw Error("datasynth: size must be 32 or 224");
}

// One road-like scene: sky/ground gradient, a lane trapezoid with bright
// markings, and a few soft blobs. Values stay mostly below ~0.75 so the
// high-brightness multiplier clips only highlights.
Array render_scene(std::uint64_t seed, std::uint64_t scene, int s) {
  Array img({3, s, s});
  const double horizon = 0.40 + 0.10 * key_uniform({seed, scene, hash_str("horizon")});
  const double road_half = 0.18 + 0.10 * key_uniform({seed, scene, hash_str("roadw")});
  const double sky_base = 0.45 + 0.15 * key_uniform({seed, scene, hash_str("sky")});
  const double ground_base = 0.20 + 0.10 * key_uniform({seed, scene, hash_str("ground")});
  const double mark_phase = key_uniform({seed, scene, hash_str("phase")});

  struct Blob {
    double cx, cy, sig, amp;
  };
  std::vector<Blob> blobs;
  const int n_blobs = 2 + static_cast<int>(3.0 * key_uniform({seed, scene, hash_str("nblob")}));
  for (int b = 0; b < n_blobs; ++b) {
    const auto bu = static_cast<std::uint64_t>(b);
    blobs.push_back({key_uniform({seed, scene, hash_str("bx"), bu}),
                     key_uniform({seed, scene, hash_str("by"), bu}),
                     0.04 + 0.08 * key_uniform({seed, scene, hash_str("bs"), bu}),
                     0.10 + 0.15 * key_uniform({seed, scene, hash_str("ba"), bu})});
  }

  const double tint[3] = {1.0, 0.96, 0.90};
  for (int y = 0; y < s; ++y) {
    const double v = static_cast<double>(y) / (s - 1);
    for (int x = 0; x < s; ++x) {
      const double u = static_cast<double>(x) / (s - 1);
      double lum;
      if (v < horizon) {
        lum = sky_base + 0.25 * (horizon - v) / horizon;  // brighter toward the top
      } else {
        const double depth = (v - horizon) / (1.0 - horizon);  // 0 at horizon, 1 at bottom
        lum = ground_base + 0.08 * depth;
        const double half = road_half * (0.15 + 0.85 * depth);  // trapezoid
        const double off = std::abs(u - 0.5);
        if (off < half) {
          lum = 0.30 + 0.10 * depth;  // asphalt
          // dashed center marking
          if (off < 0.02 + 0.02 * depth &&
              std::fmod(depth * 8.0 + mark_phase * 2.0, 1.0) < 0.5)
            lum = 0.72;
          // edge markings
          if (half - off < 0.015 + 0.02 * depth) lum = 0.62;
        }
      }
      for (const Blob& b : blobs) {
        const double dx = u - b.cx, dy = v - b.cy;
        lum += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sig * b.sig));
      }
      lum = std::clamp(lum, 0.0, 0.85);
      for (int c = 0; c < 3; ++c)
        img.v[(static_cast<size_t>(c) * s + y) * s + x] = lum * tint[c];
    }
  }
  return img;
}

Array apply_brightness(const Array& base, double mult) {
  Array out = base;
  for (double& p : out.v) p = std::clamp(p * mult, 0.0, 1.0);
  return out;
}

Array stack(const std::vector<Array>& rows) {
  if (rows.empty()) throw Error("datasynth: cannot stack empty set");
  Array out;
  out.shape = rows[0].shape;
  out.shape.insert(out.shape.begin(), static_cast<int64_t>(rows.size()));
  out.v.reserve(static_cast<size_t>(rows.size()) * rows[0].v.size());
  for (const Array& r : rows) {
    if (r.shape != rows[0].shape) throw Error("datasynth: ragged stack");
    out.v.insert(out.v.end(), r.v.begin(), r.v.end());
  }
  return out;
}

}  // namespace

BrightnessDataset gen_brightness(std::uint64_t seed, int n_per_partition, int size) {
  check_size(size);
  if (n_per_partition < 4) throw Error("gen_brightness: need at least 4 scenes per partition");
  constexpr double kLow = 0.4, kMed = 0.7, kHigh = 1.3;

  // Per-partition split: calibration gets floor(n/5) scenes, train exactly
  // twice that, the remainder is ID test. High goes to test only.
  const int n_calib = n_per_partition / 5 > 0 ? n_per_partition / 5 : 1;
  const int n_train = 2 * n_calib;
  const int n_test = n_per_partition - n_train - n_calib;
  if (n_test < 1) throw Error("gen_brightness: partition too small for a test split");

  BrightnessDataset ds;
  ds.seed = seed;
  ds.size = size;

  std::vector<Array> train, calib_low, calib_med, test_id, test_ood;
  for (int i = 0; i < n_per_partition; ++i) {
    const Array base = render_scene(seed, static_cast<std::uint64_t>(i), size);
    const Array low = apply_brightness(base, kLow);
    const Array med = apply_brightness(base, kMed);
    const Array high = apply_brightness(base, kHigh);
    if (i < n_train) {
      train.push_back(low);
      train.push_back(med);
    } else if (i < n_train + n_calib) {
      calib_low.push_back(low);
      calib_med.push_back(med);
    } else {
      test_id.push_back(low);
      test_id.push_back(med);
    }
    test_ood.push_back(high);
  }

  // Calibration alternates low/medium so the brightness factor varies
  // across consecutive calibration samples.
  std::vector<Array> calib;
  for (size_t i = 0; i < calib_low.size(); ++i) {
    calib.push_back(calib_low[i]);
    ds.calib_partitions.push_back("low");
    calib.push_back(calib_med[i]);
    ds.calib_partitions.push_back("medium");
  }

  ds.train = stack(train);
  ds.calibration = stack(calib);
  ds.test_id = stack(test_id);
  ds.test_ood = stack(test_ood);
  return ds;
}

namespace {

// Six frames of a smoothly drifting affine flow field per window.
void make_id_window(std::uint64_t seed, std::uint64_t w, int s, Array& h, Array& v) {
  h = Array({6, s, s});
  v = Array({6, s, s});
  const double tx0 = 0.6 * (key_uniform({seed, w, hash_str("tx")}) - 0.5);
  const double ty0 = 0.6 * (key_uniform({seed, w, hash_str("ty")}) - 0.5);
  const double om0 = 0.4 * (key_uniform({seed, w, hash_str("om")}) - 0.5);
  const double dtx = 0.1 * (key_uniform({seed, w, hash_str("dtx")}) - 0.5);
  const double dty = 0.1 * (key_uniform({seed, w, hash_str("dty")}) - 0.5);
  const double c = (s - 1) / 2.0;
  for (int f = 0; f < 6; ++f) {
    const double tx = tx0 + dtx * f, ty = ty0 + dty * f, om = om0;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double ry = (y - c) / static_cast<double>(s), rx = (x - c) / static_cast<double>(s);
        const size_t at = (static_cast<size_t>(f) * s + y) * s + x;
        h.v[at] = tx - om * ry +
                  0.01 * key_gaussian({seed, w, hash_str("nh"), static_cast<std::uint64_t>(at)});
        v.v[at] = ty + om * rx +
                  0.01 * key_gaussian({seed, w, hash_str("nv"), static_cast<std::uint64_t>(at)});
      }
    }
  }
}

// Vertical high-magnitude streaks on 5-15% of pixels of every frame.
void add_streaks(std::uint64_t seed, std::uint64_t w, int s, Array& v) {
  const double frac = 0.05 + 0.10 * key_uniform({seed, w, hash_str("frac")});
  const int n_streaks = std::max(1, static_cast<int>(frac * s * s / (s / 2.0)));
  for (int f = 0; f < 6; ++f) {
    for (int st = 0; st < n_streaks; ++st) {
      const auto fu = static_cast<std::uint64_t>(f), su = static_cast<std::uint64_t>(st);
      const int x = static_cast<int>(key_uniform({seed, w, hash_str("sx"), fu, su}) * s) % s;
      const int y0 = static_cast<int>(key_uniform({seed, w, hash_str("sy"), fu, su}) * s) % s;
      const int len = s / 2;
      const double mag = 2.5 + 1.5 * key_uniform({seed, w, hash_str("sm"), fu, su});
      for (int dy = 0; dy < len; ++dy) {
        const int y = (y0 + dy) % s;
        v.v[(static_cast<size_t>(f) * s + y) * s + x] -= mag;  // downward impulse
      }
    }
  }
}

}  // namespace

FlowDataset gen_flows(std::uint64_t seed, int n_windows, int size) {
  check_size(size);
  if (n_windows < 2) throw Error("gen_flows: need at least 2 windows");
  FlowDataset ds;
  ds.seed = seed;
  ds.size = size;

  std::vector<Array> trh, trv, teh, tev;
  for (int i = 0; i < n_windows; ++i) {
    Array h, v;
    make_id_window(seed, static_cast<std::uint64_t>(i), size, h, v);
    trh.push_back(std::move(h));
    trv.push_back(std::move(v));
  }
  for (int i = 0; i < n_windows; ++i) {
    Array h, v;
    const auto w = static_cast<std::uint64_t>(n_windows + i);
    make_id_window(seed, w, size, h, v);
    const bool ood = i % 2 == 1;  // 50/50 test split
    if (ood) add_streaks(seed, w, size, v);
    teh.push_back(std::move(h));
    tev.push_back(std::move(v));
    ds.test_labels.push_back(ood ? 1 : 0);
  }
  ds.train_h = stack(trh);
  ds.train_v = stack(trv);
  ds.test_h = stack(teh);
  ds.test_v = stack(tev);
  return ds;
}

void write_array_raw(const Array& a, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_array_raw: cannot open " + path);
  std::vector<float> buf(a.v.size());
  for (size_t i = 0; i < a.v.size(); ++i) buf[i] = static_cast<float>(a.v[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw Error("write_array_raw: write failed for " + path);
}

Array read_array_raw(const std::string& path, const std::vector<int64_t>& shape) {
  Array a(shape);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("read_array_raw: cannot open " + path);
  std::vector<float> buf(a.v.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw Error("read_array_raw: truncated tensor file " + path);
  for (size_t i = 0; i < buf.size(); ++i) a.v[i] = buf[i];
  return a;
}

namespace {

namespace fs = std::filesystem;

void write_index(const nlohmann::json& j, const std::string& dir) {
  std::ofstream os(fs::path(dir) / "index.json");
  if (!os) throw Error("datasynth: cannot write index in " + dir);
  os << j.dump(2) << "\n";
}

nlohmann::json read_index(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "index.json");
  if (!is) throw Error("datasynth: cannot open index in " + dir);
  nlohmann::json j;
  is >> j;
  return j;
}

std::string tensor_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / (name + ".bin")).string();
}

}  // namespace

void save_brightness(const BrightnessDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["kind"] = "brightness";
  j["seed"] = ds.seed;
  j["size"] = ds.size;
  j["calib_partitions"] = ds.calib_partitions;
  j["tensors"] = {{"train", ds.train.shape},
                  {"calibration", ds.calibration.shape},
                  {"test_id", ds.test_id.shape},
                  {"test_ood", ds.test_ood.shape}};
  write_index(j, dir);
  write_array_raw(ds.train, tensor_path(dir, "train"));
  write_array_raw(ds.calibration, tensor_path(dir, "calibration"));
  write_array_raw(ds.test_id, tensor_path(dir, "test_id"));
  write_array_raw(ds.test_ood, tensor_path(dir, "test_ood"));
}

BrightnessDataset load_brightness(const std::string& dir) {
  const nlohmann::json j = read_index(dir);
  if (j.at("kind") != "brightness") throw Error("load_brightness: wrong dataset kind in " + dir);
  BrightnessDataset ds;
  ds.seed = j.at("seed");
  ds.size = j.at("size");
  ds.calib_partitions = j.at("calib_partitions").get<std::vector<std::string>>();
  auto shape = [&](const char* n) { return j.at("tensors").at(n).get<std::vector<int64_t>>(); };
  ds.train = read_array_raw(tensor_path(dir, "train"), shape("train"));
  ds.calibration = read_array_raw(tensor_path(dir, "calibration"), shape("calibration"));
  ds.test_id = read_array_raw(tensor_path(dir, "test_id"), shape("test_id"));
  ds.test_ood = read_array_raw(tensor_path(dir, "test_ood"), shape("test_ood"));
  return ds;
}

void save_flows(const FlowDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["kind"] = "flows";
  j["seed"] = ds.seed;
  j["size"] = ds.size;
  j["test_labels"] = ds.test_labels;
  j["tensors"] = {{"train_h", ds.train_h.shape},
                  {"train_v", ds.train_v.shape},
                  {"test_h", ds.test_h.shape},
                  {"test_v", ds.test_v.shape}};
  write_index(j, dir);
  write_array_raw(ds.train_h, tensor_path(dir, "train_h"));
  write_array_raw(ds.train_v, tensor_path(dir, "train_v"));
  write_array_raw(ds.test_h, tensor_path(dir, "test_h"));
  write_array_raw(ds.test_v, tensor_path(dir, "test_v"));
}

FlowDataset load_flows(const std::string& dir) {
  const nlohmann::json j = read_index(dir);
  if (j.at("kind") != "flows") throw Error("load_flows: wrong dataset kind in " + dir);
  FlowDataset ds;
  ds.seed = j.at("seed");
  ds.size = j.at("size");
  ds.test_labels = j.at("test_labels").get<std::vector<int>>();
  auto shape = [&](const char* n) { return j.at("tensors").at(n).get<std::vector<int64_t>>(); };
  ds.train_h = read_array_raw(tensor_path(dir, "train_h"), shape("train_h"));
  ds.train_v = read_array_raw(tensor_path(dir, "train_v"), shape("train_v"));
  ds.test_h = read_array_raw(tensor_path(dir, "test_h"), shape("test_h"));
  ds.test_v = read_array_raw(tensor_path(dir, "test_v"), shape("test_v"));
  return ds;
}

}  // namespace vaecomp
