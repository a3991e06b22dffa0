#pragma once

// Benchmark classifier shared by the fixture and the acceptance suite: the
// 10-class texture set rendered at 32 px and upsampled to 64.

#include <filesystem>
#include <iostream>
#include <string>

#include "advtag/classifier.hpp"
#include "advtag/dataset.hpp"
#include "advtag/tagfile.hpp"

namespace advtag::bench {

constexpr std::size_t kSize = 64;
// Frozen after the first training run, which measured 1.000 held out.
constexpr double kMinAccuracy = 0.95;

inline Dataset train_set() { return make_textures_dataset(5000, 1, kSize); }
inline Dataset heldout_set() { return make_textures_dataset(1000, 2, kSize); }
inline Dataset eval_set() { return make_textures_dataset(100, 3, kSize); }

inline TrainOptions train_options() {
  TrainOptions o;
  o.epochs = 20;
  o.seed = 1;
  return o;
}

// Trained model for the current training data and options, cached in `dir`
// under a name keyed by their hash.
inline ClassifierModel model(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Dataset data = train_set();
  const std::filesystem::path packed = dir / "train.atds";
  save_packed(data, packed);
  const TrainOptions o = train_options();
  const std::string key = hash_file(packed) + "-e" + std::to_string(o.epochs) + "-s" + std::to_string(o.seed);
  const std::filesystem::path cached = dir / ("benchmark-" + key + ".bin");
  if (std::filesystem::exists(cached)) return load_model(cached);
  std::cerr << "training benchmark model (" << data.size() << " images, " << o.epochs << " epochs)\n";
  ClassifierModel m = train(data, o);
  save_model(m, dir / "benchmark.tmp");
  std::filesystem::rename(dir / "benchmark.tmp", cached);
  return m;
}

}  // namespace advtag::bench
