#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "advtag/dataset.hpp"
#include "advtag/tensor.hpp"

namespace advtag {

// Fixed stand-in classifier:
//   conv(3->16, 3x3) relu pool2 conv(16->32, 3x3) relu pool2 flatten
//   linear(->64) relu linear(->C) log_softmax
// Images are channel-planar [3, s, s] with values in [0, 1].
class ClassifierModel {
 public:
  static constexpr std::size_t kMinInputSize = 10;
  static constexpr std::uint32_t kFormatVersion = 1;

  // Weights drawn from a seeded He-uniform initialisation.
  ClassifierModel(std::size_t input_size, std::size_t num_classes, std::uint64_t seed);

  std::size_t input_size() const { return input_size_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t flat_features() const;

  // Weights in file order: conv1 w/b, conv2 w/b, fc1 w/b, fc2 w/b.
  const std::vector<Tensor>& weights() const { return weights_; }
  std::vector<Tensor>& mutable_weights() { return weights_; }

  // batch: [N, 3, s, s] -> log-probabilities [N, C]. Weights enter the tape
  // as constants unless `trainable`, in which case gradients land in them.
  Var forward(Tape& tape, Var batch) const;
  Var forward_trainable(Tape& tape, Var batch);

  // image: [3, s, s] -> [1, C]
  Var predict(Tape& tape, Var image) const;
  // image: [3, s, s] -> [C]
  Tensor predict(const Tensor& image) const;

  void check_image(const Shape& shape) const;

 private:
  ClassifierModel() = default;
  Var forward_impl(Tape& tape, Var batch, std::vector<Var> w) const;
  friend ClassifierModel load_model(const std::filesystem::path& path);

  std::size_t input_size_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<Tensor> weights_;
};

struct TrainOptions {
  int epochs = 20;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

// Per-batch mean NLL, in training order.
struct TrainLog {
  std::vector<float> batch_losses;
  std::vector<float> epoch_losses;
};

// Deterministic SGD-with-momentum training from a seeded initialisation.
ClassifierModel train(const Dataset& data, const TrainOptions& options, TrainLog* log = nullptr);

double accuracy(const ClassifierModel& model, const Dataset& data);

int argmax(std::span<const float> values);

// Little-endian: "ATAG", u32 version, u32 input size, u32 classes, u32 blob
// count, then per blob u32 rank, rank x u32 extents, f32 values.
void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

}  // namespace advtag
