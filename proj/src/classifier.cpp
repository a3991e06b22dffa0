#include "advtag/classifier.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "advtag/errors.hpp"
#include "advtag/ops.hpp"
#include "advtag/rng.hpp"

namespace advtag {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'T', 'A', 'G'};
constexpr std::size_t kConv1 = 16, kConv2 = 32, kHidden = 64, kKernel = 3;

Tensor he_uniform(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::filesystem::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view v(bytes_.data() + pos_, n);
    pos_ += n;
    return v;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("model file truncated: " + path_.string());
  }

  std::string bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

ClassifierModel::ClassifierModel(std::size_t input_size, std::size_t num_classes, std::uint64_t seed)
    : input_size_(input_size), num_classes_(num_classes) {
  if (input_size < kMinInputSize) {
    throw ContractViolation("classifier: input size " + std::to_string(input_size) + " below minimum " +
                            std::to_string(kMinInputSize));
  }
  if (num_classes < 2) throw ContractViolation("classifier: need at least 2 classes");
  Rng rng(seed);
  const double relu_gain = std::sqrt(2.0);
  weights_.push_back(he_uniform({kConv1, 3, kKernel, kKernel}, 3 * kKernel * kKernel, relu_gain, rng));
  weights_.emplace_back(Shape{kConv1});
  weights_.push_back(he_uniform({kConv2, kConv1, kKernel, kKernel}, kConv1 * kKernel * kKernel, relu_gain, rng));
  weights_.emplace_back(Shape{kConv2});
  weights_.push_back(he_uniform({flat_features(), kHidden}, flat_features(), relu_gain, rng));
  weights_.emplace_back(Shape{kHidden});
  weights_.push_back(he_uniform({kHidden, num_classes}, kHidden, 1.0, rng));
  weights_.emplace_back(Shape{num_classes});
}

std::size_t ClassifierModel::flat_features() const {
  const std::size_t p1 = (input_size_ - kKernel + 1) / 2;
  const std::size_t p2 = (p1 - kKernel + 1) / 2;
  return kConv2 * p2 * p2;
}

void ClassifierModel::check_image(const Shape& shape) const {
  const Shape want{3, input_size_, input_size_};
  if (shape != want) {
    throw ContractViolation("classifier: image shape " + to_string(shape) + ", expected " + to_string(want));
  }
}

Var ClassifierModel::forward_impl(Tape& tape, Var batch, std::vector<Var> w) const {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != input_size_ || s[3] != input_size_) {
    throw ContractViolation("classifier: batch shape " + to_string(s) + ", expected [N, 3, " +
                            std::to_string(input_size_) + ", " + std::to_string(input_size_) + "]");
  }
  const std::size_t n = s[0];
  Var h = ops::relu(ops::conv2d(batch, w[0], w[1]));
  h = ops::max_pool2d(h, 2);
  h = ops::relu(ops::conv2d(h, w[2], w[3]));
  h = ops::max_pool2d(h, 2);
  h = ops::reshape(h, {n, flat_features()});
  h = ops::relu(ops::add(ops::matmul(h, w[4]), w[5]));
  h = ops::add(ops::matmul(h, w[6]), w[7]);
  (void)tape;
  return ops::log_softmax(h);
}

Var ClassifierModel::forward(Tape& tape, Var batch) const {
  std::vector<Var> w;
  w.reserve(weights_.size());
  for (const Tensor& t : weights_) w.push_back(tape.constant(t));
  return forward_impl(tape, batch, std::move(w));
}

Var ClassifierModel::forward_trainable(Tape& tape, Var batch) {
  std::vector<Var> w;
  w.reserve(weights_.size());
  for (Tensor& t : weights_) {
    t.set_requires_grad(true);
    w.push_back(tape.leaf(t));
  }
  return forward_impl(tape, batch, std::move(w));
}

Var ClassifierModel::predict(Tape& tape, Var image) const {
  check_image(image.shape());
  return forward(tape, ops::reshape(image, {1, 3, input_size_, input_size_}));
}

Tensor ClassifierModel::predict(const Tensor& image) const {
  check_image(image.shape());
  Tape tape;
  Var out = predict(tape, tape.constant(image));
  return out.value().reshaped({num_classes_});
}

int argmax(std::span<const float> values) {
  if (values.empty()) throw ContractViolation("argmax of empty range");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

ClassifierModel train(const Dataset& data, const TrainOptions& options, TrainLog* log) {
  if (data.empty()) throw ContractViolation("train: empty dataset");
  data.validate();
  if (options.epochs < 0 || options.batch_size == 0 || !(options.learning_rate > 0.0f)) {
    throw ConfigError("train: invalid options (epochs >= 0, batch >= 1, lr > 0 required)");
  }
  ClassifierModel model(data.image_size, data.num_classes, derive_seed(options.seed, 0x1d17));
  Rng shuffle_rng(derive_seed(options.seed, 0x5bf1));
  const std::size_t s = data.image_size;
  const std::size_t per_image = 3 * s * s;

  std::vector<std::vector<float>> velocity;
  for (const Tensor& w : model.weights()) velocity.emplace_back(w.size(), 0.0f);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t n = std::min(options.batch_size, order.size() - start);
      Tensor batch({n, 3, s, s});
      std::vector<int> labels(n);
      for (std::size_t b = 0; b < n; ++b) {
        const LabeledImage& item = data.items[order[start + b]];
        std::copy(item.pixels.data().begin(), item.pixels.data().end(), batch.data().begin() + b * per_image);
        labels[b] = item.label;
      }
      for (Tensor& w : model.mutable_weights()) w.zero_grad();
      float loss_value;
      {
        Tape tape;
        Var loss = ops::nll_loss(model.forward_trainable(tape, tape.constant(std::move(batch))), labels);
        loss_value = loss.value().item();
        tape.backward(loss);
      }
      auto& weights = model.mutable_weights();
      for (std::size_t k = 0; k < weights.size(); ++k) {
        auto g = weights[k].grad();
        auto w = weights[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          velocity[k][i] = options.momentum * velocity[k][i] + g[i];
          w[i] -= options.learning_rate * velocity[k][i];
        }
      }
      epoch_loss += loss_value;
      ++batches;
      if (log) log->batch_losses.push_back(loss_value);
    }
    if (log) log->epoch_losses.push_back(static_cast<float>(epoch_loss / static_cast<double>(batches)));
  }
  for (Tensor& w : model.mutable_weights()) {
    w.zero_grad();
    w.set_requires_grad(false);
    if (!w.all_finite()) throw Error("train: weights diverged (non-finite); lower the learning rate");
  }
  return model;
}

double accuracy(const ClassifierModel& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const LabeledImage& item : data.items) {
    if (argmax(model.predict(item.pixels).data()) == item.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  std::string out(kMagic.begin(), kMagic.end());
  put_u32(out, ClassifierModel::kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(model.input_size()));
  put_u32(out, static_cast<std::uint32_t>(model.num_classes()));
  put_u32(out, static_cast<std::uint32_t>(model.weights().size()));
  for (const Tensor& w : model.weights()) {
    put_u32(out, static_cast<std::uint32_t>(w.rank()));
    for (std::size_t d : w.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : w.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

ClassifierModel load_model(const std::filesystem::path& path) {
  Reader r(read_file(path), path);
  try {
    if (r.raw(4) != std::string_view(kMagic.data(), kMagic.size())) {
      throw VersionError("not a model file (bad magic): " + path.string());
    }
  } catch (const VersionError&) {
    throw;
  } catch (const FormatError&) {
    throw VersionError("not a model file (too short for magic): " + path.string());
  }
  const std::uint32_t version = r.u32();
  if (version != ClassifierModel::kFormatVersion) {
    throw VersionError("unsupported model format version " + std::to_string(version) + " in " + path.string());
  }
  const std::size_t size = r.u32();
  const std::size_t classes = r.u32();
  const std::size_t blobs = r.u32();
  if (size < ClassifierModel::kMinInputSize || size > 4096 || classes < 2 || classes > 100000) {
    throw FormatError("implausible model header in " + path.string());
  }
  ClassifierModel reference(size, classes, 0);
  if (blobs != reference.weights().size()) {
    throw FormatError("model file has " + std::to_string(blobs) + " weight blobs, expected " +
                      std::to_string(reference.weights().size()) + ": " + path.string());
  }
  ClassifierModel model;
  model.input_size_ = size;
  model.num_classes_ = classes;
  for (std::size_t b = 0; b < blobs; ++b) {
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("corrupt blob rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != reference.weights()[b].shape()) {
      throw FormatError("blob " + std::to_string(b) + " has shape " + to_string(shape) + ", expected " +
                        to_string(reference.weights()[b].shape()) + ": " + path.string());
    }
    Tensor t(shape);
    for (float& v : t.data()) v = r.f32();
    if (!t.all_finite()) throw FormatError("non-finite weights in " + path.string());
    model.weights_.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in model file " + path.string());
  return model;
}

}  // namespace advtag
