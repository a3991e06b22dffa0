#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "advtag/classifier.hpp"
#include "advtag/rasterizer.hpp"
#include "advtag/rng.hpp"
#include "advtag/robust_loss.hpp"

namespace advtag {

// Axis-aligned region in canvas coordinates, x0 <= x1, y0 <= y1.
struct BoundingBox {
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  static BoundingBox full(std::size_t canvas) {
    const auto s = static_cast<float>(canvas);
    return {0, 0, s, s};
  }
  double diagonal() const;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct LengthRange {
  double min = 0, max = 0;
};

struct AttackConfig {
  int max_lines = 4;         // N, strict upper bound on the tag size
  int expansion = 10;        // f, candidates generated per prune event
  int prune_interval = 100;  // m
  int max_steps = 10000;
  int patience = 1000;  // steps without a new best before backtracking
  int max_resets = 4;
  double learning_rate = 0.5;
  AttackMode mode;
  RobustnessConfig robustness;
  // Loss used to score candidates; defaults to `robustness`.
  std::optional<RobustnessConfig> prune_robustness;
  std::optional<BoundingBox> search_bbox;
  std::optional<LengthRange> line_length;
  double sigma = 0.0;  // <= 0 selects default_sigma(canvas)
  // Stop as soon as the best tag flips (untargeted) or hits the target.
  bool stop_on_success = false;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate(std::size_t canvas) const;
};

struct TraceEntry {
  int step = 0;
  float loss = 0.0f;  // robust NLL sum of the tracked class
};

struct Prediction {
  int label = 0;
  double probability = 0.0;
};

struct AttackResult {
  TagParams best_lines;
  // Robust NLL sum of the tracked class at the best tag: the minimum over the
  // trace for targeted attacks, the maximum for untargeted ones.
  float best_loss = 0.0f;
  bool flipped = false;
  bool reached_target = false;
  int steps_used = 0;
  int resets_used = 0;
  std::vector<TraceEntry> loss_trace;
  Prediction original;
  Prediction final_prediction;
  int target = 0;  // tracked class (original class when untargeted)
  // Step at which the best tag first succeeded, if it did.
  std::optional<int> first_success_step;
};

// f lines with endpoints uniform in `box`. With a length range, each line is
// rejection-sampled (1000 tries) and otherwise stretched or shrunk along its
// last direction into the range and clipped to the box.
std::vector<Line> generate_candidates(int count, const BoundingBox& box, const std::optional<LengthRange>& length,
                                      Rng& rng);
std::vector<Line> generate_candidates(int count, const BoundingBox& box, const std::optional<LengthRange>& length,
                                      std::uint64_t seed);

// Indices of the k largest scores, ordered by descending score, ties by
// lower index.
std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k);

struct PruneContext {
  const ClassifierModel& model;
  const Tensor& image;
  AttackMode mode;
  RobustnessConfig robustness;
  double sigma = 0.0;
  int max_lines = 1;
  std::uint64_t seed = 0;
};

struct PruneOutcome {
  std::vector<Line> lines;
  // Index of each retained line in the joined list (existing then generated).
  std::vector<std::size_t> selected;
  std::vector<double> magnitudes;  // scores of the joined list
};

// Scores existing + generated lines by mean absolute endpoint gradient and
// keeps the top min(c + 1, N).
PruneOutcome prune(std::span<const Line> existing, std::span<const Line> generated, const PruneContext& ctx);

// Adam on the 4 coordinates of each line with per-line step counters, then
// projection into the clamp box.
class AdamState {
 public:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEpsilon = 1e-8;

  explicit AdamState(std::size_t lines = 0) { reset(lines); }

  void reset(std::size_t lines);
  // Carries moments for lines that survive a prune; origin[i] is the line's
  // previous index or nullopt when newly admitted.
  void remap(std::span<const std::optional<std::size_t>> origin);
  std::size_t size() const { return steps_.size(); }

  void step(std::vector<Line>& lines, const Tensor& grad, double learning_rate, const BoundingBox& clamp_box);

 private:
  std::vector<double> m_, v_;
  std::vector<int> steps_;
};

std::vector<Line> gradient_step(std::span<const Line> lines, const Tensor& grad, double learning_rate,
                                const BoundingBox& clamp_box, AdamState& state);

enum class StepKind { Prune, Gradient, Reset };

struct StepEvent {
  int step = 0;
  StepKind kind = StepKind::Gradient;
  const std::vector<Line>& lines;  // active lines after the event
  float objective = 0.0f;
};

using StepObserver = std::function<void(const StepEvent&)>;

AttackResult attack(const Tensor& image, const ClassifierModel& model, const AttackConfig& cfg,
                    const StepObserver* observer = nullptr);

}  // namespace advtag
