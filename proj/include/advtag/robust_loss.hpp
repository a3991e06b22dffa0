#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advtag/classifier.hpp"
#include "advtag/rasterizer.hpp"
#include "advtag/tensor.hpp"

namespace advtag {

// Simulated drawing error: endpoint jitter (fraction of canvas size), pixel
// erasure probability, and number of auxiliary draws summed into the loss.
struct RobustnessConfig {
  double jitter = 0.05;
  double erase = 0.25;
  int aux_draws = 4;

  static RobustnessConfig non_robust() { return {0.0, 0.0, 1}; }
  bool is_clean() const { return jitter == 0.0 && erase == 0.0; }
  void validate() const;  // throws ConfigError
};

enum class AttackKind { Targeted, Untargeted };

// For untargeted attacks `target` is the class originally predicted on the
// clean image; the loss sign is flipped so that minimising the objective
// pushes that class away.
struct AttackMode {
  AttackKind kind = AttackKind::Untargeted;
  int target = 0;
};

// Called once per auxiliary draw with the jittered [L, 4] coordinates and the
// erasure mask (all ones when erase == 0).
using DrawObserver = std::function<void(int draw, const Tensor& jittered, const Tensor& mask)>;

// Records the objective on the tape:
//   L = sum_{i<n} NLL(composite(image, erase_i(render(jitter_i(coords)))), t)
// returned as L (targeted) or -L (untargeted). Draw i uses noise seeded from
// seed ^ hash(i); noise is constant on the tape.
Var robust_objective(Var coords, double sigma, const RobustnessConfig& cfg, const AttackMode& mode, Var image,
                     const ClassifierModel& model, std::uint64_t seed, const DrawObserver* observer = nullptr,
                     Tensor* first_log_probs = nullptr);

struct LossEvaluation {
  float objective = 0.0f;
  Tensor grad;  // d objective / d coords, [L, 4]; empty without gradients
  // Log-probabilities [C] of the clean composite, filled when the config has
  // no jitter or erasure (every draw is then the clean composite).
  Tensor clean_log_probs;
};

LossEvaluation evaluate_objective(const TagParams& tag, const RobustnessConfig& cfg, const AttackMode& mode,
                                  const Tensor& image, const ClassifierModel& model, std::uint64_t seed,
                                  bool with_grad, const DrawObserver* observer = nullptr);

// Objective value only.
float robust_loss(const TagParams& tag, const RobustnessConfig& cfg, const AttackMode& mode, const Tensor& image,
                  const ClassifierModel& model, std::uint64_t seed);

// Per line: mean |d objective / d coordinate| over its four coordinates,
// from one forward/backward pass. Order matches tag.lines.
std::vector<double> line_grad_magnitudes(const TagParams& tag, const RobustnessConfig& cfg, const AttackMode& mode,
                                         const Tensor& image, const ClassifierModel& model, std::uint64_t seed);

// Clean (no jitter, no erasure) composite of a tag on the image.
Tensor apply_tag(const TagParams& tag, const Tensor& image);

// Class log-probabilities [C] of the clean composite.
Tensor predict_with_tag(const TagParams& tag, const Tensor& image, const ClassifierModel& model);

// Same error model applied to a finished tag: jittered and erased composite
// for one simulated reproduction.
Tensor simulate_drawing(const TagParams& tag, const Tensor& image, const RobustnessConfig& error, std::uint64_t seed);

}  // namespace advtag
