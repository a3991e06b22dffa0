#include "advtag/robust_loss.hpp"

#include <cmath>
#include <string>

#include "advtag/errors.hpp"
#include "advtag/ops.hpp"
#include "advtag/rng.hpp"

namespace advtag {
namespace {

constexpr std::uint64_t kJitterStream = 1;
constexpr std::uint64_t kEraseStream = 2;

void check_mode(const AttackMode& mode, const ClassifierModel& model) {
  if (mode.target < 0 || static_cast<std::size_t>(mode.target) >= model.num_classes()) {
    throw ContractViolation("attack target " + std::to_string(mode.target) + " out of range [0, " +
                            std::to_string(model.num_classes()) + ")");
  }
}

void check_image(const Tensor& image, const ClassifierModel& model) {
  model.check_image(image.shape());
  for (float v : image.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractViolation("image values must lie in [0, 1]");
  }
}

// Jitter then erase one draw; returns the rendered canvas var.
Var draw_canvas(Var coords, double sigma, const RobustnessConfig& cfg, std::size_t s, std::uint64_t seed, int draw,
                const DrawObserver* observer) {
  Var lines = coords;
  if (cfg.jitter > 0.0) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(draw), kJitterStream));
    const auto half = static_cast<float>(static_cast<double>(s) * cfg.jitter / 2.0);
    lines = ops::clamp(ops::add_uniform_noise(coords, -half, half, rng), 0.0f, static_cast<float>(s));
  }
  Var canvas = render_lines(lines, sigma, s);
  if (cfg.erase > 0.0) {
    Tensor mask = erase_mask(canvas.value(), cfg.erase, derive_seed(seed, static_cast<std::uint64_t>(draw), kEraseStream));
    if (observer) (*observer)(draw, lines.value(), mask);
    canvas = ops::mul(canvas, canvas.tape().constant(std::move(mask)));
  } else if (observer) {
    (*observer)(draw, lines.value(), Tensor(canvas.value().shape(), 1.0f));
  }
  return canvas;
}

}  // namespace

void RobustnessConfig::validate() const {
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ConfigError("jitter must be >= 0");
  if (!(erase >= 0.0 && erase < 1.0)) throw ConfigError("erase must be in [0, 1)");
  if (aux_draws < 1) throw ConfigError("aux draws must be >= 1");
}

Var robust_objective(Var coords, double sigma, const RobustnessConfig& cfg, const AttackMode& mode, Var image,
                     const ClassifierModel& model, std::uint64_t seed, const DrawObserver* observer,
                     Tensor* first_log_probs) {
  cfg.validate();
  check_mode(mode, model);
  model.check_image(image.shape());
  const std::size_t s = model.input_size();
  const int targets[1] = {mode.target};
  std::vector<Var> terms;
  terms.reserve(static_cast<std::size_t>(cfg.aux_draws));
  for (int i = 0; i < cfg.aux_draws; ++i) {
    Var canvas = draw_canvas(coords, sigma, cfg, s, seed, i, observer);
    Var logp = model.predict(coords.tape(), composite(image, canvas));
    if (i == 0 && first_log_probs) *first_log_probs = logp.value().reshaped({model.num_classes()});
    terms.push_back(ops::nll_loss(logp, targets));
  }
  Var total = terms.size() == 1 ? terms[0] : ops::sum(std::span<const Var>(terms));
  return mode.kind == AttackKind::Untargeted ? ops::neg(total) : total;
}

LossEvaluation evaluate_objective(const TagParams& tag, const RobustnessConfig& cfg, const AttackMode& mode,
                                  const Tensor& image, const ClassifierModel& model, std::uint64_t seed,
                                  bool with_grad, const DrawObserver* observer) {
  check_image(image, model);
  tag.validate(model.input_size());
  if (tag.lines.empty()) throw ContractViolation("robust loss needs at least one line");
  Tensor coords = lines_to_tensor(tag.lines);
  coords.set_requires_grad(with_grad);
  LossEvaluation out;
  {
    Tape tape;
    Tensor* clean_out = cfg.is_clean() ? &out.clean_log_probs : nullptr;
    Var objective =
        robust_objective(tape.leaf(coords), tag.sigma, cfg, mode, tape.constant(image), model, seed, observer, clean_out);
    out.objective = objective.value().item();
    if (with_grad) tape.backward(objective);
  }
  if (with_grad) {
    out.grad = Tensor(coords.shape());
    if (coords.has_grad()) std::copy(coords.grad().begin(), coords.grad().end(), out.grad.data().begin());
  }
  return out;
}

float robust_loss(const TagParams& tag, const RobustnessConfig& cfg, const AttackMode& mode, const Tensor& image,
                  const ClassifierModel& model, std::uint64_t seed) {
  return evaluate_objective(tag, cfg, mode, image, model, seed, false).objective;
}

std::vector<double> line_grad_magnitudes(const TagParams& tag, const RobustnessConfig& cfg, const AttackMode& mode,
                                         const Tensor& image, const ClassifierModel& model, std::uint64_t seed) {
  const LossEvaluation eval = evaluate_objective(tag, cfg, mode, image, model, seed, true);
  std::vector<double> mags(tag.lines.size());
  for (std::size_t i = 0; i < mags.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < 4; ++k) acc += std::abs(static_cast<double>(eval.grad[4 * i + k]));
    mags[i] = acc / 4.0;
  }
  return mags;
}

Tensor apply_tag(const TagParams& tag, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2)) {
    throw ContractViolation("apply_tag: expected a [3, s, s] image, got " + to_string(image.shape()));
  }
  return composite(image, render_lines(tag, image.dim(1)));
}

Tensor predict_with_tag(const TagParams& tag, const Tensor& image, const ClassifierModel& model) {
  check_image(image, model);
  return model.predict(apply_tag(tag, image));
}

Tensor simulate_drawing(const TagParams& tag, const Tensor& image, const RobustnessConfig& error, std::uint64_t seed) {
  error.validate();
  if (tag.lines.empty() || error.is_clean()) return apply_tag(tag, image);
  const std::size_t s = image.dim(1);
  tag.validate(s);
  Tape tape;
  Tensor coords = lines_to_tensor(tag.lines);
  Var canvas = draw_canvas(tape.constant(coords), tag.sigma, error, s, seed, 0, nullptr);
  return composite(image, canvas.value());
}

}  // namespace advtag
