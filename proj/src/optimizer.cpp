#include "advtag/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "advtag/errors.hpp"

namespace advtag {
namespace {

constexpr int kMaxLengthTries = 1000;

constexpr std::uint64_t kGenerateStream = 0x6e6e;
constexpr std::uint64_t kPruneStream = 0x7072;
constexpr std::uint64_t kLossStream = 0x1055;

bool succeeded(const AttackMode& mode, int original, int predicted) {
  return mode.kind == AttackKind::Untargeted ? predicted != original : predicted == mode.target;
}

Prediction top1(const Tensor& log_probs) {
  const int label = argmax(log_probs.data());
  return {label, std::exp(static_cast<double>(log_probs[static_cast<std::size_t>(label)]))};
}

BoundingBox clamp_box(const AttackConfig& cfg, std::size_t canvas) {
  BoundingBox full = BoundingBox::full(canvas);
  if (!cfg.search_bbox) return full;
  const BoundingBox& b = *cfg.search_bbox;
  return {std::max(b.x0, full.x0), std::max(b.y0, full.y0), std::min(b.x1, full.x1), std::min(b.y1, full.y1)};
}

}  // namespace

double BoundingBox::diagonal() const {
  return std::hypot(static_cast<double>(x1) - x0, static_cast<double>(y1) - y0);
}

void AttackConfig::validate(std::size_t canvas) const {
  auto fail = [](const std::string& msg) { throw ConfigError("attack config: " + msg); };
  if (max_lines < 1) fail("max_lines must be >= 1");
  if (expansion < 1) fail("expansion must be >= 1");
  if (prune_interval < 1) fail("prune_interval must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (patience < 1) fail("patience must be >= 1");
  if (max_steps > 0 && patience > max_steps) fail("patience must not exceed max_steps");
  if (max_resets < 1) fail("max_resets must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!std::isfinite(sigma)) fail("sigma must be finite");
  robustness.validate();
  if (prune_robustness) prune_robustness->validate();
  const auto s = static_cast<float>(canvas);
  if (search_bbox) {
    const BoundingBox& b = *search_bbox;
    if (!(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= s && b.y1 <= s && b.x0 <= b.x1 && b.y0 <= b.y1)) {
      fail("bbox must satisfy 0 <= x0 <= x1 <= " + std::to_string(canvas) + " and 0 <= y0 <= y1 <= " +
           std::to_string(canvas));
    }
  }
  if (line_length) {
    if (!(line_length->min >= 0.0 && line_length->min <= line_length->max)) fail("length range needs 0 <= min <= max");
    const double diag = search_bbox ? search_bbox->diagonal() : BoundingBox::full(canvas).diagonal();
    if (line_length->min > diag) fail("minimum line length exceeds the search region diagonal");
  }
}

std::vector<Line> generate_candidates(int count, const BoundingBox& box, const std::optional<LengthRange>& length,
                                      Rng& rng) {
  if (count < 1) throw ContractViolation("generate_candidates: count must be >= 1");
  if (length && (length->min > box.diagonal() || length->min > length->max)) {
    throw ConfigError("length range [" + std::to_string(length->min) + ", " + std::to_string(length->max) +
                      "] infeasible for the search region");
  }
  auto point = [&]() {
    return std::pair{static_cast<float>(rng.uniform(box.x0, box.x1)), static_cast<float>(rng.uniform(box.y0, box.y1))};
  };
  std::vector<Line> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto [x0, y0] = point();
    auto [x1, y1] = point();
    Line line{x0, y0, x1, y1};
    if (length) {
      bool ok = false;
      for (int t = 1; t < kMaxLengthTries && !(ok = line.length() >= length->min && line.length() <= length->max); ++t) {
        std::tie(x0, y0) = point();
        std::tie(x1, y1) = point();
        line = {x0, y0, x1, y1};
      }
      ok = ok || (line.length() >= length->min && line.length() <= length->max);
      if (!ok) {
        double dx = static_cast<double>(line.x1) - line.x0, dy = static_cast<double>(line.y1) - line.y0;
        double len = std::hypot(dx, dy);
        if (len < 1e-9) {
          const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
          dx = std::cos(theta);
          dy = std::sin(theta);
          len = 1.0;
        }
        const double target = std::clamp(len, length->min, length->max);
        line.x1 = std::clamp(static_cast<float>(line.x0 + dx / len * target), box.x0, box.x1);
        line.y1 = std::clamp(static_cast<float>(line.y0 + dy / len * target), box.y0, box.y1);
      }
    }
    out.push_back(line);
  }
  return out;
}

std::vector<Line> generate_candidates(int count, const BoundingBox& box, const std::optional<LengthRange>& length,
                                      std::uint64_t seed) {
  Rng rng(seed);
  return generate_candidates(count, box, length, rng);
}

std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

PruneOutcome prune(std::span<const Line> existing, std::span<const Line> generated, const PruneContext& ctx) {
  if (generated.empty()) throw ContractViolation("prune: need at least one generated line");
  TagParams joined{{existing.begin(), existing.end()}, ctx.sigma};
  joined.lines.insert(joined.lines.end(), generated.begin(), generated.end());
  PruneOutcome out;
  out.magnitudes = line_grad_magnitudes(joined, ctx.robustness, ctx.mode, ctx.image, ctx.model, ctx.seed);
  const std::size_t k = std::min(existing.size() + 1, static_cast<std::size_t>(std::max(ctx.max_lines, 1)));
  out.selected = select_top_k(out.magnitudes, k);
  for (std::size_t i : out.selected) out.lines.push_back(joined.lines[i]);
  return out;
}

void AdamState::reset(std::size_t lines) {
  m_.assign(4 * lines, 0.0);
  v_.assign(4 * lines, 0.0);
  steps_.assign(lines, 0);
}

void AdamState::remap(std::span<const std::optional<std::size_t>> origin) {
  std::vector<double> m(4 * origin.size(), 0.0), v(4 * origin.size(), 0.0);
  std::vector<int> steps(origin.size(), 0);
  for (std::size_t i = 0; i < origin.size(); ++i) {
    if (!origin[i] || *origin[i] >= steps_.size()) continue;
    const std::size_t j = *origin[i];
    std::copy_n(m_.begin() + 4 * j, 4, m.begin() + 4 * i);
    std::copy_n(v_.begin() + 4 * j, 4, v.begin() + 4 * i);
    steps[i] = steps_[j];
  }
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = std::move(steps);
}

void AdamState::step(std::vector<Line>& lines, const Tensor& grad, double learning_rate, const BoundingBox& box) {
  if (grad.size() != 4 * lines.size()) {
    throw ContractViolation("gradient_step: " + std::to_string(lines.size()) + " lines but gradient shape " +
                            to_string(grad.shape()));
  }
  if (steps_.size() != lines.size()) reset(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int t = ++steps_[i];
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    float* coord[4] = {&lines[i].x0, &lines[i].y0, &lines[i].x1, &lines[i].y1};
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t p = 4 * i + k;
      const double g = grad[p];
      m_[p] = kBeta1 * m_[p] + (1.0 - kBeta1) * g;
      v_[p] = kBeta2 * v_[p] + (1.0 - kBeta2) * g * g;
      const double update = learning_rate * (m_[p] / c1) / (std::sqrt(v_[p] / c2) + kEpsilon);
      const bool is_x = (k % 2) == 0;
      const float lo = is_x ? box.x0 : box.y0, hi = is_x ? box.x1 : box.y1;
      if (update != 0.0) *coord[k] = std::clamp(static_cast<float>(*coord[k] - update), lo, hi);
    }
  }
}

std::vector<Line> gradient_step(std::span<const Line> lines, const Tensor& grad, double learning_rate,
                                const BoundingBox& clamp_box, AdamState& state) {
  std::vector<Line> out(lines.begin(), lines.end());
  state.step(out, grad, learning_rate, clamp_box);
  return out;
}

AttackResult attack(const Tensor& image, const ClassifierModel& model, const AttackConfig& cfg,
                    const StepObserver* observer) {
  const std::size_t s = model.input_size();
  model.check_image(image.shape());
  cfg.validate(s);
  if (cfg.mode.kind == AttackKind::Targeted &&
      (cfg.mode.target < 0 || static_cast<std::size_t>(cfg.mode.target) >= model.num_classes())) {
    throw ConfigError("target class " + std::to_string(cfg.mode.target) + " out of range");
  }

  const double sigma = cfg.sigma > 0.0 ? cfg.sigma : default_sigma(s);
  const BoundingBox box = clamp_box(cfg, s);
  const BoundingBox region = cfg.search_bbox ? *cfg.search_bbox : BoundingBox::full(s);

  AttackResult result;
  result.original = top1(model.predict(image));
  AttackMode mode = cfg.mode;
  if (mode.kind == AttackKind::Untargeted) mode.target = result.original.label;
  result.target = mode.target;
  const bool untargeted = mode.kind == AttackKind::Untargeted;

  Rng generator(derive_seed(cfg.seed, kGenerateStream));
  std::vector<Line> lines;
  AdamState adam;

  float best_objective = 0.0f;
  std::vector<Line> best_lines;
  bool best_succeeded = false;
  int stale = 0;

  auto notify = [&](int step, StepKind kind, float objective) {
    if (observer) (*observer)(StepEvent{step, kind, lines, objective});
  };

  // Bookkeeping for the objective measured at `lines` before any update.
  auto record = [&](int step, const LossEvaluation& eval) {
    const float objective = eval.objective;
    result.loss_trace.push_back({step, untargeted ? -objective : objective});
    if (best_lines.empty() || objective < best_objective) {
      best_objective = objective;
      best_lines = lines;
      stale = 0;
      const Tensor log_probs = eval.clean_log_probs.size() == model.num_classes()
                                   ? eval.clean_log_probs
                                   : predict_with_tag(TagParams{lines, sigma}, image, model);
      best_succeeded = succeeded(mode, result.original.label, argmax(log_probs.data()));
      if (best_succeeded && !result.first_success_step) result.first_success_step = step;
    } else {
      ++stale;
    }
  };

  auto evaluate = [&](int step, bool with_grad) {
    return evaluate_objective(TagParams{lines, sigma}, cfg.robustness, mode, image, model,
                              derive_seed(cfg.seed, kLossStream, static_cast<std::uint64_t>(step)), with_grad);
  };

  auto grow = [&](int step) {
    const std::vector<Line> generated = generate_candidates(cfg.expansion, region, cfg.line_length, generator);
    const PruneContext ctx{model,
                           image,
                           mode,
                           cfg.prune_robustness.value_or(cfg.robustness),
                           sigma,
                           cfg.max_lines,
                           derive_seed(cfg.seed, kPruneStream, static_cast<std::uint64_t>(step))};
    const PruneOutcome pruned = prune(lines, generated, ctx);
    std::vector<std::optional<std::size_t>> origin;
    for (std::size_t i : pruned.selected) origin.push_back(i < lines.size() ? std::optional(i) : std::nullopt);
    adam.remap(origin);
    lines = pruned.lines;
    const LossEvaluation eval = evaluate(step, false);
    record(step, eval);
    notify(step, StepKind::Prune, eval.objective);
  };

  grow(0);
  result.steps_used = cfg.max_steps > 0 ? 1 : 0;

  for (int step = 1; step < cfg.max_steps; ++step) {
    if (cfg.stop_on_success && best_succeeded) break;
    if (step % cfg.prune_interval == 0) {
      grow(step);
    } else {
      const LossEvaluation eval = evaluate(step, true);
      record(step, eval);
      adam.step(lines, eval.grad, cfg.learning_rate, box);
      notify(step, StepKind::Gradient, eval.objective);
    }
    result.steps_used = step + 1;
    if (stale >= cfg.patience) {
      lines = best_lines;
      adam.reset(lines.size());
      stale = 0;
      ++result.resets_used;
      notify(step, StepKind::Reset, best_objective);
      if (result.resets_used >= cfg.max_resets) break;
    }
  }

  result.best_lines = TagParams{best_lines, sigma};
  result.best_loss = untargeted ? -best_objective : best_objective;
  result.final_prediction = top1(predict_with_tag(result.best_lines, image, model));
  result.flipped = result.final_prediction.label != result.original.label;
  result.reached_target = !untargeted && result.final_prediction.label == mode.target;
  return result;
}

}  // namespace advtag
