#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "advtag/errors.hpp"
#include "advtag/optimizer.hpp"
#include "test_util.hpp"

using namespace advtag;

namespace {

constexpr std::size_t kS = 32;

AttackConfig quick_config(int max_lines, int max_steps, std::uint64_t seed) {
  AttackConfig cfg;
  cfg.max_lines = max_lines;
  cfg.max_steps = max_steps;
  cfg.patience = std::min(cfg.patience, std::max(max_steps, 1));
  cfg.prune_interval = 20;
  cfg.robustness = RobustnessConfig::non_robust();
  cfg.seed = seed;
  return cfg;
}

bool inside(const Line& l, const BoundingBox& b) {
  return l.x0 >= b.x0 && l.x1 >= b.x0 && l.x0 <= b.x1 && l.x1 <= b.x1 && l.y0 >= b.y0 && l.y1 >= b.y0 &&
         l.y0 <= b.y1 && l.y1 <= b.y1;
}

// Dark-vs-bright toy classifier, trained once.
const ClassifierModel& toy_model() {
  static const ClassifierModel model = [] {
    TrainOptions opt;
    opt.epochs = 5;
    opt.seed = 3;
    return train(make_toy_dataset(1000, 11), opt);
  }();
  return model;
}

// Dimmest member of the toy set's bright class. Four strokes at this
// canvas size cover too little area to pull much brighter images across.
Tensor bright_image() { return Tensor({3, kS, kS}, 166.0f / 255.0f); }

}  // namespace

TEST(Candidates, SinglePointBoxGivesDegenerateLines) {
  const BoundingBox point{12.5f, 7.25f, 12.5f, 7.25f};
  for (const Line& l : generate_candidates(10, point, std::nullopt, 1)) {
    EXPECT_EQ(l, (Line{12.5f, 7.25f, 12.5f, 7.25f}));
  }
}

TEST(Candidates, FullCanvasRange) {
  const std::vector<Line> lines = generate_candidates(10, BoundingBox::full(64), std::nullopt, 2);
  ASSERT_EQ(lines.size(), 10u);
  for (const Line& l : lines) EXPECT_TRUE(inside(l, BoundingBox::full(64)));
}

TEST(Candidates, LengthRangeRespected) {
  const std::vector<Line> lines = generate_candidates(1000, BoundingBox::full(64), LengthRange{20, 50}, 3);
  for (const Line& l : lines) {
    EXPECT_GE(l.length(), 20.0 - 1e-4);
    EXPECT_LE(l.length(), 50.0 + 1e-4);
  }
}

TEST(Candidates, FallbackStretchesIntoRangeWhenSamplingFails) {
  // Lines of length ~4 are rare in a 64 box, so some draws use the fallback.
  const std::vector<Line> lines = generate_candidates(200, BoundingBox::full(64), LengthRange{4.0, 4.01}, 4);
  for (const Line& l : lines) {
    EXPECT_TRUE(inside(l, BoundingBox::full(64)));
    EXPECT_LE(l.length(), 4.01 + 1e-4);
  }
}

TEST(Candidates, DeterministicUnderSeed) {
  EXPECT_EQ(generate_candidates(10, BoundingBox::full(64), LengthRange{5, 30}, 9),
            generate_candidates(10, BoundingBox::full(64), LengthRange{5, 30}, 9));
  EXPECT_NE(generate_candidates(10, BoundingBox::full(64), std::nullopt, 9),
            generate_candidates(10, BoundingBox::full(64), std::nullopt, 10));
}

TEST(Candidates, InfeasibleLengthIsConfigError) {
  EXPECT_THROW(generate_candidates(3, BoundingBox{0, 0, 10, 10}, LengthRange{20, 30}, 1), ConfigError);
  AttackConfig cfg = quick_config(1, 10, 1);
  cfg.search_bbox = BoundingBox{0, 0, 10, 10};
  cfg.line_length = LengthRange{20, 30};
  EXPECT_THROW(cfg.validate(kS), ConfigError);
}

TEST(Prune, TopKTiesGoToLowerIndex) {
  const std::vector<double> scores{0.5, 2.0, 0.5, 2.0, 1.0};
  EXPECT_EQ(select_top_k(scores, 3), (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_EQ(select_top_k(scores, 5), (std::vector<std::size_t>{1, 3, 4, 0, 2}));
  EXPECT_EQ(select_top_k(scores, 9).size(), 5u);
}

TEST(Prune, SelectionMatchesSortOracle) {
  const ClassifierModel model(kS, 10, 1);
  Rng rng(1);
  const Tensor image = advtag::testing::random_image(kS, rng);
  const std::vector<Line> existing = generate_candidates(2, BoundingBox::full(kS), std::nullopt, 5);
  const std::vector<Line> generated = generate_candidates(3, BoundingBox::full(kS), std::nullopt, 6);
  const PruneContext ctx{model, image, {AttackKind::Targeted, 2}, RobustnessConfig::non_robust(), 4.0, 9, 1};
  const PruneOutcome out = prune(existing, generated, ctx);

  std::vector<Line> joined = existing;
  joined.insert(joined.end(), generated.begin(), generated.end());
  const std::vector<double> recorded =
      line_grad_magnitudes(TagParams{joined, 4.0}, ctx.robustness, ctx.mode, image, model, ctx.seed);
  ASSERT_EQ(out.magnitudes, recorded);

  // Repeated selection of the maximum, first index on ties.
  std::vector<bool> taken(recorded.size(), false);
  std::vector<std::size_t> want;
  for (int r = 0; r < 3; ++r) {
    std::size_t best = recorded.size();
    for (std::size_t i = 0; i < recorded.size(); ++i)
      if (!taken[i] && (best == recorded.size() || recorded[i] > recorded[best])) best = i;
    taken[best] = true;
    want.push_back(best);
  }
  EXPECT_EQ(out.selected, want);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(out.lines[i], joined[want[i]]);
}

TEST(Prune, SizeIsCPlusOneCappedAtN) {
  const ClassifierModel model(kS, 10, 2);
  Rng rng(2);
  const Tensor image = advtag::testing::random_image(kS, rng);
  const std::vector<Line> generated = generate_candidates(10, BoundingBox::full(kS), std::nullopt, 7);
  PruneContext ctx{model, image, {AttackKind::Targeted, 0}, RobustnessConfig::non_robust(), 4.0, 3, 1};

  const PruneOutcome first = prune({}, generated, ctx);
  ASSERT_EQ(first.lines.size(), 1u);
  EXPECT_EQ(first.magnitudes[first.selected[0]], *std::max_element(first.magnitudes.begin(), first.magnitudes.end()));

  const std::vector<Line> full = generate_candidates(3, BoundingBox::full(kS), std::nullopt, 8);
  EXPECT_EQ(prune(full, generated, ctx).lines.size(), 3u);
  EXPECT_EQ(prune(std::vector<Line>(full.begin(), full.begin() + 1), generated, ctx).lines.size(), 2u);
}

TEST(Adam, ZeroGradientLeavesCoordinates) {
  AdamState state;
  const std::vector<Line> lines{{1.5f, 2.5f, 3.5f, 4.5f}, {10, 11, 12, 13}};
  const std::vector<Line> out = gradient_step(lines, Tensor({2, 4}), 0.5, BoundingBox::full(kS), state);
  EXPECT_EQ(out, lines);
}

TEST(Adam, OutwardGradientAtEdgeStaysOnEdge) {
  AdamState state;
  const BoundingBox box{4, 4, 20, 20};
  std::vector<Line> lines{{4, 20, 20, 4}};
  Tensor grad({1, 4});
  grad[0] = 1.0f;   // pushes x0 below 4
  grad[1] = -1.0f;  // pushes y0 above 20
  grad[2] = -1.0f;
  grad[3] = 1.0f;
  for (int i = 0; i < 5; ++i) lines = gradient_step(lines, grad, 0.5, box, state);
  EXPECT_EQ(lines[0], (Line{4, 20, 20, 4}));
}

TEST(Adam, ConvergesOnQuadratic) {
  AdamState state;
  const double optimum = 17.3;
  std::vector<Line> lines{{5, 0, 0, 0}};
  for (int i = 0; i < 500; ++i) {
    Tensor grad({1, 4});
    grad[0] = static_cast<float>(2.0 * (lines[0].x0 - optimum));
    lines = gradient_step(lines, grad, 0.5, BoundingBox::full(kS), state);
  }
  EXPECT_NEAR(lines[0].x0, optimum, 1e-3);
  EXPECT_EQ(lines[0].y0, 0.0f);
}

TEST(Adam, RemapKeepsSurvivorsAndZeroesNewcomers) {
  AdamState a, b;
  std::vector<Line> one{{10, 10, 10, 10}};
  Tensor g1({1, 4}, 1.0f);
  one = gradient_step(one, g1, 0.5, BoundingBox::full(kS), a);
  one = gradient_step(one, g1, 0.5, BoundingBox::full(kS), a);
  // Survivor moved to slot 1 continues exactly as an unmoved copy would.
  std::vector<Line> ref = one;
  b = a;
  const std::vector<std::optional<std::size_t>> origin{std::nullopt, 0};
  a.remap(origin);
  std::vector<Line> two{{20, 20, 20, 20}, one[0]};
  Tensor g2({2, 4}, 1.0f);
  two = gradient_step(two, g2, 0.5, BoundingBox::full(kS), a);
  ref = gradient_step(ref, g1, 0.5, BoundingBox::full(kS), b);
  EXPECT_EQ(two[1], ref[0]);
  // A fresh Adam step moves each coordinate by the learning rate.
  EXPECT_FLOAT_EQ(two[0].x0, 19.5f);
}

TEST(Attack, ZeroStepsReturnsSeedLine) {
  const ClassifierModel& model = toy_model();
  const Tensor image({3, kS, kS}, 0.8f);
  AttackConfig cfg = quick_config(4, 0, 1);
  const AttackResult r = attack(image, model, cfg);
  EXPECT_EQ(r.steps_used, 0);
  EXPECT_FALSE(r.flipped);
  EXPECT_EQ(r.best_lines.lines.size(), 1u);
  EXPECT_EQ(r.loss_trace.size(), 1u);
  EXPECT_EQ(r.resets_used, 0);
}

TEST(Attack, DeterministicUnderSeed) {
  const ClassifierModel model(kS, 10, 3);
  Rng rng(3);
  const Tensor image = advtag::testing::random_image(kS, rng);
  AttackConfig cfg = quick_config(3, 120, 42);
  cfg.robustness = RobustnessConfig{};
  const AttackResult a = attack(image, model, cfg);
  const AttackResult b = attack(image, model, cfg);
  EXPECT_EQ(a.best_lines.lines, b.best_lines.lines);
  EXPECT_EQ(a.best_loss, b.best_loss);
  ASSERT_EQ(a.loss_trace.size(), b.loss_trace.size());
  for (std::size_t i = 0; i < a.loss_trace.size(); ++i) EXPECT_EQ(a.loss_trace[i].loss, b.loss_trace[i].loss);
  cfg.seed = 43;
  EXPECT_NE(attack(image, model, cfg).best_lines.lines, a.best_lines.lines);
}

TEST(Attack, GrowthScheduleAndBudget) {
  const ClassifierModel model(kS, 10, 4);
  Rng rng(4);
  const Tensor image = advtag::testing::random_image(kS, rng);
  AttackConfig cfg = quick_config(4, 150, 5);
  cfg.patience = 150;
  cfg.search_bbox = BoundingBox{3, 5, 25, 30};
  int events = 0;
  const StepObserver obs = [&](const StepEvent& e) {
    ++events;
    ASSERT_NE(e.kind, StepKind::Reset);
    const std::size_t want = std::min<std::size_t>(1 + e.step / cfg.prune_interval, cfg.max_lines);
    EXPECT_EQ(e.lines.size(), want) << "step " << e.step;
    for (const Line& l : e.lines) EXPECT_TRUE(inside(l, *cfg.search_bbox));
  };
  const AttackResult r = attack(image, model, cfg, &obs);
  EXPECT_EQ(events, 150);
  EXPECT_EQ(r.steps_used, 150);
  EXPECT_LE(r.best_lines.lines.size(), 4u);
}

TEST(Attack, ResetRestoresBestBitExactly) {
  const ClassifierModel model(kS, 10, 5);
  Rng rng(5);
  const Tensor image = advtag::testing::random_image(kS, rng);
  AttackConfig cfg = quick_config(2, 2000, 6);
  cfg.patience = 15;
  cfg.max_resets = 4;
  cfg.learning_rate = 3.0;  // overshoots, so stale streaks happen quickly

  std::vector<Line> previous, best;
  float best_objective = 0.0f;
  int resets = 0;
  const StepObserver obs = [&](const StepEvent& e) {
    if (e.kind == StepKind::Reset) {
      ++resets;
      EXPECT_EQ(e.lines, best);
      EXPECT_EQ(e.objective, best_objective);
    } else {
      // Gradient events report the objective of the coordinates before the update.
      const std::vector<Line>& evaluated = e.kind == StepKind::Prune ? e.lines : previous;
      if (best.empty() || e.objective < best_objective) {
        best = evaluated;
        best_objective = e.objective;
      }
    }
    previous = e.lines;
  };
  const AttackResult r = attack(image, model, cfg, &obs);
  EXPECT_GT(resets, 0);
  EXPECT_EQ(r.resets_used, resets);
  EXPECT_LE(r.resets_used, cfg.max_resets);
  EXPECT_LE(r.steps_used, cfg.max_steps);
  EXPECT_EQ(r.best_lines.lines, best);
}

TEST(Attack, BestLossIsExtremeOfTrace) {
  const ClassifierModel model(kS, 10, 6);
  Rng rng(6);
  const Tensor image = advtag::testing::random_image(kS, rng);
  for (AttackKind kind : {AttackKind::Targeted, AttackKind::Untargeted}) {
    AttackConfig cfg = quick_config(2, 200, 7);
    cfg.mode = {kind, 7};
    const AttackResult r = attack(image, model, cfg);
    ASSERT_FALSE(r.loss_trace.empty());
    float extreme = r.loss_trace[0].loss;
    for (const TraceEntry& t : r.loss_trace)
      extreme = kind == AttackKind::Targeted ? std::min(extreme, t.loss) : std::max(extreme, t.loss);
    EXPECT_EQ(r.best_loss, extreme);
    const Tensor lp = predict_with_tag(r.best_lines, image, model);
    EXPECT_EQ(r.final_prediction.label, argmax(lp.data()));
    EXPECT_EQ(r.flipped, r.final_prediction.label != r.original.label);
    if (kind == AttackKind::Targeted) EXPECT_EQ(r.reached_target, r.final_prediction.label == 7);
    else EXPECT_FALSE(r.reached_target);
  }
}

TEST(Attack, ToyBrightImageFlipsToDark) {
  const ClassifierModel& model = toy_model();
  const Tensor image = bright_image();
  ASSERT_EQ(argmax(model.predict(image).data()), 1);
  AttackConfig cfg = quick_config(4, 2000, 1);
  cfg.prune_interval = 100;
  cfg.patience = 1000;
  cfg.robustness = RobustnessConfig{};
  cfg.stop_on_success = true;
  const AttackResult r = attack(image, model, cfg);
  ASSERT_TRUE(r.first_success_step.has_value());
  EXPECT_LT(*r.first_success_step, 2000);
  EXPECT_TRUE(r.flipped);
  EXPECT_EQ(r.final_prediction.label, 0);
  EXPECT_LE(r.best_lines.lines.size(), 4u);
}

TEST(Attack, StopOnSuccessRecordsFirstSuccess) {
  const ClassifierModel& model = toy_model();
  const Tensor image = bright_image();
  AttackConfig cfg = quick_config(4, 2000, 8);
  cfg.prune_interval = 100;
  cfg.patience = 1000;
  cfg.stop_on_success = true;
  const AttackResult r = attack(image, model, cfg);
  ASSERT_TRUE(r.flipped);
  ASSERT_TRUE(r.first_success_step.has_value());
  EXPECT_EQ(r.steps_used, *r.first_success_step + 1);
}

TEST(Attack, RejectsInvalidInput) {
  const ClassifierModel model(kS, 10, 7);
  const Tensor image({3, kS, kS}, 0.5f);
  AttackConfig cfg = quick_config(2, 10, 1);
  cfg.patience = 11;
  EXPECT_THROW(attack(image, model, cfg), ConfigError);
  cfg = quick_config(0, 10, 1);
  EXPECT_THROW(attack(image, model, cfg), ConfigError);
  cfg = quick_config(2, 10, 1);
  cfg.search_bbox = BoundingBox{0, 0, 40, 10};
  EXPECT_THROW(attack(image, model, cfg), ConfigError);
  cfg = quick_config(2, 10, 1);
  cfg.mode = {AttackKind::Targeted, 10};
  EXPECT_THROW(attack(image, model, cfg), ConfigError);
  EXPECT_THROW(attack(Tensor({3, 16, 16}, 0.5f), model, quick_config(2, 10, 1)), ContractViolation);
}

TEST(Attack, BoundingBoxAtImageEdge) {
  const ClassifierModel model(kS, 10, 8);
  Rng rng(8);
  const Tensor image = advtag::testing::random_image(kS, rng);
  AttackConfig cfg = quick_config(3, 100, 9);
  cfg.search_bbox = BoundingBox{24, 0, 32, 32};
  cfg.robustness = RobustnessConfig{};
  const StepObserver obs = [&](const StepEvent& e) {
    for (const Line& l : e.lines) ASSERT_TRUE(inside(l, *cfg.search_bbox));
    ASSERT_TRUE(std::isfinite(e.objective));
  };
  const AttackResult r = attack(image, model, cfg, &obs);
  EXPECT_TRUE(std::isfinite(r.best_loss));
}
