#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advtag/classifier.hpp"
#include "advtag/dataset.hpp"
#include "advtag/errors.hpp"
#include "advtag/ops.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

using namespace advtag;
using advtag::testing::random_image;
using advtag::testing::TempDir;

namespace {

double nll_of(const reference::Model& ref, const std::vector<double>& image, int t, std::vector<int>* pattern) {
  reference::Margins m;
  const double v = -ref.log_probs(image, pattern ? &m : nullptr)[static_cast<std::size_t>(t)];
  if (pattern) *pattern = std::move(m.pattern);
  return v;
}

}  // namespace

TEST(Classifier, LogProbsNormalise) {
  ClassifierModel model(16, 10, 3);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const Tensor lp = model.predict(random_image(16, rng));
    ASSERT_EQ(lp.shape(), (Shape{10}));
    double total = 0.0;
    for (float v : lp.data()) total += std::exp(static_cast<double>(v));
    EXPECT_NEAR(total, 1.0, 1e-5);
  }
}

TEST(Classifier, PredictIsBitDeterministic) {
  ClassifierModel model(16, 4, 3);
  Rng rng(2);
  const Tensor img = random_image(16, rng);
  EXPECT_EQ(model.predict(img).values(), model.predict(img).values());
}

TEST(Classifier, WrongShapeRejected) {
  ClassifierModel model(16, 4, 3);
  EXPECT_THROW(model.predict(Tensor({3, 17, 17})), ContractViolation);
  EXPECT_THROW(model.predict(Tensor({1, 16, 16})), ContractViolation);
  EXPECT_THROW(ClassifierModel(8, 4, 0), ContractViolation);
}

TEST(Classifier, NllNonNegativeAndOrderedByProbability) {
  ClassifierModel model(16, 6, 4);
  Rng rng(3);
  const Tensor lp = model.predict(random_image(16, rng));
  std::vector<int> order(6);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return lp[a] > lp[b]; });
  float previous = -1.0f;
  for (int t : order) {
    Tape tape;
    const int target[1] = {t};
    const float nll = ops::nll_loss(tape.constant(lp.reshaped({1, 6})), target).value().item();
    EXPECT_GE(nll, 0.0f);
    EXPECT_GT(nll, previous);
    previous = nll;
  }
}

TEST(Classifier, InputGradientMatchesFiniteDifferences) {
  const std::size_t s = 16;
  ClassifierModel model(s, 10, 5);
  const reference::Model ref(model);
  Rng rng(4);
  Tensor img = random_image(s, rng);
  const int target = 7;

  Tensor x = img;
  x.set_requires_grad(true);
  {
    Tape tape;
    const int t[1] = {target};
    tape.backward(ops::nll_loss(model.predict(tape, tape.leaf(x)), t));
  }
  std::vector<double> d = reference::to_double(img);
  std::vector<int> base;
  nll_of(ref, d, target, &base);
  const double h = 1e-3;
  int checked = 0;
  double worst = 0.0;
  for (int trial = 0; checked < 50 && trial < 2000; ++trial) {
    const std::size_t i = rng.below(d.size());
    const double orig = d[i];
    std::vector<int> pu, pd;
    d[i] = orig + h;
    const double up = nll_of(ref, d, target, &pu);
    d[i] = orig - h;
    const double down = nll_of(ref, d, target, &pd);
    d[i] = orig;
    if (pu != base || pd != base) continue;  // stencil crosses a relu or pooling kink
    const double fd = (up - down) / (2 * h);
    const double a = x.grad()[i];
    worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
    ++checked;
  }
  EXPECT_EQ(checked, 50);
  EXPECT_LT(worst, 1e-2);
}

TEST(ModelFile, RoundTripPredictsIdentically) {
  TempDir dir;
  ClassifierModel model(16, 5, 6);
  save_model(model, dir / "m.bin");
  const ClassifierModel loaded = load_model(dir / "m.bin");
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const Tensor img = random_image(16, rng);
    const Tensor a = model.predict(img), b = loaded.predict(img);
    EXPECT_EQ(a.values(), b.values());
    EXPECT_EQ(argmax(a.data()), argmax(b.data()));
  }
}

TEST(ModelFile, ErrorPaths) {
  TempDir dir;
  ClassifierModel model(16, 5, 6);
  save_model(model, dir / "m.bin");
  const std::string bytes = advtag::testing::slurp(dir / "m.bin");

  advtag::testing::spit(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_model(dir / "short.bin"), FormatError);

  std::string bad = bytes;
  bad[0] = 'X';
  advtag::testing::spit(dir / "magic.bin", bad);
  EXPECT_THROW(load_model(dir / "magic.bin"), VersionError);

  std::string future = bytes;
  future[4] = 9;
  advtag::testing::spit(dir / "future.bin", future);
  EXPECT_THROW(load_model(dir / "future.bin"), VersionError);

  try {
    load_model(dir / "missing.bin");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.bin"), std::string::npos);
  }
}

TEST(Training, ToyTwoClassReachesFullAccuracy) {
  const Dataset data = make_toy_dataset(1000, 11);
  auto [train_set, held] = split_holdout(data, 0.25);
  TrainOptions opt;
  opt.epochs = 5;
  opt.seed = 3;
  const ClassifierModel model = train(train_set, opt);
  EXPECT_EQ(accuracy(model, held), 1.0);
}

TEST(Training, LossDecreasesDuringFirstEpoch) {
  const Dataset data = make_toy_dataset(640, 12);
  TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = 32;
  TrainLog log;
  train(data, opt, &log);
  ASSERT_EQ(log.batch_losses.size(), 20u);
  const double head = (log.batch_losses[0] + log.batch_losses[1] + log.batch_losses[2]) / 3.0;
  const double tail = (log.batch_losses[17] + log.batch_losses[18] + log.batch_losses[19]) / 3.0;
  EXPECT_LT(tail, head);
}

TEST(Training, SeededRunsAreByteIdentical) {
  TempDir dir;
  const Dataset data = make_toy_dataset(96, 13, 16);
  TrainOptions opt;
  opt.epochs = 2;
  opt.seed = 7;
  save_model(train(data, opt), dir / "a.bin");
  save_model(train(data, opt), dir / "b.bin");
  EXPECT_EQ(advtag::testing::slurp(dir / "a.bin"), advtag::testing::slurp(dir / "b.bin"));
}

TEST(Training, RejectsEmptyOrInconsistentData) {
  Dataset empty;
  empty.image_size = 16;
  empty.num_classes = 2;
  EXPECT_ANY_THROW(train(empty, {}));

  Dataset mixed = make_toy_dataset(8, 1, 16);
  mixed.items[3].pixels = Tensor({3, 12, 12});
  EXPECT_THROW(train(mixed, {}), ContractViolation);
}
