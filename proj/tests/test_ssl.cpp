#include "fixmatch/ssl.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace fixmatch;

namespace {

// Model whose prediction is a fixed distribution regardless of input: zero
// weights, dense bias = log of the wanted probabilities.
Classifier constant_model(const std::vector<double>& dist, std::size_t input_pixels) {
  Classifier model = make_classifier(1, static_cast<int>(input_pixels), 1,
                                     {LayerSpec::dense(static_cast<int>(dist.size()))});
  auto& dense = std::get<DenseLayer>(model.layers[0]);
  for (std::size_t i = 0; i < dist.size(); ++i)
    dense.bias[i] = std::log(dist[i]);
  return model;
}

ImageU8 flat_image(std::size_t pixels, std::uint8_t value) {
  return ImageU8(1, static_cast<int>(pixels), 1, value);
}

const WeakAugConfig kIdentityWeak{false, 0.0};

LabeledBatch one_hot_batch(const std::vector<ImageU8>& images,
                           const std::vector<int>& classes, std::size_t L) {
  LabeledBatch b;
  b.images = images;
  b.labels = Tensor({images.size(), L});
  for (std::size_t i = 0; i < images.size(); ++i)
    b.labels.at2(i, static_cast<std::size_t>(classes[i])) = 1.0;
  return b;
}

bool grads_equal(const GradSet& a, const GradSet& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].data != b.tensors[i].data) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// pseudo_label / sharpen / distribution_align
// ---------------------------------------------------------------------------

TEST(PseudoLabel, ThresholdRetention) {
  auto [label_a, kept_a] = pseudo_label(Tensor::vec({0.96, 0.04}), 0.95);
  EXPECT_TRUE(kept_a);
  EXPECT_DOUBLE_EQ(label_a[0], 1.0);

  auto [label_b, kept_b] = pseudo_label(Tensor::vec({0.94, 0.06}), 0.95);
  EXPECT_FALSE(kept_b);

  auto [label_c, kept_c] = pseudo_label(Tensor::vec({0.2, 0.3, 0.5}), 0.0);
  EXPECT_TRUE(kept_c);  // tau = 0 always retains
  EXPECT_DOUBLE_EQ(label_c[2], 1.0);
}

TEST(Sharpen, TemperatureOneIsIdentity) {
  RngStream rng(3, {StreamPurpose::kScratch, 0, 0});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.next_below(9);
    Tensor q({n});
    double sum = 0.0;
    for (auto& v : q.data) {
      v = rng.next_unit() + 1e-9;
      sum += v;
    }
    for (auto& v : q.data) v /= sum;
    Tensor out = sharpen(q, 1.0);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(out[i], q[i], 1e-12);
  }
}

TEST(Sharpen, TemperatureZeroIsArgmax) {
  Tensor out = sharpen(Tensor::vec({0.3, 0.5, 0.2}), 0.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
}

TEST(Sharpen, HalfTemperatureSquaresAndRenormalizes) {
  Tensor out = sharpen(Tensor::vec({0.8, 0.2}), 0.5);
  EXPECT_NEAR(out[0], 0.9411764705882353, 1e-12);
  EXPECT_NEAR(out[1], 0.0588235294117647, 1e-12);
}

TEST(Sharpen, PreservesArgmaxForAllPositiveTemperatures) {
  RngStream rng(4, {StreamPurpose::kScratch, 0, 1});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.next_below(8);
    Tensor q({n});
    double sum = 0.0;
    for (auto& v : q.data) {
      v = rng.next_unit() + 1e-6;
      sum += v;
    }
    for (auto& v : q.data) v /= sum;
    const std::size_t base = argmax_index(std::span<const double>(q.data));
    for (double t : {0.05, 0.3, 1.0, 2.0, 10.0}) {
      Tensor s = sharpen(q, t);
      EXPECT_EQ(argmax_index(std::span<const double>(s.data)), base);
    }
  }
}

TEST(Sharpen, TinyTemperatureApproachesOneHot) {
  RngStream rng(5, {StreamPurpose::kScratch, 0, 2});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.next_below(9);
    Tensor q({n});
    double sum = 0.0;
    for (auto& v : q.data) {
      v = rng.next_unit() + 1e-3;
      sum += v;
    }
    for (auto& v : q.data) v /= sum;
    // enforce a top-two gap of at least 0.01
    std::vector<double> sorted(q.data.begin(), q.data.end());
    std::sort(sorted.rbegin(), sorted.rend());
    if (sorted[0] - sorted[1] < 0.01) continue;
    Tensor hard = argmax_onehot(q);
    Tensor soft = sharpen(q, 1e-3);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(soft[i], hard[i], 1e-6);
  }
}

TEST(DistributionAlign, UnitRatioIsExactIdentity) {
  DaState da = DaState::make(Tensor::vec({0.5, 0.5}));
  da.running_pred = Tensor::vec({0.5, 0.5});
  Tensor q = Tensor::vec({0.25, 0.75});
  Tensor out = distribution_align(q, da);
  EXPECT_DOUBLE_EQ(out[0], 0.25);
  EXPECT_DOUBLE_EQ(out[1], 0.75);
}

TEST(DistributionAlign, WorkedExample) {
  DaState da = DaState::make(Tensor::vec({0.75, 0.25}));
  da.running_pred = Tensor::vec({0.5, 0.5});
  Tensor out = distribution_align(Tensor::vec({0.5, 0.5}), da);
  EXPECT_DOUBLE_EQ(out[0], 0.75);
  EXPECT_DOUBLE_EQ(out[1], 0.25);
}

TEST(DistributionAlign, OutputSumsToOne) {
  RngStream rng(6, {StreamPurpose::kScratch, 0, 3});
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng.next_below(9);
    auto random_dist = [&]() {
      Tensor t({n});
      double sum = 0.0;
      for (auto& v : t.data) {
        v = rng.next_unit() + 1e-9;
        sum += v;
      }
      for (auto& v : t.data) v /= sum;
      return t;
    };
    DaState da = DaState::make(random_dist());
    da.running_pred = random_dist();
    Tensor out = distribution_align(random_dist(), da);
    double sum = 0.0;
    for (double v : out.data) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(DaState, MarginalAndRunningUpdate) {
  Dataset ds;
  ds.num_classes = 4;
  ds.labels = {0, 0, 1, 2};
  ds.images.resize(4, ImageU8(2, 2, 1));
  Tensor marginal = DaState::marginal_of(ds);
  EXPECT_DOUBLE_EQ(marginal[0], 0.5);
  EXPECT_DOUBLE_EQ(marginal[3], 0.0);

  DaState da = DaState::make(marginal, 0.9);
  EXPECT_DOUBLE_EQ(da.running_pred[0], 0.25);  // starts uniform
  da.update(Tensor::vec({1.0, 0.0, 0.0, 0.0}));
  EXPECT_NEAR(da.running_pred[0], 0.9 * 0.25 + 0.1, 1e-15);
}

// ---------------------------------------------------------------------------
// batch_stats
// ---------------------------------------------------------------------------

TEST(BatchStats, WorkedExample) {
  BatchStats s = batch_stats({true, true, true, false}, {0, 1, 2, 0},
                             {0, 1, 1, 0}, {0.9, 0.9, 0.9, 0.3});
  EXPECT_DOUBLE_EQ(s.mask_rate, 0.75);
  ASSERT_TRUE(s.impurity.has_value());
  EXPECT_NEAR(*s.impurity, 1.0 / 3.0, 1e-15);
}

TEST(BatchStats, AllRetainedAllCorrect) {
  BatchStats s = batch_stats({true, true}, {1, 0}, {1, 0}, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(s.mask_rate, 1.0);
  EXPECT_DOUBLE_EQ(*s.impurity, 0.0);
}

TEST(BatchStats, NoneRetainedReportsAbsentImpurity) {
  BatchStats s = batch_stats({false, false}, {0, 1}, {0, 1}, {0.4, 0.4});
  EXPECT_DOUBLE_EQ(s.mask_rate, 0.0);
  EXPECT_FALSE(s.impurity.has_value());
}

// Mask rate is non-increasing in tau for any fixed prediction set.
TEST(BatchStats, MaskRateMonotoneInThreshold) {
  RngStream rng(7, {StreamPurpose::kScratch, 0, 4});
  const std::size_t n = 1000;
  std::vector<double> confidence(n);
  for (auto& c : confidence) c = rng.next_unit();
  const double grid[] = {0.25, 0.5, 0.75, 0.85, 0.9, 0.95, 0.97, 0.99};
  double prev = 2.0;
  for (double tau : grid) {
    std::vector<bool> retained(n);
    for (std::size_t i = 0; i < n; ++i) retained[i] = confidence[i] >= tau;
    BatchStats s = batch_stats(retained, std::vector<int>(n, 0),
                               std::vector<int>(n, 0), confidence);
    EXPECT_LE(s.mask_rate, prev);
    prev = s.mask_rate;
  }
}

// ---------------------------------------------------------------------------
// supervised_loss
// ---------------------------------------------------------------------------

TEST(SupervisedLoss, UniformModelGivesLogL) {
  Classifier model = make_default_classifier(8, 8, 1, 10);  // zero weights
  std::vector<ImageU8> images(4, ImageU8(8, 8, 1, 100));
  LabeledBatch batch = one_hot_batch(images, {0, 3, 5, 9}, 10);
  LossResult r = supervised_loss(model, batch, kIdentityWeak, {11, 0});
  EXPECT_NEAR(r.loss, 2.302585092994046, 1e-12);
}

TEST(SupervisedLoss, NearPerfectPredictionNearZero) {
  Classifier model = constant_model({1.0, 1e-12}, 4);
  // rescale bias into a huge logit gap
  auto& dense = std::get<DenseLayer>(model.layers[0]);
  dense.bias = Tensor::vec({40.0, 0.0});
  LabeledBatch batch = one_hot_batch({flat_image(4, 0)}, {0}, 2);
  LossResult r = supervised_loss(model, batch, kIdentityWeak, {12, 0});
  EXPECT_LT(r.loss, 1e-9);
}

TEST(SupervisedLoss, TwoExampleWorkedValue) {
  // logits chosen so softmax gives [0.9, 0.1] for pixel 255 and [0.6, 0.4]
  // for pixel 0; both true class 0
  Classifier model = make_classifier(1, 1, 1, {LayerSpec::dense(2)});
  auto& dense = std::get<DenseLayer>(model.layers[0]);
  const double v10 = std::log(0.9), v11 = std::log(0.1);  // at x = +1
  const double v20 = std::log(0.6), v21 = std::log(0.4);  // at x = -1
  dense.weights.at2(0, 0) = (v10 - v20) / 2.0;
  dense.weights.at2(0, 1) = (v11 - v21) / 2.0;
  dense.bias[0] = (v10 + v20) / 2.0;
  dense.bias[1] = (v11 + v21) / 2.0;

  LabeledBatch batch = one_hot_batch({flat_image(1, 255), flat_image(1, 0)},
                                     {0, 0}, 2);
  LossResult r = supervised_loss(model, batch, kIdentityWeak, {13, 0});
  EXPECT_NEAR(r.loss, 0.30809306971190853, 1e-9);
}

TEST(SupervisedLoss, EmptyBatchThrows) {
  Classifier model = make_default_classifier(8, 8, 1, 3);
  LabeledBatch batch;
  batch.labels = Tensor({0, 3});
  EXPECT_THROW(supervised_loss(model, batch, kIdentityWeak, {1, 0}),
               std::invalid_argument);
}

TEST(SupervisedLoss, WorkerCountDoesNotChangeBits) {
  Classifier model = make_default_classifier(10, 10, 1, 5);
  init_params(model, 3);
  RngStream rng(8, {StreamPurpose::kScratch, 0, 5});
  std::vector<ImageU8> images;
  std::vector<int> classes;
  for (int i = 0; i < 50; ++i) {
    images.push_back(testutil::random_image(rng, 10, 10, 1));
    classes.push_back(static_cast<int>(rng.next_below(5)));
  }
  LabeledBatch batch = one_hot_batch(images, classes, 5);
  WeakAugConfig weak{true, 0.125};

  parallel_workers() = 1;
  LossResult serial = supervised_loss(model, batch, weak, {14, 2});
  parallel_workers() = 4;
  LossResult parallel = supervised_loss(model, batch, weak, {14, 2});
  parallel_workers() = 0;
  EXPECT_EQ(serial.loss, parallel.loss);
  EXPECT_TRUE(grads_equal(serial.grads, parallel.grads));
}

// ---------------------------------------------------------------------------
// unsupervised_loss
// ---------------------------------------------------------------------------

TEST(UnsupervisedLoss, AllMaskedGivesZeroLossAndZeroGrads) {
  Classifier model = make_default_classifier(8, 8, 1, 10);  // uniform 0.1 < tau
  UnlabeledBatch batch;
  batch.images.assign(6, ImageU8(8, 8, 1, 90));
  batch.hidden_labels = {0, 1, 2, 3, 4, 5};
  FixMatchConfig cfg;
  cfg.policy = StrongPolicy::kNone;
  UnsupervisedResult r =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, nullptr, {15, 0});
  EXPECT_DOUBLE_EQ(r.loss, 0.0);
  for (const auto& t : r.grads.tensors)
    for (double v : t.data) EXPECT_DOUBLE_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(r.stats.mask_rate, 0.0);
  EXPECT_FALSE(r.stats.impurity.has_value());
}

TEST(UnsupervisedLoss, UniformStrongPredictionGivesLogTwo) {
  // constant-prediction model at [0.5, 0.5]: every example retained at
  // tau = 0.5, every strong-branch cross-entropy is ln 2
  Classifier model = constant_model({0.5, 0.5}, 4);
  UnlabeledBatch batch;
  batch.images = {flat_image(4, 255), flat_image(4, 0)};
  batch.hidden_labels = {0, 1};
  FixMatchConfig cfg;
  cfg.tau = 0.5;
  cfg.policy = StrongPolicy::kNone;
  UnsupervisedResult r =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, nullptr, {16, 0});
  EXPECT_NEAR(r.loss, 0.6931471805599453, 1e-12);
  EXPECT_DOUBLE_EQ(r.stats.mask_rate, 1.0);
}

// Anchoring with M = 1 must equal the plain formulation bit-exactly when both
// evaluate the same strong sample.
TEST(UnsupervisedLoss, SingleAnchorMatchesHandRolledReference) {
  Classifier model = make_default_classifier(12, 12, 1, 4);
  init_params(model, 19);
  RngStream rng(20, {StreamPurpose::kScratch, 0, 6});
  UnlabeledBatch batch;
  for (int i = 0; i < 9; ++i) {
    batch.images.push_back(testutil::random_image(rng, 12, 12, 1));
    batch.hidden_labels.push_back(static_cast<int>(rng.next_below(4)));
  }
  FixMatchConfig cfg;
  cfg.tau = 0.2;
  cfg.anchors = 1;
  cfg.policy = StrongPolicy::kRandAugment;
  WeakAugConfig weak{true, 0.125};
  const RngPlan plan{21, 5};

  UnsupervisedResult lib =
      unsupervised_loss(model, batch, cfg, weak, nullptr, nullptr, plan);

  // independent reference: replay the same streams, apply the plain
  // threshold-and-cross-entropy recipe
  double ref_loss = 0.0;
  const std::size_t n = batch.images.size();
  for (std::size_t i = 0; i < n; ++i) {
    RngStream weak_rng = plan.stream(StreamPurpose::kWeakUnlabeled, i);
    ImageU8 weak_img = weak_augment(batch.images[i], weak, weak_rng);
    Tensor one({1, static_cast<std::size_t>(12 * 12)});
    auto x = image_to_input(weak_img);
    for (std::size_t j = 0; j < x.size(); ++j) one[j] = x[j];
    Tensor q = predict_dist(model, one);
    double mx = 0.0;
    std::size_t top = 0;
    for (std::size_t k = 0; k < q.size(); ++k)
      if (q[k] > mx) {
        mx = q[k];
        top = k;
      }
    if (mx < cfg.tau) continue;
    RngStream strong_rng = plan.stream(StreamPurpose::kStrongAug, i);
    ImageU8 strong_img =
        strong_augment(batch.images[i], StrongPolicy::kRandAugment, nullptr,
                       strong_rng);
    auto xs = image_to_input(strong_img);
    for (std::size_t j = 0; j < xs.size(); ++j) one[j] = xs[j];
    Tensor p = predict_dist(model, one);
    ref_loss += -std::log(std::max(p[top], kProbFloor)) / static_cast<double>(n);
  }
  EXPECT_EQ(lib.loss, ref_loss);  // bit-exact
}

// With identity weak/strong augmentation the consistency loss collapses to
// the plain self-training loss, gradients included.
TEST(UnsupervisedLoss, IdentityAugmentationReducesToSelfTraining) {
  Classifier model = constant_model({0.96, 0.04}, 6);
  UnlabeledBatch batch;
  batch.images = {flat_image(6, 10), flat_image(6, 200), flat_image(6, 90)};
  FixMatchConfig cfg;
  cfg.tau = 0.9;
  cfg.policy = StrongPolicy::kNone;
  UnsupervisedResult consistency =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, nullptr, {22, 0});
  LossResult self_training = pseudo_labeling_loss(model, batch, 0.9);
  EXPECT_EQ(consistency.loss, self_training.loss);
  EXPECT_TRUE(grads_equal(consistency.grads, self_training.grads));
  EXPECT_NEAR(consistency.loss, -std::log(0.96), 1e-9);
}

// The pseudo-label is a constant: gradients match finite differences of the
// loss with labels frozen at the base parameters.
TEST(UnsupervisedLoss, GradientStopsAtPseudoLabel) {
  Classifier model = make_classifier(1, 4, 1, {LayerSpec::dense(3)});
  init_params(model, 23);
  auto& dense = std::get<DenseLayer>(model.layers[0]);
  dense.bias = Tensor::vec({1.2, 0.1, -0.4});  // confident head

  UnlabeledBatch batch;
  batch.images = {flat_image(4, 200), flat_image(4, 30)};
  FixMatchConfig cfg;
  cfg.tau = 0.0;
  cfg.policy = StrongPolicy::kNone;
  const RngPlan plan{24, 0};

  UnsupervisedResult base =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, nullptr, plan);

  // freeze labels at the base parameters
  std::vector<Tensor> frozen_labels;
  for (const auto& img : batch.images) {
    Tensor one({1, 4});
    auto x = image_to_input(img);
    for (std::size_t j = 0; j < 4; ++j) one[j] = x[j];
    frozen_labels.push_back(argmax_onehot(predict_dist(model, one)));
  }
  auto frozen_loss = [&](const Classifier& m) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.images.size(); ++i) {
      Tensor one({1, 4});
      auto x = image_to_input(batch.images[i]);
      for (std::size_t j = 0; j < 4; ++j) one[j] = x[j];
      Tensor p = predict_dist(m, one);
      total += cross_entropy(frozen_labels[i], p) / 2.0;
    }
    return total;
  };

  const double eps = 1e-6;
  auto params = model.param_tensors();
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t j = 0; j < params[t]->size(); ++j) {
      const double saved = (*params[t])[j];
      (*params[t])[j] = saved + eps;
      const double up = frozen_loss(model);
      (*params[t])[j] = saved - eps;
      const double down = frozen_loss(model);
      (*params[t])[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      EXPECT_NEAR(base.grads.tensors[t][j], numeric, 1e-6);
    }
}

TEST(UnsupervisedLoss, AlignmentChangesThresholdDecision) {
  // raw prediction [0.9, 0.1] fails tau = 0.95; alignment toward a
  // class-0-heavy marginal pushes it over
  Classifier model = constant_model({0.9, 0.1}, 4);
  UnlabeledBatch batch;
  batch.images = {flat_image(4, 70)};
  FixMatchConfig cfg;
  cfg.tau = 0.95;
  cfg.policy = StrongPolicy::kNone;

  UnsupervisedResult raw =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, nullptr, {25, 0});
  EXPECT_DOUBLE_EQ(raw.stats.mask_rate, 0.0);

  cfg.da_enabled = true;
  DaState da = DaState::make(Tensor::vec({0.8, 0.2}));
  da.running_pred = Tensor::vec({0.3, 0.7});
  UnsupervisedResult aligned =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, &da, {25, 0});
  EXPECT_DOUBLE_EQ(aligned.stats.mask_rate, 1.0);
}

TEST(UnsupervisedLoss, MeanWeakPredFeedsAlignmentState) {
  Classifier model = constant_model({0.7, 0.3}, 4);
  UnlabeledBatch batch;
  batch.images.assign(5, flat_image(4, 50));
  FixMatchConfig cfg;
  cfg.policy = StrongPolicy::kNone;
  UnsupervisedResult r =
      unsupervised_loss(model, batch, cfg, kIdentityWeak, nullptr, nullptr, {26, 0});
  EXPECT_NEAR(r.mean_weak_pred[0], 0.7, 1e-12);
  EXPECT_NEAR(r.mean_weak_pred[1], 0.3, 1e-12);
}

// ---------------------------------------------------------------------------
// total_loss
// ---------------------------------------------------------------------------

TEST(TotalLoss, ZeroWeightKeepsSupervisedBits) {
  Classifier model = make_default_classifier(8, 8, 1, 3);
  init_params(model, 31);
  RngStream rng(32, {StreamPurpose::kScratch, 0, 7});
  LabeledBatch lab = one_hot_batch({testutil::random_image(rng, 8, 8, 1),
                                    testutil::random_image(rng, 8, 8, 1)},
                                   {0, 2}, 3);
  UnlabeledBatch unlab;
  unlab.images = {testutil::random_image(rng, 8, 8, 1)};
  FixMatchConfig cfg;
  cfg.tau = 0.0;
  cfg.policy = StrongPolicy::kRandAugment;

  LossResult s = supervised_loss(model, lab, kIdentityWeak, {33, 0});
  UnsupervisedResult u =
      unsupervised_loss(model, unlab, cfg, kIdentityWeak, nullptr, nullptr, {33, 0});
  LossResult combined = total_loss(s, {u.loss, u.grads}, 0.0);
  EXPECT_EQ(combined.loss, s.loss);
  EXPECT_TRUE(grads_equal(combined.grads, s.grads));
}

TEST(TotalLoss, GradientLinearity) {
  GradSet gs, gu;
  gs.tensors.push_back(Tensor::vec({1.0, -2.0, 0.5}));
  gu.tensors.push_back(Tensor::vec({0.25, 4.0, -1.0}));
  LossResult s{0.7, gs}, u{0.2, gu};
  LossResult c = total_loss(s, u, 2.5);
  EXPECT_DOUBLE_EQ(c.loss, 0.7 + 2.5 * 0.2);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_DOUBLE_EQ(c.grads.tensors[0][j],
                     gs.tensors[0][j] + 2.5 * gu.tensors[0][j]);
}

// ---------------------------------------------------------------------------
// baselines: pi-model and thresholded self-training
// ---------------------------------------------------------------------------

TEST(PiModel, DeterministicModelIdentityAugGivesZero) {
  Classifier model = constant_model({0.4, 0.6}, 4);
  UnlabeledBatch batch;
  batch.images = {flat_image(4, 128), flat_image(4, 17)};
  LossResult r = pi_model_loss(model, batch, kIdentityWeak, {41, 0});
  EXPECT_DOUBLE_EQ(r.loss, 0.0);
  for (const auto& t : r.grads.tensors)
    for (double v : t.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(PiModel, OppositeOneHotBranchesScoreTwoPerExample) {
  // input +1 -> nearly [1, 0]; input -1 -> nearly [0, 1]; flips swap them
  Classifier model = make_classifier(1, 2, 1, {LayerSpec::dense(2)});
  auto& dense = std::get<DenseLayer>(model.layers[0]);
  dense.weights.at2(0, 0) = 20.0;
  dense.weights.at2(1, 1) = 20.0;

  // probe a plan whose two flip coins differ for example 0
  for (std::uint64_t step = 0; step < 64; ++step) {
    RngPlan plan{42, step};
    RngStream a = plan.stream(StreamPurpose::kWeakUnlabeled, 0);
    RngStream b = plan.stream(StreamPurpose::kWeakUnlabeled, 1);
    if (a.next_bool() == b.next_bool()) continue;
    UnlabeledBatch batch;
    ImageU8 img(1, 2, 1);
    img.pixels = {255, 0};
    batch.images = {img};
    WeakAugConfig flip_only{true, 0.0};
    LossResult r = pi_model_loss(model, batch, flip_only, plan);
    EXPECT_NEAR(r.loss, 2.0, 1e-6);
    return;
  }
  FAIL() << "no differing flip pair found in 64 plans";
}

TEST(PiModel, LossIsNonNegative) {
  RngStream rng(43, {StreamPurpose::kScratch, 0, 8});
  Classifier model = make_default_classifier(8, 8, 1, 3);
  init_params(model, 44);
  UnlabeledBatch batch;
  for (int i = 0; i < 8; ++i)
    batch.images.push_back(testutil::random_image(rng, 8, 8, 1));
  for (std::uint64_t step = 0; step < 5; ++step) {
    LossResult r = pi_model_loss(model, batch, {true, 0.125}, {45, step});
    EXPECT_GE(r.loss, 0.0);
  }
}

TEST(PseudoLabelingLoss, AllBelowThresholdGivesZero) {
  Classifier model = make_default_classifier(8, 8, 1, 10);  // uniform
  UnlabeledBatch batch;
  batch.images.assign(3, ImageU8(8, 8, 1, 60));
  LossResult r = pseudo_labeling_loss(model, batch, 0.95);
  EXPECT_DOUBLE_EQ(r.loss, 0.0);
}

TEST(PseudoLabelingLoss, RetainedExampleWorkedValue) {
  Classifier model = constant_model({0.9, 0.1}, 4);
  UnlabeledBatch batch;
  batch.images = {flat_image(4, 80)};
  LossResult r = pseudo_labeling_loss(model, batch, 0.5);
  EXPECT_NEAR(r.loss, 0.10536051565782628, 1e-9);  // -ln 0.9
}

// ---------------------------------------------------------------------------
// input mixup
// ---------------------------------------------------------------------------

TEST(Mixup, FullLambdaKeepsOriginals) {
  RngStream rng(51, {StreamPurpose::kScratch, 0, 9});
  std::vector<ImageU8> images = {testutil::random_image(rng, 6, 6, 1),
                                 testutil::random_image(rng, 6, 6, 1),
                                 testutil::random_image(rng, 6, 6, 1)};
  auto out = mixup_with_lambda(images, 1.0, {2, 0, 1});
  for (std::size_t i = 0; i < images.size(); ++i) EXPECT_EQ(out[i], images[i]);
}

TEST(Mixup, HalfLambdaOnBlackAndWhiteGivesGray) {
  std::vector<ImageU8> images = {ImageU8(4, 4, 1, 0), ImageU8(4, 4, 1, 255)};
  auto out = mixup_with_lambda(images, 0.5, {1, 0});
  for (auto p : out[0].pixels) EXPECT_EQ(p, 128);  // 127.5 rounds away from zero
  for (auto p : out[1].pixels) EXPECT_EQ(p, 128);
}

TEST(Mixup, OutputWithinSourceEnvelope) {
  RngStream seed(52, {StreamPurpose::kScratch, 0, 10});
  std::vector<ImageU8> images;
  for (int i = 0; i < 10; ++i)
    images.push_back(testutil::random_image(seed, 5, 5, 1));
  for (std::uint64_t k = 0; k < 50; ++k) {
    RngStream rng(53, {StreamPurpose::kMixUp, k, 0});
    RngStream replay(53, {StreamPurpose::kMixUp, k, 0});
    const double lambda = replay.next_beta_symmetric(9.0);
    const auto perm = replay.permutation(images.size());
    auto out = mixup_inputs(images, 9.0, rng);
    EXPECT_GT(lambda, 0.0);
    EXPECT_LT(lambda, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i)
      for (std::size_t j = 0; j < out[i].size(); ++j) {
        const auto lo = std::min(images[i].pixels[j], images[perm[i]].pixels[j]);
        const auto hi = std::max(images[i].pixels[j], images[perm[i]].pixels[j]);
        EXPECT_GE(out[i].pixels[j], lo);
        EXPECT_LE(out[i].pixels[j], hi);
      }
  }
}

TEST(Mixup, BetaSamplerConcentratesNearHalf) {
  RngStream rng(54, {StreamPurpose::kScratch, 0, 11});
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.next_beta_symmetric(9.0);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(var, 0.25 / 19.0, 0.002);  // Beta(9,9) variance = 1/76
}
