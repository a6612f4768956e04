#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "grad_check.hpp"
#include "lir/binary_io.hpp"
#include "lir/error.hpp"
#include "lir/nn.hpp"
#include "lir/training.hpp"
#include "lir/vae.hpp"

namespace lir {
namespace {

TEST(Forward, ZeroNetGivesZeros) {
  const auto net = LayeredNet::zeros({2, 4, 3, 5});
  const auto t = net.forward(std::vector{1.5, -2.0});
  ASSERT_EQ(t.hidden.size(), 2u);
  EXPECT_EQ(t.hidden[0], Vector::Zero(4));
  EXPECT_EQ(t.hidden[1], Vector::Zero(3));
  EXPECT_EQ(t.logits, Vector::Zero(5));
}

TEST(Forward, ReluClipsNegative) {
  auto net = LayeredNet::zeros({1, 1, 1});
  net.layers()[0].weight(0, 0) = 1.0;
  net.layers()[1].weight(0, 0) = 1.0;
  const auto t = net.forward(std::vector{-1.0});
  EXPECT_EQ(t.hidden[0](0), 0.0);
  EXPECT_EQ(t.logits(0), 0.0);
  EXPECT_EQ(net.forward(std::vector{2.0}).logits(0), 2.0);
}

TEST(Forward, DeterministicAndShapedLikeDims) {
  const LayeredNet a({3, 7, 5, 4}, 17), b({3, 7, 5, 4}, 17);
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_EQ(a.parameter_count(), (3u + 1) * 7 + (7u + 1) * 5 + (5u + 1) * 4);
  const std::vector<double> x{0.3, -1.2, 2.0};
  const auto t1 = a.forward(x), t2 = a.forward(x);
  EXPECT_EQ(t1.logits, t2.logits);
  ASSERT_EQ(t1.hidden.size(), 2u);
  EXPECT_EQ(t1.hidden[0].size(), 7);
  EXPECT_EQ(t1.hidden[1].size(), 5);
  EXPECT_EQ(t1.logits.size(), 4);
  for (const auto& h : t1.hidden) EXPECT_GE(h.minCoeff(), 0.0);
  EXPECT_THROW(a.forward(std::vector{1.0, 2.0}), DomainError);
}

TEST(Forward, BatchMatchesSingleSample) {
  const LayeredNet net({2, 16, 16, 3}, 4);
  const auto b = testing::random_classifier_batch(2, 3, 5, 1);
  const auto trace = net.forward_batch(b.id_x);
  for (int j = 0; j < 5; ++j) {
    const Vector col = b.id_x.col(j);
    const auto t = net.forward(std::span<const double>(col.data(), 2));
    EXPECT_NEAR((t.logits - trace.logits().col(j)).norm(), 0.0, 1e-12);
  }
}

TEST(Init, UniformWithinFanBound) {
  const LayeredNet net({10, 30, 3}, 0);
  for (const auto& l : net.layers()) {
    const double s = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), s);
    EXPECT_EQ(l.bias, Vector::Zero(l.bias.size()));
  }
}

TEST(Grad, CrossEntropyAtUniformLogits) {
  Matrix logits = Matrix::Zero(4, 1);
  Matrix d;
  const double loss = cross_entropy(logits, std::vector{2}, d);
  EXPECT_NEAR(loss, std::log(4.0), 1e-15);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(d(i, 0), 0.25 - (i == 2 ? 1.0 : 0.0), 1e-15);
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, CrossEntropy) {
  const auto r = testing::check_cross_entropy(static_cast<std::uint64_t>(GetParam()));
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst parameter " << r.worst_index;
}

TEST_P(GradientCheck, CrossEntropyPlusREboPaperMargins) {
  const auto r = testing::check_rebo_paper_margins(static_cast<std::uint64_t>(GetParam()));
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst parameter " << r.worst_index;
}

TEST_P(GradientCheck, CrossEntropyPlusREboCalibratedMargins) {
  const auto r = testing::check_rebo_calibrated_margins(static_cast<std::uint64_t>(GetParam()));
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst parameter " << r.worst_index;
}

TEST_P(GradientCheck, VaeElbo) {
  const auto r = testing::check_vae_elbo(static_cast<std::uint64_t>(GetParam()));
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst parameter " << r.worst_index;
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, GradientCheck, ::testing::Range(0, 10));

TEST(Grad, SlackMarginsWithoutCrossEntropyGiveZeroGradient) {
  const LayeredNet net({2, 16, 16, 3}, 3);
  const auto batch = testing::random_classifier_batch(2, 3, 8, 4);
  ClassifierLoss loss;
  loss.ce_weight = 0.0;
  loss.rebo = REboConfig{};
  loss.rebo->m_in = 1e3;   // every ID energy is below
  loss.rebo->m_out = -1e3;  // every OoD energy is above
  const auto r = grad(net, batch, loss);
  EXPECT_EQ(r.total, 0.0);
  for (double g : flatten(r.grad.layers)) EXPECT_EQ(g, 0.0);
}

TEST(Sgd, ZeroLearningRateKeepsParameters) {
  LayeredNet net({2, 5, 3}, 1);
  const auto before = net.flat_parameters();
  const auto batch = testing::random_classifier_batch(2, 3, 8, 2);
  std::vector<DenseLayer> velocity;
  sgd_step(net, grad(net, batch, {}).grad, 0.0, 0.9, velocity);
  EXPECT_EQ(net.flat_parameters(), before);
}

TEST(Sgd, StepReducesQuadratic) {
  // loss = 0.5 * |W|^2 + 0.5 * |b|^2, gradient = parameters.
  std::vector<DenseLayer> p{{Matrix::Constant(2, 2, 3.0), Vector::Constant(2, -1.0)}};
  auto loss = [&] { return 0.5 * (p[0].weight.squaredNorm() + p[0].bias.squaredNorm()); };
  const double before = loss();
  MomentumSgd opt(0.1, 0.9);
  opt.step(p, p);
  EXPECT_LT(loss(), before);
}

TEST(Sgd, DeterministicAcrossRuns) {
  auto run = [] {
    LayeredNet net({2, 8, 3}, 5);
    MomentumSgd opt(0.05, 0.9);
    for (int s = 0; s < 20; ++s) {
      const auto batch = testing::random_classifier_batch(2, 3, 8, static_cast<std::uint64_t>(s));
      opt.step(net.layers(), grad(net, batch, {}).grad.layers);
    }
    return net.flat_parameters();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "lir_nn_test";
  std::filesystem::create_directories(dir);
  const LayeredNet net({2, 16, 16, 3}, 9);
  save_net(net, dir / "net.lirn");
  const auto back = load_net(dir / "net.lirn");
  EXPECT_EQ(back.dims(), net.dims());
  EXPECT_EQ(back.flat_parameters(), net.flat_parameters());

  auto bytes = io::read_file(dir / "net.lirn");
  bytes[0] = 'X';
  io::save_bytes(bytes, dir / "bad.lirn");
  EXPECT_THROW(load_net(dir / "bad.lirn"), IoError);
  bytes[0] = 'L';
  bytes.resize(bytes.size() - 3);
  io::save_bytes(bytes, dir / "short.lirn");
  try {
    load_net(dir / "short.lirn");
    FAIL() << "truncated checkpoint loaded";
  } catch (const IoError& e) {
    EXPECT_EQ(e.code(), IoErrorCode::kTruncated);
  }
}

}  // namespace
}  // namespace lir
