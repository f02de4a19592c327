#include <gtest/gtest.h>

#include <filesystem>

#include "fixfit/sweep.hpp"

using namespace fixfit;
using namespace fixfit::sweep;
namespace fs = std::filesystem;

namespace {

SweepResult make(std::vector<std::size_t> ks, std::vector<std::vector<double>> errs) {
  SweepResult sr;
  sr.k_values = std::move(ks);
  sr.errors = std::move(errs);
  return sr;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform01(rng);
  return m;
}

}  // namespace

TEST(Welch, IdenticalSamples) { EXPECT_EQ(welch_t({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), 1.0); }

TEST(Welch, MatchesReferenceValues) {
  // Reference p-values from an independent two-sided unequal-variance t-test.
  EXPECT_NEAR(welch_t({0, 1e-3, -1e-3, 2e-3}, {1, 1 + 1e-3, 1 - 2e-3, 1 + 1e-3}), 6.87961249489988e-17, 1e-22);
  EXPECT_NEAR(welch_t({1.2, 2.3, 1.9, 2.8, 2.2}, {2.9, 3.1, 2.4, 3.8, 3.3, 2.7}), 0.02078798640418627, 1e-12);
  EXPECT_NEAR(welch_t({0.00012, 0.00015, 0.00011}, {5e-5, 7e-5, 4e-5, 6e-5}), 0.011914192503628348, 1e-12);
}

TEST(Welch, SeparatedSamplesHaveTinyP) {
  EXPECT_LT(welch_t({0, 1e-3, -1e-3, 2e-3}, {1, 1 + 1e-3, 1 - 2e-3, 1 + 1e-3}), 1e-4);
}

TEST(Welch, Symmetric) {
  const std::vector<double> a{1.2, 2.3, 1.9, 2.8}, b{2.9, 3.1, 2.4, 3.8, 3.3};
  EXPECT_EQ(welch_t(a, b), welch_t(b, a));
}

TEST(Welch, NeedsTwoValues) { EXPECT_THROW(welch_t({1.0}, {1.0, 2.0}), DataError); }

TEST(SelectK, SaturationAtTwo) {
  auto sr = make({1, 2, 3, 4}, {{1.0, 1.1, 0.9, 1.05}, {0.1, 0.11, 0.09, 0.1}, {0.1, 0.09, 0.105, 0.1}, {0.098, 0.1, 0.1, 0.102}});
  EXPECT_EQ(select_k(sr, 0.05), 2u);
  EXPECT_GE(sr.p_values[1], 0.05);
}

TEST(SelectK, IndistinguishableGivesSmallestK) {
  auto sr = make({2, 3, 5}, {{1.0, 1.2, 0.9}, {1.1, 0.95, 1.05}, {1.0, 1.0, 1.1}});
  EXPECT_EQ(select_k(sr), 2u);
}

TEST(SelectK, MinimumAtFour) {
  auto sr = make({1, 2, 3, 4, 5},
                 {{5.0, 5.1, 4.9}, {3.0, 3.1, 2.9}, {2.0, 2.05, 1.95}, {1.0, 1.01, 0.99}, {1.02, 0.99, 1.0}});
  EXPECT_EQ(select_k(sr), 4u);
}

TEST(SelectK, SingleK) {
  auto sr = make({3}, {{0.5, 0.6}});
  EXPECT_EQ(select_k(sr), 3u);
}

TEST(SelectK, SelectedIsNotSignificantlyWorse) {
  auto sr = make({1, 2, 3}, {{0.4, 0.5, 0.45}, {0.2, 0.25, 0.3}, {0.19, 0.2, 0.21}});
  const auto k = select_k(sr, 0.05);
  const auto i = static_cast<std::size_t>(std::find(sr.k_values.begin(), sr.k_values.end(), k) - sr.k_values.begin());
  EXPECT_GE(sr.p_values[i], 0.05);
}

TEST(SelectK, RaisingAlphaNeverLowersKStar) {
  // k* is the smallest k with p >= alpha; a larger alpha can only shrink that set.
  auto sr = make({1, 2, 3, 4}, {{0.4, 0.5, 0.45}, {0.2, 0.25, 0.3}, {0.19, 0.2, 0.22}, {0.18, 0.2, 0.2}});
  std::size_t prev = 0;
  for (double alpha : {1e-6, 1e-4, 1e-3, 0.01, 0.05, 0.2, 0.5, 0.9, 0.999}) {
    const auto k = select_k(sr, alpha);
    EXPECT_GE(k, prev) << "alpha " << alpha;
    prev = k;
  }
}

TEST(RunSweep, CountsSeedsAndDeterminism) {
  const auto X = random_matrix(60, 3, 1);
  Eigen::MatrixXd Y(60, 5);
  for (Eigen::Index j = 0; j < 5; ++j) Y.col(j) = (X.col(0) * (j + 1.0) + X.col(1)).array().sin();
  SweepConfig cfg;
  cfg.k_values = {1, 2};
  cfg.replicates = 3;
  cfg.train.max_epochs = 15;
  cfg.train.patience = 5;
  cfg.train.batch_size = 16;
  cfg.master_seed = 7;
  auto spec = [](std::size_t k) { return nn::bottleneck_spec(3, {4}, k, {6}, 5, nn::Activation::tanh); };
  const auto a = run_sweep(X.topRows(50), Y.topRows(50), X.bottomRows(10), Y.bottomRows(10), spec, cfg);
  EXPECT_EQ(a.replicates.size(), 6u);
  EXPECT_EQ(a.errors[0].size(), 3u);
  EXPECT_NE(a.replicates[0].seed, a.replicates[1].seed);
  EXPECT_NE(a.errors[0][0], a.errors[0][1]);
  cfg.jobs = 3;
  const auto b = run_sweep(X.topRows(50), Y.topRows(50), X.bottomRows(10), Y.bottomRows(10), spec, cfg);
  EXPECT_EQ(a.errors, b.errors);
  EXPECT_EQ(a.selected_k, b.selected_k);
}

TEST(RunSweep, ResumesFromWeightFiles) {
  const auto X = random_matrix(40, 2, 3);
  const auto Y = random_matrix(40, 4, 4);
  SweepConfig cfg;
  cfg.k_values = {1};
  cfg.replicates = 2;
  cfg.train.max_epochs = 10;
  cfg.train.patience = 3;
  auto spec = [](std::size_t k) { return nn::bottleneck_spec(2, {3}, k, {3}, 4, nn::Activation::tanh); };
  const auto dir = fs::temp_directory_path() / "fixfit_test_resume";
  fs::remove_all(dir);
  const auto a = run_sweep(X.topRows(30), Y.topRows(30), X.bottomRows(10), Y.bottomRows(10), spec, cfg, dir);
  ASSERT_TRUE(fs::exists(dir / "k1_r1.weights.json"));
  // Drop one replicate as if the run had been interrupted; the other is reused.
  fs::remove(dir / "k1_r1.weights.json");
  const auto before = fs::last_write_time(dir / "k1_r0.weights.json");
  const auto b = run_sweep(X.topRows(30), Y.topRows(30), X.bottomRows(10), Y.bottomRows(10), spec, cfg, dir);
  EXPECT_EQ(fs::last_write_time(dir / "k1_r0.weights.json"), before);
  EXPECT_TRUE(fs::exists(dir / "k1_r1.weights.json"));
  EXPECT_EQ(a.errors, b.errors);
  fs::remove_all(dir);
}

TEST(RunSweep, RejectsBadK) {
  SweepConfig cfg;
  cfg.k_values = {4};
  const auto X = random_matrix(20, 2, 1);
  const auto Y = random_matrix(20, 4, 2);
  EXPECT_THROW(run_sweep(X, Y, X, Y, [](std::size_t k) { return nn::bottleneck_spec(2, {5}, k, {5}, 4, nn::Activation::tanh); }, cfg),
               ConfigError);
}
