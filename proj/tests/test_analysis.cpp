#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "flowdistill/analysis.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace flowdistill;
using namespace flowdistill::analysis;
using testing_support::quick_teacher;

namespace {

const flow::ToyDataset& two_points() {
  static const auto p = flow::ToyDataset::scalar({-3.0, 3.0});
  return p;
}

const trajstore::TrajectoryStore& quick_store() {
  static const auto store = trajstore::generate_store(quick_teacher(), 512, flow::TimeGrid(50), 41);
  return store;
}

// W1 between empirical measures as the integral of |F_a - F_b| over the merged support.
double w1_by_cdf(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> xs(a);
  xs.insert(xs.end(), b.begin(), b.end());
  std::sort(xs.begin(), xs.end());
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), xs[i]) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), xs[i]) - b.begin()) / b.size();
    sum += std::abs(fa - fb) * (xs[i + 1] - xs[i]);
  }
  return sum;
}

}  // namespace

TEST(Mismatch, IdenticalSupportsHaveZeroDegree) {
  EXPECT_EQ(mismatch_degree(two_points(), two_points()), 0.0);
}

TEST(Mismatch, ShiftedPointContributesItsDistance) {
  const auto p_d = flow::ToyDataset::scalar({-3.0, 7.0});
  const auto r = mismatch_report(p_d, two_points());
  EXPECT_EQ(r.degree, 4.0);
  EXPECT_EQ(r.nearest, (std::vector<double>{0.0, 4.0}));
}

TEST(Mismatch, MatchesDoubleLoopInTwoDimensions) {
  Rng rng(6);
  std::vector<Vector> a, b;
  for (int i = 0; i < 9; ++i) a.push_back(standard_normal(2, 1, rng).col(0));
  for (int i = 0; i < 13; ++i) b.push_back(standard_normal(2, 1, rng).col(0));
  const flow::ToyDataset p_d(2, a), p(2, b);
  double expected = 0.0;
  for (const auto& x : a) {
    double best = 1e300;
    for (const auto& y : b) best = std::min(best, (x - y).norm());
    expected += best;
  }
  EXPECT_NEAR(mismatch_degree(p_d, p), expected, 1e-12);
}

TEST(Mismatch, DimensionMismatchIsUsageError) {
  const flow::ToyDataset p2(2, {Vector::Zero(2)});
  EXPECT_THROW((void)mismatch_degree(p2, two_points()), UsageError);
}

TEST(ShiftSupport, DegreeEqualsShift) {
  for (const double m : {0.0, 1.0, 2.0, 4.0}) {
    EXPECT_NEAR(mismatch_degree(shift_support(two_points(), m), two_points()), m, 1e-12) << "M " << m;
  }
  const auto shifted = shift_support(two_points(), 2.0);
  EXPECT_EQ(shifted.support()[0](0), -5.0);
  EXPECT_EQ(shifted.support()[1](0), 3.0);
}

TEST(W1, EqualSizeExamples) {
  EXPECT_EQ(w1_distance(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 2.0}), 1.0);
  EXPECT_EQ(w1_distance(std::vector<double>{3.0, -3.0}, std::vector<double>{-3.0, 3.0}), 0.0);
  EXPECT_THROW((void)w1_distance(std::vector<double>{}, std::vector<double>{1.0}), UsageError);
}

TEST(W1, MatchesCdfIntegral) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (const auto& [na, nb] : {std::pair{7, 7}, std::pair{5, 12}, std::pair{100, 33}, std::pair{1, 9}}) {
    std::vector<double> a(static_cast<std::size_t>(na)), b(static_cast<std::size_t>(nb));
    for (auto& v : a) v = n01(rng);
    for (auto& v : b) v = 0.5 + 2.0 * n01(rng);
    EXPECT_NEAR(w1_distance(a, b), w1_by_cdf(a, b), 1e-9) << na << " vs " << nb;
  }
}

TEST(W1, MatrixOverloadRequiresOneRow) {
  EXPECT_THROW((void)w1_distance(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), UsageError);
  EXPECT_EQ(w1_distance(Matrix::Constant(1, 3, 1.0), Matrix::Constant(1, 4, 3.0)), 2.0);
}

TEST(EndpointError, DistanceToNearestSupportPoint) {
  Matrix s(1, 4);
  s << -3.0, 3.5, 0.0, 10.0;
  EXPECT_NEAR(endpoint_error(s, two_points()), (0.0 + 0.5 + 3.0 + 7.0) / 4.0, 1e-15);
  const Matrix ref = support_reference(two_points(), 5);
  EXPECT_EQ(endpoint_error(ref, two_points()), 0.0);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
}

TEST(ForwardPoints, CleanAndPureNoiseEnds) {
  const auto pts = draw_forward_points(two_points(), flow::TimeGrid(50), 2000, 5);
  int clean = 0;
  for (std::size_t c = 0; c < pts.grid.size(); ++c) {
    ASSERT_GE(pts.grid[c], 0);
    ASSERT_LE(pts.grid[c], 50);
    if (pts.grid[c] == 0) {
      ++clean;
      EXPECT_EQ(std::abs(pts.x(0, static_cast<Eigen::Index>(c))), 3.0);
    }
  }
  EXPECT_GT(clean, 10);
}

TEST(Useless, TrajectoryModeMatchesBruteForce) {
  const auto p_d = shift_support(two_points(), 2.0);
  const auto pts = draw_forward_points(p_d, quick_store().grid(), 300, 7);
  const auto flags = classify_useless(quick_teacher(), quick_store(), two_points(), pts, UselessMode::Trajectory, 0.1);
  for (std::size_t c = 0; c < flags.size(); ++c) {
    double best = 1e300;
    for (const auto& t : quick_store().trajectories()) {
      best = std::min(best, (t.state(pts.grid[c]) - pts.x.col(static_cast<Eigen::Index>(c))).norm());
    }
    EXPECT_EQ(flags[c], best > 0.1) << "point " << c;
  }
}

TEST(Useless, EndpointModeMatchesBruteForce) {
  const auto p_d = shift_support(two_points(), 4.0);
  const auto pts = draw_forward_points(p_d, quick_store().grid(), 120, 8);
  const auto flags = classify_useless(quick_teacher(), quick_store(), two_points(), pts, UselessMode::Endpoint, 0.25);
  const flow::TimeGrid grid(50);
  for (std::size_t c = 0; c < flags.size(); ++c) {
    const Matrix x0 = flow::integrate(quick_teacher(), pts.x.col(static_cast<Eigen::Index>(c)), grid, pts.grid[c], 0);
    const double dist = std::min(std::abs(x0(0, 0) - 3.0), std::abs(x0(0, 0) + 3.0));
    EXPECT_EQ(flags[c], dist > 0.25) << "point " << c;
  }
}

TEST(Useless, DenseStoreWithMatchedDataIsRarelyUseless) {
  // With p_d equal to the training support the forward draws lie on teacher paths
  // up to model error, so only a small fraction can fall off the store.
  UselessConfig cfg;
  cfg.t_samples = 2000;
  cfg.seed = 3;
  const double matched = useless_frequency(quick_teacher(), quick_store(), two_points(), two_points(), cfg);
  EXPECT_LT(matched, 0.05);
  const double shifted =
      useless_frequency(quick_teacher(), quick_store(), shift_support(two_points(), 4.0), two_points(), cfg);
  EXPECT_GT(shifted, matched + 0.1);
}

TEST(Useless, StoreSizeEstimateAgreesWithDenseStore) {
  const auto dense = trajstore::generate_store(quick_teacher(), 5120, flow::TimeGrid(50), 43);
  for (const double shift : {0.0, 2.0}) {
    const auto p_d = shift_support(two_points(), shift);
    UselessConfig cfg;
    cfg.t_samples = 2000;
    cfg.seed = 11;
    const double sparse = useless_frequency(quick_teacher(), quick_store(), p_d, two_points(), cfg);
    const double oracle = useless_frequency(quick_teacher(), dense, p_d, two_points(), cfg);
    EXPECT_NEAR(sparse, oracle, 0.05) << "M " << shift;
  }
}

TEST(Useless, MoreTrajectoriesNeverIncreaseFrequency) {
  std::vector<trajstore::Trajectory> half(quick_store().trajectories().begin(),
                                          quick_store().trajectories().begin() + 128);
  auto meta = quick_store().metadata();
  meta.count = half.size();
  const trajstore::TrajectoryStore small(meta, half);
  const auto pts = draw_forward_points(shift_support(two_points(), 1.0), quick_store().grid(), 1000, 2);
  const auto few = classify_useless(quick_teacher(), small, two_points(), pts, UselessMode::Trajectory, 0.1);
  const auto many = classify_useless(quick_teacher(), quick_store(), two_points(), pts, UselessMode::Trajectory, 0.1);
  for (std::size_t c = 0; c < few.size(); ++c) EXPECT_TRUE(few[c] || !many[c]) << "point " << c;
}

TEST(Useless, FarPointIsUselessInBothModes) {
  UselessSample far;
  far.x = Matrix::Constant(1, 3, 1e3);
  far.grid = {0, 25, 50};
  for (const auto mode : {UselessMode::Trajectory, UselessMode::Endpoint}) {
    const auto flags = classify_useless(quick_teacher(), quick_store(), two_points(), far, mode,
                                        UselessConfig::default_epsilon(mode));
    for (const bool f : flags) EXPECT_TRUE(f);
  }
}

TEST(Useless, StoredStateIsNeverUseless) {
  UselessSample on;
  on.x = Matrix(1, 3);
  on.grid = {0, 17, 50};
  for (int i = 0; i < 3; ++i) on.x(0, i) = quick_store()[5].state(on.grid[static_cast<std::size_t>(i)])(0);
  const auto flags = classify_useless(quick_teacher(), quick_store(), two_points(), on, UselessMode::Trajectory, 0.1);
  for (const bool f : flags) EXPECT_FALSE(f);
}

TEST(Useless, RejectsNonPositiveEpsilon) {
  UselessConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_THROW((void)useless_frequency(quick_teacher(), quick_store(), two_points(), two_points(), cfg), UsageError);
}

TEST(KdBaseline, Validation) {
  KdConfig cfg;
  cfg.windows = 3;
  EXPECT_THROW((void)kd_baseline_distill(quick_teacher(), two_points(), cfg), ConfigError);
}

TEST(KdBaseline, ZeroIterationsReturnsTeacherCopy) {
  KdConfig cfg;
  cfg.iterations = 0;
  cfg.pool_size = 16;
  EXPECT_TRUE(kd_baseline_distill(quick_teacher(), two_points(), cfg).student.params() == quick_teacher().params());
}

TEST(KdBaseline, DeterministicAndRecordsHistory) {
  KdConfig cfg;
  cfg.iterations = 20;
  cfg.pool_size = 128;
  cfg.batch_size = 32;
  cfg.seed = 4;
  const auto a = kd_baseline_distill(quick_teacher(), two_points(), cfg);
  const auto b = kd_baseline_distill(quick_teacher(), two_points(), cfg);
  EXPECT_TRUE(a.student.params() == b.student.params());
  EXPECT_EQ(a.history.size(), 20u);
  for (const auto& r : a.history) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(StudentTeacherW1, TeacherAgainstItselfIsZero) {
  const Matrix noise = evaluation_noise(1, 64, 2);
  EXPECT_EQ(student_teacher_w1(quick_teacher(), quick_teacher(), 50, 50, noise), 0.0);
  EXPECT_GT(student_teacher_w1(quick_teacher(), quick_teacher(), 50, 1, noise), 0.0);
}

TEST(Sweep, RowsAndCsv) {
  SweepConfig cfg;
  cfg.mismatch = {0.0, 2.0};
  cfg.seeds = {1, 2};
  cfg.useless.t_samples = 64;
  cfg.kd.iterations = 3;
  cfg.kd.pool_size = 32;
  cfg.kd.batch_size = 16;
  cfg.distill.rounds = 1;
  cfg.distill.traj_batch = 16;
  cfg.distill.adv_batch = 8;
  cfg.distill.queue_capacity = 8;
  cfg.eval_samples = 64;
  const auto rows = run_sweep(quick_teacher(), quick_store(), two_points(), cfg);
  ASSERT_EQ(rows.size(), 4u);
  std::map<std::uint64_t, double> accvideo;
  for (const auto& r : rows) {
    EXPECT_GE(r.useless_frequency, 0.0);
    EXPECT_LE(r.useless_frequency, 1.0);
    // The store-based student does not see p_d, so its score is shared across M.
    if (accvideo.count(r.seed)) EXPECT_EQ(accvideo[r.seed], r.accvideo_w1);
    accvideo[r.seed] = r.accvideo_w1;
  }
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "M,seed,useless_frequency,kd_W1,accvideo_W1,endpoint_error");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
