#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowdistill/distill.hpp"
#include "flowdistill/flow.hpp"
#include "flowdistill/trajstore.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill::analysis {

struct MismatchReport {
  double degree = 0.0;
  std::vector<double> nearest;  // per point of p_d, distance to the nearest point of p
};

/// Sum over points of `p_d` of the distance to the nearest point of `p`.
double mismatch_degree(const flow::ToyDataset& p_d, const flow::ToyDataset& p);
MismatchReport mismatch_report(const flow::ToyDataset& p_d, const flow::ToyDataset& p);

/// Copy of `p` whose point farthest from the support centroid is moved outward by `amount`.
/// For the sweep this makes mismatch_degree(shift_support(p, M), p) == M.
flow::ToyDataset shift_support(const flow::ToyDataset& p, double amount);

enum class UselessMode {
  Trajectory,  // farther than epsilon from every stored state at the same grid time
  Endpoint,    // teacher-denoised to t = 0, lands farther than epsilon from the training support
};

struct UselessConfig {
  UselessMode mode = UselessMode::Trajectory;
  int t_samples = 4096;
  double epsilon = 0.1;
  std::uint64_t seed = 0;

  static double default_epsilon(UselessMode mode) noexcept { return mode == UselessMode::Trajectory ? 0.1 : 0.25; }
};

struct UselessSample {
  Matrix x;               // d x t_samples forward-diffused points
  std::vector<int> grid;  // grid index of each column
};

/// Forward-diffused draws x_t = (1 - t) x0 + t x1, x0 ~ p_d, x1 ~ N(0, I), t uniform on grid times.
UselessSample draw_forward_points(const flow::ToyDataset& p_d, const flow::TimeGrid& grid, int count,
                                  std::uint64_t seed);

/// Per-point uselessness of `points` (see UselessMode). `support` is the teacher's
/// training support and is only consulted in endpoint mode.
std::vector<bool> classify_useless(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                                   const flow::ToyDataset& support, const UselessSample& points,
                                   UselessMode mode, double epsilon);

/// Fraction of forward-diffused points from p_d that are useless.
double useless_frequency(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                         const flow::ToyDataset& p_d, const flow::ToyDataset& support,
                         const UselessConfig& config);

struct KdConfig {
  int windows = 2;
  int n = 50;
  int pool_size = 4096;  // start points per window
  int iterations = 2000;
  int batch_size = 256;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct KdResult {
  nn::VelocityModel student;
  std::vector<flow::LossRecord> history;
};

/// Window-based distillation from forward-diffused points of p_d: the student,
/// initialized from the teacher, regresses the straight-line velocity from each
/// window start point to the teacher's multi-step denoised state at the window end.
KdResult kd_baseline_distill(const nn::VelocityModel& teacher, const flow::ToyDataset& p_d, const KdConfig& config);

/// Empirical 1-Wasserstein distance between two 1-D sample lists.
double w1_distance(std::vector<double> a, std::vector<double> b);
double w1_distance(const Matrix& a, const Matrix& b);

/// Mean over columns of the distance to the nearest support point.
double endpoint_error(const Matrix& samples, const flow::ToyDataset& support);

/// `count` samples cycling through the support; the reference sample of p for W1.
Matrix support_reference(const flow::ToyDataset& support, Eigen::Index count);

struct MetricsRecord {
  std::string label;
  double w1 = 0.0;
  double endpoint_error = 0.0;
  double useless_frequency = 0.0;
  std::uint64_t seed = 0;
};

struct SweepConfig {
  std::vector<double> mismatch = {0.0, 1.0, 2.0, 4.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  UselessConfig useless;
  KdConfig kd;
  distill::DistillConfig distill;
  int eval_samples = 4096;
};

struct SweepRow {
  double mismatch = 0.0;
  std::uint64_t seed = 0;
  double useless_frequency = 0.0;
  double kd_w1 = 0.0;
  double accvideo_w1 = 0.0;
  double endpoint_error = 0.0;  // KD student samples vs the training support
};

/// Noise used to compare a student with the teacher for one seed.
Matrix evaluation_noise(int dim, int count, std::uint64_t seed);

/// W1 between the m-step student samples and the teacher's n-step samples on shared noise.
double student_teacher_w1(const nn::VelocityModel& student, const nn::VelocityModel& teacher, int n, int m,
                          const Matrix& noise);

/// One row per (M, seed). `p` is the teacher's training support. The store-based
/// distillation does not depend on p_d, so it runs once per seed and is shared across M.
std::vector<SweepRow> run_sweep(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                                const flow::ToyDataset& p, const SweepConfig& config);

/// M,seed,useless_frequency,kd_W1,accvideo_W1,endpoint_error
std::string sweep_csv(const std::vector<SweepRow>& rows);

double median(std::vector<double> values);

}  // namespace flowdistill::analysis
