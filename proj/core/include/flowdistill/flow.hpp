#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "flowdistill/nn.hpp"
#include "flowdistill/rng.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill::flow {

/// Finite-support toy distribution (uniform over the listed points).
class ToyDataset {
 public:
  ToyDataset(int dim, std::vector<Vector> support);
  /// 1-D dataset from scalar support points.
  static ToyDataset scalar(std::vector<double> points);

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] const std::vector<Vector>& support() const noexcept { return support_; }
  /// d x |support| matrix.
  [[nodiscard]] Matrix support_matrix() const;
  /// `count` columns cycling through the support in order.
  [[nodiscard]] Matrix repeat(Eigen::Index count) const;
  /// `count` i.i.d. uniform draws from the support.
  [[nodiscard]] Matrix sample(Eigen::Index count, Rng& rng) const;

 private:
  int dim_;
  std::vector<Vector> support_;
};

/// Uniform grid t_j = j / n, stored from t_0 = 0 up to t_n = 1.
class TimeGrid {
 public:
  explicit TimeGrid(int steps);

  [[nodiscard]] int steps() const noexcept { return steps_; }
  [[nodiscard]] double time(int j) const;
  /// Grid index of `t` if it is exactly a grid time.
  [[nodiscard]] std::optional<int> index_of(double t) const noexcept;

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  int steps_;
};

Vector interpolate(const Vector& x0, const Vector& x1, double t);
/// Column-wise x_t = (1 - t) x0 + t x1.
Matrix interpolate(const Matrix& x0, const Matrix& x1, const Vector& t);

struct FlowBatch {
  Matrix x0;  // data
  Matrix x1;  // noise
  Vector t;
};

/// Mean over batch and dimensions of (v(x_t, t) - (x1 - x0))^2.
/// Adds d loss / d params into `grads` when non-null.
double fm_loss(const nn::VelocityModel& model, const FlowBatch& batch, nn::ParamSet* grads = nullptr);

struct TeacherTrainConfig {
  nn::Architecture arch;
  int iterations = 10000;
  int batch_size = 2048;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct LossRecord {
  int iteration;
  double loss;
};

struct TeacherTrainResult {
  nn::VelocityModel model;
  std::vector<LossRecord> history;
};

/// Flow-matching training: x0 cycles through the data, x1 ~ N(0, I), t ~ U[0, 1].
TeacherTrainResult train_teacher(const ToyDataset& data, const TeacherTrainConfig& config);

/// x + (t_to - t_from) v(x, t_from), column-wise.
Matrix euler_step(const VelocityField& field, const Matrix& x, double t_from, double t_to);

/// Euler integration from grid index `from` down to `to` (from >= to); returns the final state.
Matrix integrate(const VelocityField& field, const Matrix& x, const TimeGrid& grid, int from, int to);

/// Full Euler path from t_n = 1 down to t_0 = 0.
/// Result[j] is the d x B state at t_j; exactly n field evaluations.
std::vector<Matrix> denoise(const VelocityField& field, const Matrix& x1, const TimeGrid& grid);

/// Single-sample path: d x (n+1) matrix, column j at t_j.
Matrix denoise_path(const VelocityField& field, const Vector& x1, const TimeGrid& grid);

}  // namespace flowdistill::flow
