#include "flowdistill/flow.hpp"

#include <cmath>
#include <string>

#include "flowdistill/optimizer.hpp"

namespace flowdistill::flow {

ToyDataset::ToyDataset(int dim, std::vector<Vector> support) : dim_(dim), support_(std::move(support)) {
  if (dim_ < 1) throw ConfigError("ToyDataset: dimension must be >= 1");
  if (support_.empty()) throw ConfigError("ToyDataset: support must be non-empty");
  for (const auto& p : support_) {
    if (p.size() != dim_) throw ConfigError("ToyDataset: support point has wrong dimension");
    if (!p.allFinite()) throw ConfigError("ToyDataset: support point is not finite");
  }
}

ToyDataset ToyDataset::scalar(std::vector<double> points) {
  std::vector<Vector> support;
  support.reserve(points.size());
  for (const double p : points) support.push_back(Vector::Constant(1, p));
  return ToyDataset(1, std::move(support));
}

Matrix ToyDataset::support_matrix() const {
  Matrix m(dim_, static_cast<Eigen::Index>(support_.size()));
  for (std::size_t i = 0; i < support_.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = support_[i];
  return m;
}

Matrix ToyDataset::repeat(Eigen::Index count) const {
  Matrix m(dim_, count);
  const auto n = static_cast<Eigen::Index>(support_.size());
  for (Eigen::Index c = 0; c < count; ++c) m.col(c) = support_[static_cast<std::size_t>(c % n)];
  return m;
}

Matrix ToyDataset::sample(Eigen::Index count, Rng& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, support_.size() - 1);
  Matrix m(dim_, count);
  for (Eigen::Index c = 0; c < count; ++c) m.col(c) = support_[pick(rng)];
  return m;
}

TimeGrid::TimeGrid(int steps) : steps_(steps) {
  if (steps_ < 1) throw ConfigError("TimeGrid: need at least one step");
}

double TimeGrid::time(int j) const {
  if (j < 0 || j > steps_) throw UsageError("TimeGrid: index out of range");
  return static_cast<double>(j) / static_cast<double>(steps_);
}

std::optional<int> TimeGrid::index_of(double t) const noexcept {
  if (!(t >= 0.0 && t <= 1.0)) return std::nullopt;
  const auto j = static_cast<int>(std::lround(t * steps_));
  if (static_cast<double>(j) / static_cast<double>(steps_) == t) return j;
  return std::nullopt;
}

Vector interpolate(const Vector& x0, const Vector& x1, double t) {
  if (x0.size() != x1.size()) throw UsageError("interpolate: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError("interpolate: t must lie in [0, 1]");
  return (1.0 - t) * x0 + t * x1;
}

Matrix interpolate(const Matrix& x0, const Matrix& x1, const Vector& t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols() || t.size() != x0.cols()) {
    throw UsageError("interpolate: dimension mismatch");
  }
  return x0 * (1.0 - t.array()).matrix().asDiagonal() + x1 * t.asDiagonal();
}

double fm_loss(const nn::VelocityModel& model, const FlowBatch& batch, nn::ParamSet* grads) {
  if (batch.x0.cols() == 0) throw UsageError("fm_loss: empty batch");
  if (batch.x0.rows() != model.dim()) throw UsageError("fm_loss: dimension mismatch");
  return nn::velocity_regression_loss(model, interpolate(batch.x0, batch.x1, batch.t), batch.t,
                                     batch.x1 - batch.x0, grads);
}

TeacherTrainResult train_teacher(const ToyDataset& data, const TeacherTrainConfig& config) {
  if (config.iterations < 1) throw ConfigError("train_teacher: iterations must be >= 1");
  if (config.batch_size < 1) throw ConfigError("train_teacher: batch_size must be >= 1");
  if (config.arch.dim != data.dim()) throw ConfigError("train_teacher: model and data dimensions differ");

  auto model = nn::build_velocity_model(config.arch, derive_seed(config.seed, "teacher.init"));
  auto opt = nn::make_adam(model.params(), nn::AdamConfig{.lr = config.lr});
  Rng rng(derive_seed(config.seed, "teacher.batches"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<LossRecord> history;
  history.reserve(static_cast<std::size_t>(config.iterations));
  nn::ParamSet grads = model.params().zeros_like();
  FlowBatch batch;
  batch.x0 = data.repeat(config.batch_size);
  batch.t.resize(config.batch_size);
  for (int it = 0; it < config.iterations; ++it) {
    batch.x1 = standard_normal(data.dim(), config.batch_size, rng);
    for (Eigen::Index i = 0; i < batch.t.size(); ++i) batch.t(i) = unit(rng);
    grads.set_zero();
    double loss = 0.0;
    try {
      loss = fm_loss(model, batch, &grads);
    } catch (const NumericalError& e) {
      throw NumericalError("train_teacher diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(loss)) {
      throw NumericalError("train_teacher diverged at iteration " + std::to_string(it));
    }
    history.push_back({it, loss});
    nn::optimizer_step(model.params(), grads, opt);
  }
  return TeacherTrainResult{std::move(model), std::move(history)};
}

Matrix euler_step(const VelocityField& field, const Matrix& x, double t_from, double t_to) {
  if (x.rows() != field.dim()) throw UsageError("euler_step: dimension mismatch");
  if (!(t_from >= 0.0 && t_from <= 1.0 && t_to >= 0.0 && t_to <= 1.0)) {
    throw UsageError("euler_step: times must lie in [0, 1]");
  }
  return x + (t_to - t_from) * field.velocity(x, t_from);
}

Matrix integrate(const VelocityField& field, const Matrix& x, const TimeGrid& grid, int from, int to) {
  if (from < to || to < 0 || from > grid.steps()) throw UsageError("integrate: invalid index range");
  Matrix state = x;
  for (int j = from; j > to; --j) {
    state = euler_step(field, state, grid.time(j), grid.time(j - 1));
    if (!state.allFinite()) {
      throw NumericalError("denoise: non-finite state at step " + std::to_string(j - 1));
    }
  }
  return state;
}

std::vector<Matrix> denoise(const VelocityField& field, const Matrix& x1, const TimeGrid& grid) {
  if (x1.rows() != field.dim()) throw UsageError("denoise: dimension mismatch");
  const int n = grid.steps();
  std::vector<Matrix> states(static_cast<std::size_t>(n) + 1);
  states[static_cast<std::size_t>(n)] = x1;
  for (int j = n; j > 0; --j) {
    states[static_cast<std::size_t>(j) - 1] = integrate(field, states[static_cast<std::size_t>(j)], grid, j, j - 1);
  }
  return states;
}

Matrix denoise_path(const VelocityField& field, const Vector& x1, const TimeGrid& grid) {
  const auto states = denoise(field, Matrix(x1), grid);
  Matrix path(x1.size(), grid.steps() + 1);
  for (std::size_t j = 0; j < states.size(); ++j) path.col(static_cast<Eigen::Index>(j)) = states[j].col(0);
  return path;
}

}  // namespace flowdistill::flow
