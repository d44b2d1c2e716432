#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "flowdistill/adversarial.hpp"
#include "flowdistill/optimizer.hpp"
#include "flowdistill/rng.hpp"
#include "flowdistill/schedule.hpp"
#include "flowdistill/trajstore.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill::distill {

/// A student-generated latent at key index `key_index`, travelling with the
/// real key latents of the trajectory it was paired with.
struct QueueEntry {
  Vector generated;
  std::vector<Vector> real_keys;  // real_keys[k] is the trajectory state at t'_k
  std::size_t source = 0;
  int key_index = 0;
};

/// FIFO queues Q_0 ... Q_m with a per-queue capacity; a full queue evicts its oldest entry.
class LatentQueues {
 public:
  LatentQueues(int intervals, std::size_t capacity);

  /// Throws UsageError if `entry` is not tagged with k or has the wrong key count.
  void push(int k, QueueEntry entry);
  /// Oldest entry of Q_k; std::nullopt means the queue is still warming up.
  std::optional<QueueEntry> pop(int k);

  [[nodiscard]] int intervals() const noexcept { return static_cast<int>(queues_.size()) - 1; }
  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::size_t size(int k) const;
  [[nodiscard]] std::size_t total_size() const noexcept;
  [[nodiscard]] std::vector<std::size_t> sizes() const;
  [[nodiscard]] const std::deque<QueueEntry>& queue(int k) const;

 private:
  std::vector<std::deque<QueueEntry>> queues_;
  std::size_t capacity_;
};

/// Where the real latent compared against l^gen_{t'_k} comes from.
enum class RealLatentSource {
  Queued,  // the entry's paired trajectory
  Fresh,   // the trajectory sampled in the current k-iteration
};

struct DistillConfig {
  int m = 5;
  int n = 50;
  double lambda_adv = 0.1;
  double student_lr = 1e-4;
  double head_lr = 1e-4;
  int traj_batch = 128;
  int adv_batch = 64;
  int rounds = 1000;
  std::uint64_t seed = 0;
  std::optional<adversarial::FeatureTapConfig> taps;  // architecture defaults when empty
  std::size_t queue_capacity = 64;
  bool single_head = false;
  RealLatentSource real_source = RealLatentSource::Queued;
  adversarial::GeneratorLoss generator_loss = adversarial::GeneratorLoss::NonSaturating;

  /// Throws ConfigError on inconsistent values.
  void validate(const nn::Architecture& arch) const;
  [[nodiscard]] bool adversarial_enabled() const noexcept { return lambda_adv > 0.0; }
};

/// Squared error (mean over batch and dimensions) between the student's velocity at
/// l_{t'_{k+1}} and the key finite difference (l_{t'_k} - l_{t'_{k+1}}) / (t'_k - t'_{k+1}).
/// `keys[k]` is the d x B batch of latents at t'_k.
double traj_loss(const nn::VelocityModel& student, const std::vector<Matrix>& keys,
                 const KeySchedule& schedule, int k, nn::ParamSet* grads = nullptr);
/// Single trajectory, keys ordered t'_m ... t'_0 as returned by key_points.
double traj_loss(const nn::VelocityModel& student, const std::vector<Vector>& keys_descending,
                 const KeySchedule& schedule, int k);

struct MetricsRow {
  int round = 0;
  int k = 0;
  double traj_loss = 0.0;
  bool adv_applied = false;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double p_real = 0.0;
  double p_fake = 0.0;
  std::vector<std::size_t> queue_sizes;
};

/// Everything needed to continue a distillation run bit-for-bit.
struct DistillState {
  DistillConfig config;
  int rounds_done = 0;
  nn::VelocityModel student;
  nn::OptimizerState student_opt;
  std::vector<adversarial::ProjectionHead> heads;
  std::vector<nn::OptimizerState> head_opts;
  LatentQueues queues;
  Rng traj_rng;
  Rng noise_rng;
  std::vector<MetricsRow> metrics;
};

/// Fresh state: student copied from the teacher, heads freshly initialized.
DistillState initial_state(const nn::VelocityModel& teacher, const DistillConfig& config);

/// The distillation loop. Each round runs k = m-1 down to 0. The student takes
/// one optimizer step per k on the trajectory gradient plus, when lambda_adv > 0,
/// lambda_adv times the generator gradient from the queue-driven adversarial
/// pass, evaluated at the same parameters. Head H_k is stepped alongside.
class Distiller {
 public:
  Distiller(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store, DistillState state);

  void run_round();
  /// Runs rounds until `rounds_done == target`.
  void run_until(int target_rounds);

  [[nodiscard]] const DistillState& state() const noexcept { return state_; }
  [[nodiscard]] DistillState&& take_state() && noexcept { return std::move(state_); }
  [[nodiscard]] const KeySchedule& schedule() const noexcept { return schedule_; }

 private:
  void adversarial_update(int k, const std::vector<std::size_t>& sampled, MetricsRow& row);
  [[nodiscard]] std::vector<Vector> real_keys_of(std::size_t trajectory) const;

  const nn::VelocityModel& teacher_;
  const trajstore::TrajectoryStore& store_;
  KeySchedule schedule_;
  adversarial::FeatureTapConfig taps_;
  DistillState state_;
  nn::ParamSet student_grads_;
  nn::ParamSet adv_grads_;
};

struct DistillResult {
  nn::VelocityModel student;
  std::vector<adversarial::ProjectionHead> heads;
  std::vector<MetricsRow> metrics;
};

/// Runs `config.rounds` rounds from a fresh state.
DistillResult distill(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                      const DistillConfig& config);

struct SampleResult {
  Matrix x0;
  std::int64_t nfe = 0;  // velocity evaluations per sample
};

/// m Euler steps along the key times from z at t = 1 down to t = 0.
SampleResult sample_student(const VelocityField& student, const KeySchedule& schedule, const Matrix& z);

}  // namespace flowdistill::distill
