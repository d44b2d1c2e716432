#include "flowdistill/distill.hpp"

#include <cmath>
#include <string>

namespace flowdistill::distill {

LatentQueues::LatentQueues(int intervals, std::size_t capacity)
    : queues_(static_cast<std::size_t>(intervals) + 1), capacity_(capacity) {
  if (intervals < 1) throw ConfigError("LatentQueues: m must be >= 1");
  if (capacity_ < 1) throw ConfigError("LatentQueues: capacity must be >= 1");
}

void LatentQueues::push(int k, QueueEntry entry) {
  if (k < 0 || k > intervals()) throw UsageError("LatentQueues::push: queue index out of range");
  if (entry.key_index != k) throw UsageError("LatentQueues::push: entry tagged for a different key index");
  if (entry.real_keys.size() != static_cast<std::size_t>(intervals()) + 1) {
    throw UsageError("LatentQueues::push: entry must carry m+1 real key latents");
  }
  auto& q = queues_[static_cast<std::size_t>(k)];
  if (q.size() >= capacity_) q.pop_front();
  q.push_back(std::move(entry));
}

std::optional<QueueEntry> LatentQueues::pop(int k) {
  if (k < 0 || k > intervals()) throw UsageError("LatentQueues::pop: queue index out of range");
  auto& q = queues_[static_cast<std::size_t>(k)];
  if (q.empty()) return std::nullopt;
  QueueEntry e = std::move(q.front());
  q.pop_front();
  return e;
}

std::size_t LatentQueues::size(int k) const { return queue(k).size(); }

std::size_t LatentQueues::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& q : queues_) n += q.size();
  return n;
}

std::vector<std::size_t> LatentQueues::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& q : queues_) out.push_back(q.size());
  return out;
}

const std::deque<QueueEntry>& LatentQueues::queue(int k) const {
  if (k < 0 || k > intervals()) throw UsageError("LatentQueues: queue index out of range");
  return queues_[static_cast<std::size_t>(k)];
}

void DistillConfig::validate(const nn::Architecture& arch) const {
  (void)KeySchedule(n, m);
  if (!(lambda_adv >= 0.0) || !std::isfinite(lambda_adv)) throw ConfigError("distill: lambda_adv must be >= 0");
  if (!(student_lr > 0.0) || !(head_lr > 0.0)) throw ConfigError("distill: learning rates must be > 0");
  if (traj_batch < 1 || adv_batch < 1) throw ConfigError("distill: batch sizes must be >= 1");
  if (rounds < 0) throw ConfigError("distill: rounds must be >= 0");
  if (queue_capacity < static_cast<std::size_t>(adv_batch)) {
    throw ConfigError("distill: queue_capacity must be >= adv_batch");
  }
  if (real_source == RealLatentSource::Fresh && adv_batch > traj_batch) {
    throw ConfigError("distill: fresh real latents need adv_batch <= traj_batch");
  }
  taps.value_or(adversarial::FeatureTapConfig::defaults_for(arch)).validate(arch);
}

double traj_loss(const nn::VelocityModel& student, const std::vector<Matrix>& keys,
                 const KeySchedule& schedule, int k, nn::ParamSet* grads) {
  const int m = schedule.intervals();
  if (k < 0 || k > m - 1) throw UsageError("traj_loss: k must lie in [0, m-1]");
  if (keys.size() != static_cast<std::size_t>(m) + 1) throw UsageError("traj_loss: need m+1 key batches");
  const Matrix& start = keys[static_cast<std::size_t>(k) + 1];
  const Matrix& end = keys[static_cast<std::size_t>(k)];
  const double t_start = schedule.time(k + 1);
  const double t_end = schedule.time(k);
  const Matrix target = (end - start) / (t_end - t_start);
  return nn::velocity_regression_loss(student, start, Vector::Constant(start.cols(), t_start), target, grads);
}

double traj_loss(const nn::VelocityModel& student, const std::vector<Vector>& keys_descending,
                 const KeySchedule& schedule, int k) {
  const int m = schedule.intervals();
  if (keys_descending.size() != static_cast<std::size_t>(m) + 1) throw UsageError("traj_loss: need m+1 keys");
  std::vector<Matrix> keys(keys_descending.size());
  for (int i = 0; i <= m; ++i) keys[static_cast<std::size_t>(m - i)] = keys_descending[static_cast<std::size_t>(i)];
  return traj_loss(student, keys, schedule, k);
}

DistillState initial_state(const nn::VelocityModel& teacher, const DistillConfig& config) {
  config.validate(teacher.architecture());
  const int head_count = config.single_head ? 1 : config.m;
  std::vector<adversarial::ProjectionHead> heads;
  std::vector<nn::OptimizerState> head_opts;
  for (int k = 0; k < head_count; ++k) {
    heads.emplace_back(k, teacher.architecture().hidden,
                       derive_seed(derive_seed(config.seed, "distill.head"), static_cast<std::uint64_t>(k)));
    head_opts.push_back(nn::make_adam(heads.back().params(), nn::AdamConfig{.lr = config.head_lr}));
  }
  nn::VelocityModel student = teacher;
  auto student_opt = nn::make_adam(student.params(), nn::AdamConfig{.lr = config.student_lr});
  return DistillState{config,
                      0,
                      std::move(student),
                      std::move(student_opt),
                      std::move(heads),
                      std::move(head_opts),
                      LatentQueues(config.m, config.queue_capacity),
                      Rng(derive_seed(config.seed, "distill.trajectories")),
                      Rng(derive_seed(config.seed, "distill.noise")),
                      {}};
}

Distiller::Distiller(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store, DistillState state)
    : teacher_(teacher),
      store_(store),
      schedule_(state.config.n, state.config.m),
      taps_(state.config.taps.value_or(adversarial::FeatureTapConfig::defaults_for(teacher.architecture()))),
      state_(std::move(state)),
      student_grads_(state_.student.params().zeros_like()),
      adv_grads_(state_.student.params().zeros_like()) {
  state_.config.validate(teacher.architecture());
  if (store_.size() == 0) throw ConfigError("distill: trajectory store is empty");
  if (store_.metadata().steps != state_.config.n) {
    throw ConfigError("distill: store grid has n = " + std::to_string(store_.metadata().steps) +
                      " but config n = " + std::to_string(state_.config.n));
  }
  if (store_.dim() != teacher.dim()) throw ConfigError("distill: store and teacher dimensions differ");
  if (!(state_.student.architecture() == teacher.architecture())) {
    throw ConfigError("distill: student and teacher architectures differ");
  }
}

std::vector<Vector> Distiller::real_keys_of(std::size_t trajectory) const {
  std::vector<Vector> keys;
  for (int k = 0; k <= schedule_.intervals(); ++k) keys.push_back(store_[trajectory].states.col(schedule_.grid_index(k)));
  return keys;
}

void Distiller::run_round() {
  const auto& cfg = state_.config;
  const int m = cfg.m;
  std::uniform_int_distribution<std::size_t> pick(0, store_.size() - 1);
  std::vector<std::size_t> sampled(static_cast<std::size_t>(cfg.traj_batch));
  std::vector<Matrix> keys(static_cast<std::size_t>(m) + 1);

  for (int k = m - 1; k >= 0; --k) {
    MetricsRow row;
    row.round = state_.rounds_done;
    row.k = k;

    for (auto& idx : sampled) idx = pick(state_.traj_rng);
    keys[static_cast<std::size_t>(k)] = store_.gather(sampled, schedule_.grid_index(k));
    keys[static_cast<std::size_t>(k) + 1] = store_.gather(sampled, schedule_.grid_index(k + 1));
    student_grads_.set_zero();
    try {
      row.traj_loss = traj_loss(state_.student, keys, schedule_, k, &student_grads_);
    } catch (const NumericalError& e) {
      throw NumericalError("distill: non-finite loss in phase traj, k = " + std::to_string(k) + ", round " +
                           std::to_string(state_.rounds_done) + ": " + e.what());
    }
    if (!std::isfinite(row.traj_loss) || !student_grads_.all_finite()) {
      throw NumericalError("distill: non-finite loss in phase traj, k = " + std::to_string(k) +
                           ", round " + std::to_string(state_.rounds_done));
    }
    if (cfg.adversarial_enabled()) adversarial_update(k, sampled, row);
    nn::optimizer_step(state_.student.params(), student_grads_, state_.student_opt);
    row.queue_sizes = state_.queues.sizes();
    state_.metrics.push_back(std::move(row));
  }
  state_.rounds_done += 1;
}

void Distiller::adversarial_update(int k, const std::vector<std::size_t>& sampled, MetricsRow& row) {
  const auto& cfg = state_.config;
  const int m = cfg.m;
  const int d = teacher_.dim();
  auto& queues = state_.queues;

  if (k == m - 1) {
    const Matrix z = standard_normal(d, cfg.adv_batch, state_.noise_rng);
    for (int c = 0; c < cfg.adv_batch; ++c) {
      const auto src = sampled[static_cast<std::size_t>(c) % sampled.size()];
      queues.push(m, QueueEntry{z.col(c), real_keys_of(src), src, m});
    }
  }

  std::vector<QueueEntry> popped;
  while (popped.size() < static_cast<std::size_t>(cfg.adv_batch)) {
    auto e = queues.pop(k + 1);
    if (!e) break;
    popped.push_back(std::move(*e));
  }
  if (popped.empty()) return;  // warm-up: Q_{k+1} has nothing yet

  const auto b = static_cast<Eigen::Index>(popped.size());
  Matrix gen_prev(d, b);
  Matrix real(d, b);
  for (Eigen::Index c = 0; c < b; ++c) {
    const auto& e = popped[static_cast<std::size_t>(c)];
    gen_prev.col(c) = e.generated;
    real.col(c) = cfg.real_source == RealLatentSource::Queued
                      ? e.real_keys[static_cast<std::size_t>(k)]
                      : store_[sampled[static_cast<std::size_t>(c) % sampled.size()]].states.col(schedule_.grid_index(k));
  }

  const std::size_t head_slot = cfg.single_head ? 0 : static_cast<std::size_t>(k);
  auto& head = state_.heads[head_slot];
  nn::ParamSet head_grads = head.params().zeros_like();
  adv_grads_.set_zero();
  adversarial::AdversarialStep step;
  try {
    step = adversarial::adversarial_step(state_.student, teacher_, head, gen_prev, real, schedule_.time(k + 1),
                                         schedule_.time(k), taps_, cfg.generator_loss, &adv_grads_,
                                         &head_grads);
  } catch (const NumericalError& e) {
    throw NumericalError("distill: non-finite loss in phase adv, k = " + std::to_string(k) + ", round " +
                         std::to_string(state_.rounds_done) + ": " + e.what());
  }
  if (!adv_grads_.all_finite() || !head_grads.all_finite()) {
    throw NumericalError("distill: non-finite gradient in phase adv, k = " + std::to_string(k) + ", round " +
                         std::to_string(state_.rounds_done));
  }

  for (Eigen::Index c = 0; c < b; ++c) {
    auto& e = popped[static_cast<std::size_t>(c)];
    e.generated = step.generated.col(c);
    e.key_index = k;
    queues.push(k, std::move(e));
  }

  student_grads_.add_scaled(adv_grads_, cfg.lambda_adv);
  head_grads.scale(cfg.lambda_adv);
  nn::optimizer_step(head.params(), head_grads, state_.head_opts[head_slot]);

  row.adv_applied = true;
  row.d_loss = step.d_loss;
  row.g_loss = step.g_loss;
  row.p_real = step.p_real;
  row.p_fake = step.p_fake;
}

void Distiller::run_until(int target_rounds) {
  while (state_.rounds_done < target_rounds) run_round();
}

DistillResult distill(const nn::VelocityModel& teacher, const trajstore::TrajectoryStore& store,
                      const DistillConfig& config) {
  Distiller distiller(teacher, store, initial_state(teacher, config));
  distiller.run_until(config.rounds);
  DistillState state = std::move(distiller).take_state();
  return DistillResult{std::move(state.student), std::move(state.heads), std::move(state.metrics)};
}

SampleResult sample_student(const VelocityField& student, const KeySchedule& schedule, const Matrix& z) {
  const CountingField counted(student);
  Matrix x = z;
  for (int k = schedule.intervals(); k > 0; --k) {
    x = flow::euler_step(counted, x, schedule.time(k), schedule.time(k - 1));
  }
  return SampleResult{std::move(x), counted.calls()};
}

}  // namespace flowdistill::distill
