#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flowdistill/flow.hpp"
#include "flowdistill/schedule.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill::trajstore {

/// One teacher denoising path.
struct Trajectory {
  Matrix states;  // d x (n+1), column j holds the state at t_j
  std::uint64_t noise_seed = 0;
  std::uint64_t teacher_fingerprint = 0;

  [[nodiscard]] int steps() const noexcept { return static_cast<int>(states.cols()) - 1; }
  [[nodiscard]] Vector state(int j) const { return states.col(j); }
};

struct StoreMetadata {
  int version = 1;
  std::size_t count = 0;
  int steps = 0;
  int dim = 0;
  std::uint64_t teacher_fingerprint = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const StoreMetadata&, const StoreMetadata&) = default;
};

class TrajectoryStore {
 public:
  TrajectoryStore(StoreMetadata meta, std::vector<Trajectory> trajectories);

  [[nodiscard]] const StoreMetadata& metadata() const noexcept { return meta_; }
  [[nodiscard]] flow::TimeGrid grid() const { return flow::TimeGrid(meta_.steps); }
  [[nodiscard]] std::size_t size() const noexcept { return trajectories_.size(); }
  [[nodiscard]] int dim() const noexcept { return meta_.dim; }
  [[nodiscard]] const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }
  [[nodiscard]] std::span<const Trajectory> trajectories() const noexcept { return trajectories_; }

  /// d x N matrix of every trajectory's state at grid index j.
  [[nodiscard]] Matrix states_at(int j) const;
  /// d x |indices| matrix of the selected trajectories' states at grid index j.
  [[nodiscard]] Matrix gather(std::span<const std::size_t> indices, int j) const;

  friend bool operator==(const TrajectoryStore& a, const TrajectoryStore& b);

 private:
  StoreMetadata meta_;
  std::vector<Trajectory> trajectories_;
};

/// Seed of trajectory i's noise draw.
std::uint64_t noise_seed(std::uint64_t store_seed, std::size_t index);
/// The d-dimensional standard normal draw used as trajectory noise.
Vector noise_from_seed(int dim, std::uint64_t seed);

/// N teacher trajectories from independent seeded noise draws.
TrajectoryStore generate_store(const nn::VelocityModel& teacher, std::size_t count,
                               const flow::TimeGrid& grid, std::uint64_t seed);

/// Checks fingerprint, seeded first state and the Euler recurrence against `teacher`.
/// Throws IntegrityError on any violation.
void validate_store(const TrajectoryStore& store, const nn::VelocityModel& teacher,
                    double tolerance = 1e-9);

/// JSON Lines: one header object, then one record per trajectory.
void save_store(const TrajectoryStore& store, const std::filesystem::path& path);
/// Throws ParseError naming the line on malformed input; validates when `teacher` is given.
TrajectoryStore load_store(const std::filesystem::path& path, const nn::VelocityModel* teacher = nullptr);

/// States at the key times, ordered t'_m ... t'_0.
std::vector<Vector> key_points(const Trajectory& traj, const distill::KeySchedule& schedule);

}  // namespace flowdistill::trajstore
