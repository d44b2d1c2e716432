#pragma once

#include <vector>

#include "flowdistill/flow.hpp"

namespace flowdistill::distill {

/// m + 1 key timesteps t'_k = k / m placed on a uniform n-step grid.
class KeySchedule {
 public:
  /// Throws ConfigError unless m >= 1 and m divides n.
  KeySchedule(int grid_steps, int intervals);

  [[nodiscard]] int intervals() const noexcept { return m_; }
  [[nodiscard]] int grid_steps() const noexcept { return n_; }
  /// t'_k for k in [0, m].
  [[nodiscard]] double time(int k) const;
  /// Grid index j with t_j == t'_k.
  [[nodiscard]] int grid_index(int k) const;
  /// Key times in descending order t'_m = 1, ..., t'_0 = 0.
  [[nodiscard]] std::vector<double> times_descending() const;

  friend bool operator==(const KeySchedule&, const KeySchedule&) = default;

 private:
  int n_;
  int m_;
};

KeySchedule make_key_schedule(int n, int m);

}  // namespace flowdistill::distill
