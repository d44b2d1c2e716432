#include "flowdistill/schedule.hpp"

#include <string>

namespace flowdistill::distill {

KeySchedule::KeySchedule(int grid_steps, int intervals) : n_(grid_steps), m_(intervals) {
  if (n_ < 1) throw ConfigError("KeySchedule: grid must have at least one step");
  if (m_ < 1) throw ConfigError("KeySchedule: m must be >= 1");
  if (n_ % m_ != 0) {
    throw ConfigError("KeySchedule: m = " + std::to_string(m_) + " does not divide n = " + std::to_string(n_));
  }
}

double KeySchedule::time(int k) const {
  if (k < 0 || k > m_) throw UsageError("KeySchedule: key index out of range");
  return static_cast<double>(k) / static_cast<double>(m_);
}

int KeySchedule::grid_index(int k) const {
  if (k < 0 || k > m_) throw UsageError("KeySchedule: key index out of range");
  return k * (n_ / m_);
}

std::vector<double> KeySchedule::times_descending() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m_) + 1);
  for (int k = m_; k >= 0; --k) out.push_back(time(k));
  return out;
}

KeySchedule make_key_schedule(int n, int m) { return KeySchedule(n, m); }

}  // namespace flowdistill::distill
